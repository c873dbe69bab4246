#include "sinkflow/sjko.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace sinkflow {

Vector simplex_project(Vector v) {
    const Eigen::Index n = v.size();
    if (n == 0) throw EmptySupport("simplex_project: empty vector");
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[static_cast<std::size_t>(j)];
        const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - candidate > 0.0) theta = candidate;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

namespace {

// Full dual value of OT_eps from converged potentials, correction included.
double ot_value(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                const DualPotentials& pot, double epsilon) {
    const double simplified = mu.weights().dot(pot.f) + nu.weights().dot(pot.g);
    Matrix expo = -pairwise_squared_cost(mu.support(), nu.support());
    expo.rowwise() += pot.g.transpose();
    expo.colwise() += pot.f;
    expo /= epsilon;
    const double mass =
        (expo.array().exp() * (mu.weights() * nu.weights().transpose()).array()).sum();
    return simplified - epsilon * (mass - 1.0);
}

double ot_self_value(const DiscreteMeasure& mu, const Vector& f, double epsilon) {
    DualPotentials pot;
    pot.f = f;
    pot.g = f;
    return ot_value(mu, mu, pot, epsilon);
}

// One evaluation of the step functional at a candidate measure: Sinkhorn
// solves (warm-started), divergence value and the dual-potential difference.
struct StepEval {
    double objective = 0.0;   // 2 tau <mu,V> + S_eps(mu, prev)
    double divergence = 0.0;  // S_eps(mu, prev)
    DualPotentials cross;
    Vector self_f;
    bool sinkhorn_ok = true;
};

StepEval evaluate_candidate(const DiscreteMeasure& candidate, const DiscreteMeasure& prev,
                            double linear_term, double ot_prev_half, double epsilon,
                            const SjkoConfig& cfg, SjkoWarmState& warm) {
    StepEval ev;
    SinkhornConfig cross_cfg = cfg.sinkhorn;
    cross_cfg.warm_start = warm.cross;
    ev.cross = solve_schrodinger(candidate, prev, epsilon, cross_cfg);

    SinkhornConfig self_cfg = cfg.sinkhorn;
    if (warm.self_f) {
        DualPotentials seed;
        seed.f = *warm.self_f;
        self_cfg.warm_start = std::move(seed);
    }
    const SelfPotential self = solve_self_potential(candidate, epsilon, self_cfg);

    ev.self_f = self.f;
    ev.sinkhorn_ok = ev.cross.converged && self.converged;
    ev.divergence = ot_value(candidate, prev, ev.cross, epsilon) -
                    0.5 * ot_self_value(candidate, self.f, epsilon) - ot_prev_half;
    ev.objective = linear_term + ev.divergence;

    warm.cross = ev.cross;
    warm.self_f = self.f;
    return ev;
}

// Largest curvature of the local quadratic model of S_eps(., prev) at prev:
// power iteration on sigma -> eps (Id - K_mu^2)^{-1} H_mu[sigma] over
// mass-zero directions.
double estimate_lipschitz(const DiscreteMeasure& prev, double epsilon,
                          const SinkhornConfig& scfg) {
    const Eigen::Index n = prev.size();
    if (n < 2) return 1.0;
    auto kernel = GibbsKernel::on_space(prev.space(), epsilon);
    const SphereEmbedding b = embed(prev, kernel, scfg);
    const Vector a = b.measure_weights();
    const Matrix kmu = k_mu_matrix(b);
    Matrix A = Matrix::Identity(n, n) - kmu * kmu;
    A += Vector::Ones(n) * a.transpose();
    const Eigen::PartialPivLU<Matrix> lu(A);
    const Vector binv = b.values().cwiseInverse();

    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = (i % 2 == 0) ? 1.0 : -1.0;
    if (n % 2 == 1) v(n - 1) = 0.0;
    v.array() -= v.mean();
    v.normalize();

    double lambda = 1.0;
    for (int it = 0; it < 25; ++it) {
        Vector r = binv.cwiseProduct(kernel->apply(binv.cwiseProduct(v)));
        r.array() -= a.dot(r);
        Vector w = epsilon * lu.solve(r);
        w.array() -= w.mean();
        const double nw = w.norm();
        if (nw <= 0.0) break;
        lambda = v.dot(w);
        v = w / nw;
    }
    return std::max(std::abs(lambda), 1e-8);
}

}  // namespace

double sjko_objective(const DiscreteMeasure& candidate, const DiscreteMeasure& prev,
                      const Vector& v_on_support, double tau, double epsilon,
                      const SinkhornConfig& cfg) {
    if (v_on_support.size() != candidate.size()) {
        throw DimensionMismatch("sjko_objective: potential/support size mismatch");
    }
    return 2.0 * tau * candidate.weights().dot(v_on_support) +
           sinkhorn_divergence(candidate, prev, epsilon, cfg);
}

double sjko_objective(const DiscreteMeasure& candidate, const DiscreteMeasure& prev,
                      const Potential& v, double tau, double epsilon,
                      const SinkhornConfig& cfg) {
    return sjko_objective(candidate, prev, potential_values(v, candidate.support()), tau,
                          epsilon, cfg);
}

SjkoStepResult sjko_step_eulerian(const DiscreteMeasure& prev, const Vector& v,
                                  const SjkoConfig& cfg, SjkoWarmState* warm_in) {
    cfg.validate();
    if (prev.mode() != MeasureMode::Eulerian) {
        throw Error("sjko_step_eulerian: Eulerian measure required");
    }
    if (v.size() != prev.size()) {
        throw DimensionMismatch("sjko_step_eulerian: potential/grid size mismatch");
    }
    const double eps = cfg.epsilon;
    const double tau = cfg.tau;

    SjkoWarmState local;
    SjkoWarmState& warm = warm_in ? *warm_in : local;

    // S_eps(., prev) debiasing constant for this step.
    SinkhornConfig prev_cfg = cfg.sinkhorn;
    if (warm.prev_self_f) {
        DualPotentials seed;
        seed.f = *warm.prev_self_f;
        prev_cfg.warm_start = std::move(seed);
    }
    const SelfPotential prev_self = solve_self_potential(prev, eps, prev_cfg);
    warm.prev_self_f = prev_self.f;
    const double ot_prev_half = 0.5 * ot_self_value(prev, prev_self.f, eps);

    if (warm.lipschitz <= 0.0) warm.lipschitz = 1.2 * estimate_lipschitz(prev, eps, cfg.sinkhorn);
    double step_l = std::max(warm.lipschitz, 1e-8);

    const auto linear = [&](const Vector& a) { return 2.0 * tau * a.dot(v); };

    Vector x = prev.weights();
    DiscreteMeasure mu_x = prev;
    StepEval ev_x = evaluate_candidate(mu_x, prev, linear(x), ot_prev_half, eps, cfg, warm);

    SjkoDiagnostics diag;
    diag.converged = false;
    diag.objective_trace.push_back(ev_x.objective);

    // Optimality vector g = V + (f_cross - f_self)/(2 tau); stop when
    // g - <mu, g> >= -inner_tol entrywise.
    Vector gvec = v + (ev_x.cross.f - ev_x.self_f) / (2.0 * tau);
    double residual = (gvec.array() - x.dot(gvec)).minCoeff();

    Vector y = x;
    StepEval ev_y = ev_x;
    double t = 1.0;
    bool y_is_x = true;

    int it = 0;
    for (; it < cfg.inner_max_iter && residual < -cfg.inner_tol; ++it) {
        if (!y_is_x) {
            ev_y = evaluate_candidate(prev.with_weights(y), prev, linear(y), ot_prev_half,
                                      eps, cfg, warm);
        }
        const Vector grad_y = 2.0 * tau * v + ev_y.cross.f - ev_y.self_f;
        Vector x_new = simplex_project(y - grad_y / step_l);
        DiscreteMeasure mu_new = prev.with_weights(x_new);
        StepEval ev_new =
            evaluate_candidate(mu_new, prev, linear(x_new), ot_prev_half, eps, cfg, warm);

        if (ev_new.objective > ev_x.objective + 1e-12 * (1.0 + std::abs(ev_x.objective))) {
            // Objective increased: backtrack the step size and restart momentum.
            step_l *= 2.0;
            y = x;
            ev_y = ev_x;
            y_is_x = true;
            t = 1.0;
            continue;
        }

        // gradient-based restart (O'Donoghue-Candès): kill momentum when the
        // step turns against the gradient
        double t_new = cfg.accel ? 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t)) : 1.0;
        if (cfg.accel && grad_y.dot(x_new - x) > 0.0) {
            t = 1.0;
            t_new = 1.0;
        }
        y = simplex_project(x_new + ((t - 1.0) / t_new) * (x_new - x));
        y_is_x = false;
        t = t_new;
        x = std::move(x_new);
        mu_x = std::move(mu_new);
        ev_x = std::move(ev_new);
        diag.objective_trace.push_back(ev_x.objective);

        gvec = v + (ev_x.cross.f - ev_x.self_f) / (2.0 * tau);
        residual = (gvec.array() - x.dot(gvec)).minCoeff();
    }

    diag.inner_iterations = it;
    diag.converged = residual >= -cfg.inner_tol && ev_x.sinkhorn_ok;
    diag.optimality_residual = residual;
    diag.objective = ev_x.objective;
    diag.divergence_to_prev = ev_x.divergence;
    diag.step_size = 1.0 / step_l;
    warm.lipschitz = step_l;

    Vector raw_pressure = (x.dot(gvec) - gvec.array()).matrix();
    return SjkoStepResult{std::move(mu_x), make_pressure(std::move(raw_pressure), x), diag};
}

SjkoStepResult sjko_step_lagrangian(const DiscreteMeasure& prev, const Potential& v,
                                    const SjkoConfig& cfg, SjkoWarmState* warm_in) {
    cfg.validate();
    if (prev.mode() != MeasureMode::Lagrangian) {
        throw Error("sjko_step_lagrangian: Lagrangian measure required");
    }
    const double eps = cfg.epsilon;
    const double tau = cfg.tau;
    const double inv_n = 1.0 / static_cast<double>(prev.size());

    SjkoWarmState local;
    SjkoWarmState& warm = warm_in ? *warm_in : local;

    SinkhornConfig prev_cfg = cfg.sinkhorn;
    if (warm.prev_self_f) {
        DualPotentials seed;
        seed.f = *warm.prev_self_f;
        prev_cfg.warm_start = std::move(seed);
    }
    const SelfPotential prev_self = solve_self_potential(prev, eps, prev_cfg);
    warm.prev_self_f = prev_self.f;
    const double ot_prev_half = 0.5 * ot_self_value(prev, prev_self.f, eps);

    const auto linear = [&](const Matrix& pts) {
        return 2.0 * tau * inv_n * potential_values(v, pts).sum();
    };
    const auto gradient = [&](const DiscreteMeasure& mu, const StepEval& ev) -> Matrix {
        return 2.0 * tau * inv_n * potential_gradients(v, mu.positions()) +
               grad_seps_positions_at(mu, prev, ev.cross, ev.self_f, eps);
    };

    double step_l = warm.lipschitz > 0.0 ? warm.lipschitz : 4.0;

    Matrix x = prev.positions();
    DiscreteMeasure mu_x = prev;
    StepEval ev_x = evaluate_candidate(mu_x, prev, linear(x), ot_prev_half, eps, cfg, warm);
    Matrix grad_x = gradient(mu_x, ev_x);
    double grad_sup = grad_x.cwiseAbs().maxCoeff();

    SjkoDiagnostics diag;
    diag.objective_trace.push_back(ev_x.objective);

    Matrix y = x;
    StepEval ev_y = ev_x;
    Matrix grad_y = grad_x;
    bool y_is_x = true;
    double t = 1.0;

    int it = 0;
    for (; it < cfg.inner_max_iter && grad_sup > cfg.inner_tol; ++it) {
        if (!y_is_x) {
            DiscreteMeasure mu_y = prev.with_positions(y);
            ev_y = evaluate_candidate(mu_y, prev, linear(y), ot_prev_half, eps, cfg, warm);
            grad_y = gradient(mu_y, ev_y);
        }
        Matrix x_new = y - grad_y / step_l;
        DiscreteMeasure mu_new = prev.with_positions(x_new);
        StepEval ev_new =
            evaluate_candidate(mu_new, prev, linear(x_new), ot_prev_half, eps, cfg, warm);

        if (ev_new.objective > ev_x.objective + 1e-12 * (1.0 + std::abs(ev_x.objective))) {
            step_l *= 2.0;
            y = x;
            ev_y = ev_x;
            grad_y = grad_x;
            y_is_x = true;
            t = 1.0;
            continue;
        }

        const double t_new = cfg.accel ? 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t)) : 1.0;
        y = x_new + ((t - 1.0) / t_new) * (x_new - x);
        y_is_x = false;
        t = t_new;
        x = std::move(x_new);
        mu_x = std::move(mu_new);
        ev_x = std::move(ev_new);
        diag.objective_trace.push_back(ev_x.objective);
        grad_x = gradient(mu_x, ev_x);
        grad_sup = grad_x.cwiseAbs().maxCoeff();
    }

    diag.inner_iterations = it;
    diag.converged = grad_sup <= cfg.inner_tol && ev_x.sinkhorn_ok;
    diag.gradient_sup = grad_sup;
    diag.objective = ev_x.objective;
    diag.divergence_to_prev = ev_x.divergence;
    diag.step_size = 1.0 / step_l;
    warm.lipschitz = std::max(step_l * 0.9, 1e-8);

    return SjkoStepResult{std::move(mu_x), PressureVector{}, diag};
}

namespace {

FlowTrajectory run_sjko_impl(const DiscreteMeasure& mu0, const Potential* v_pot,
                             const Vector* v_grid, const SjkoConfig& cfg, double horizon) {
    cfg.validate();
    if (horizon <= 0.0) throw Error("run_sjko: horizon must be > 0");
    const int steps = static_cast<int>(std::ceil(horizon / cfg.tau - 1e-12));
    const bool eulerian = mu0.mode() == MeasureMode::Eulerian;

    Vector grid_v;
    if (eulerian) {
        grid_v = v_grid ? *v_grid : potential_values(*v_pot, mu0.support());
        if (grid_v.size() != mu0.size()) {
            throw DimensionMismatch("run_sjko: potential/grid size mismatch");
        }
    } else if (!v_pot) {
        throw Error("run_sjko: Lagrangian runs need a functional potential");
    }

    std::shared_ptr<const GibbsKernel> kernel;
    if (eulerian) kernel = GibbsKernel::on_space(mu0.space(), cfg.epsilon);

    FlowTrajectory traj;
    SjkoWarmState warm;

    const auto push_frame = [&](double time, const DiscreteMeasure& mu,
                                const PressureVector& pressure) {
        traj.times.push_back(time);
        traj.measures.push_back(mu);
        if (eulerian) {
            SinkhornConfig embed_cfg = cfg.sinkhorn;
            if (warm.self_f) {
                DualPotentials seed;
                seed.f = *warm.self_f;
                embed_cfg.warm_start = std::move(seed);
            }
            const SphereEmbedding b = embed(mu, kernel, embed_cfg);
            traj.energies.push_back(mu.weights().dot(grid_v));
            traj.hc_norm_residuals.push_back(std::abs(b.hc_norm() - 1.0));
            if (traj.states.empty()) {
                traj.speed_norms.push_back(0.0);
            } else {
                traj.speed_norms.push_back(hc_distance(b, traj.states.back()) / cfg.tau);
            }
            traj.states.push_back(b);
        } else {
            traj.energies.push_back(potential_values(*v_pot, mu.support()).mean());
            traj.hc_norm_residuals.push_back(0.0);
            if (traj.measures.size() == 1) {
                traj.speed_norms.push_back(0.0);
            } else {
                traj.speed_norms.push_back(
                    embedding_distance(mu, traj.measures[traj.measures.size() - 2],
                                       cfg.epsilon, cfg.sinkhorn) /
                    cfg.tau);
            }
        }
        traj.pressures.push_back(pressure);
    };

    push_frame(0.0, mu0, make_pressure(Vector::Zero(mu0.size()), mu0.weights()));

    DiscreteMeasure current = mu0;
    for (int k = 1; k <= steps; ++k) {
        SjkoStepResult step = eulerian ? sjko_step_eulerian(current, grid_v, cfg, &warm)
                                       : sjko_step_lagrangian(current, *v_pot, cfg, &warm);
        traj.all_converged = traj.all_converged && step.diag.converged;
        current = step.measure;
        push_frame(static_cast<double>(k) * cfg.tau, current, step.pressure);
    }
    return traj;
}

}  // namespace

FlowTrajectory run_sjko(const DiscreteMeasure& mu0, const Potential& v,
                        const SjkoConfig& cfg, double horizon) {
    return run_sjko_impl(mu0, &v, nullptr, cfg, horizon);
}

FlowTrajectory run_sjko(const DiscreteMeasure& mu0, const Vector& v_grid,
                        const SjkoConfig& cfg, double horizon) {
    if (mu0.mode() != MeasureMode::Eulerian) {
        throw Error("run_sjko: grid potentials require an Eulerian measure");
    }
    return run_sjko_impl(mu0, nullptr, &v_grid, cfg, horizon);
}

}  // namespace sinkflow
