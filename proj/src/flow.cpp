#include "sinkflow/flow.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <vector>

namespace sinkflow {

namespace {

double complementarity_residual(const Vector& m, const Vector& w) {
    return m.cwiseMin(w).cwiseAbs().maxCoeff();
}

}  // namespace

namespace {

// One PGS + semismooth-Newton pass at a fixed matrix; no exception on
// failure, the caller decides.
LcpSolution lcp_pass(const Matrix& m_matrix, const Vector& q, double tol,
                     const LcpOptions& opts, const Vector* warm_start,
                     bool least_index_rule = false, int max_rounds = 400) {
    const Eigen::Index n = q.size();
    LcpSolution sol;
    sol.m = (warm_start && warm_start->size() == n) ? Vector(warm_start->cwiseMax(0.0))
                                                    : Vector(Vector::Zero(n));
    sol.w = m_matrix * sol.m + q;
    sol.residual = complementarity_residual(sol.m, sol.w);

    // Row access is the hot path of the sweeps; work on the transpose so each
    // row dot product is contiguous.
    const Matrix mt = m_matrix.transpose();
    const int pgs_block = 25;

    for (int round = 0; round < max_rounds && sol.residual > tol; ++round) {
        // Projected Gauss-Seidel with over-relaxation. The sweep order is
        // fixed; determinism is part of the contract.
        for (int s = 0; s < pgs_block && sol.sweeps < opts.max_iter; ++s, ++sol.sweeps) {
            double sweep_res = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mii = mt(i, i);
                if (mii <= 0.0) continue;
                const double r = mt.col(i).dot(sol.m) + q(i);
                sweep_res = std::max(sweep_res, std::abs(std::min(sol.m(i), r)));
                sol.m(i) = std::max(0.0, sol.m(i) - opts.over_relaxation * r / mii);
            }
            if (sweep_res <= 0.1 * tol) break;
        }

        // Semismooth Newton polish on min(m, Mm+q): the active set starts
        // from the min comparison at the PGS iterate, the free block is
        // solved with a rank-revealing decomposition (Gibbs kernels are
        // numerically low-rank) and single indices pivot between the sets.
        sol.w = m_matrix * sol.m + q;
        std::vector<bool> active(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            active[static_cast<std::size_t>(i)] = sol.m(i) <= sol.w(i);
        }
        const int pivot_budget = opts.newton_max + 4 * static_cast<int>(n);
        for (int k = 0; k < pivot_budget; ++k) {
            std::vector<Eigen::Index> free;
            free.reserve(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!active[static_cast<std::size_t>(i)]) free.push_back(i);
            }
            Vector m_new = Vector::Zero(n);
            if (!free.empty()) {
                const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
                Matrix mff(nf, nf);
                Vector qf(nf);
                for (Eigen::Index a = 0; a < nf; ++a) {
                    qf(a) = q(free[static_cast<std::size_t>(a)]);
                    for (Eigen::Index b = 0; b < nf; ++b) {
                        mff(a, b) = m_matrix(free[static_cast<std::size_t>(a)],
                                             free[static_cast<std::size_t>(b)]);
                    }
                }
                // minimum-norm solution: stable on rank-deficient blocks
                Eigen::CompleteOrthogonalDecomposition<Matrix> cod(std::move(mff));
                const Vector xf = cod.solve(-qf);
                for (Eigen::Index a = 0; a < nf; ++a) {
                    m_new(free[static_cast<std::size_t>(a)]) = xf(a);
                }
            }
            ++sol.newton_steps;

            // pivot selection: most-negative by default, least-index as the
            // anti-cycling alternative the caller can request
            const double neg_gate = -1e-12 * std::max(1.0, m_new.cwiseAbs().maxCoeff());
            Eigen::Index pivot = -1;
            double worst = neg_gate;
            for (const Eigen::Index i : free) {
                if (m_new(i) < worst) {
                    pivot = i;
                    if (least_index_rule) break;
                    worst = m_new(i);
                }
            }
            if (pivot >= 0) {
                active[static_cast<std::size_t>(pivot)] = true;
                continue;
            }

            sol.m = m_new.cwiseMax(0.0);
            sol.w = m_matrix * sol.m + q;
            sol.residual = complementarity_residual(sol.m, sol.w);
            if (sol.residual <= tol) break;

            pivot = -1;
            worst = -tol;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (active[static_cast<std::size_t>(i)] && sol.w(i) < worst) {
                    pivot = i;
                    if (least_index_rule) break;
                    worst = sol.w(i);
                }
            }
            if (pivot < 0) break;  // residual from the block solve itself
            active[static_cast<std::size_t>(pivot)] = false;
        }

        sol.w = m_matrix * sol.m + q;
        sol.residual = complementarity_residual(sol.m, sol.w);
        if (sol.sweeps >= opts.max_iter) break;
    }

    sol.converged = sol.residual <= tol;
    return sol;
}

}  // namespace

LcpSolution solve_lcp(const Matrix& m_matrix, const Vector& q, const LcpOptions& opts,
                      const Vector* warm_start) {
    const Eigen::Index n = q.size();
    if (m_matrix.rows() != n || m_matrix.cols() != n) {
        throw DimensionMismatch("solve_lcp: M/q size mismatch");
    }
    const double tol = opts.resolve_tolerance(q);

    // Direct attempt first: cheap and exact on well-conditioned instances.
    LcpSolution sol = lcp_pass(m_matrix, q, tol, opts, warm_start);
    if (sol.converged) return sol;

    // Gibbs kernels are numerically low-rank, which degenerates the active
    // set; proximal-point outer loop: each Tikhonov-shifted subproblem is
    // well-conditioned, and the fixed point m = LCP(M + dI, q - d m) solves
    // the original complementarity system.
    const double diag_scale = m_matrix.diagonal().cwiseAbs().maxCoeff();
    double delta = 1e-6 * diag_scale;
    Matrix shifted = m_matrix;
    shifted.diagonal().array() += delta;
    // restart from the caller's warm start, not the failed pass's iterate
    Vector m = (warm_start && warm_start->size() == n) ? Vector(warm_start->cwiseMax(0.0))
                                                       : Vector(sol.m);
    int total_sweeps = sol.sweeps;
    int total_newton = sol.newton_steps;
    double prev_residual = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < 300; ++outer) {
        // alternate the pivot rule between stalled rounds
        LcpSolution inner =
            lcp_pass(shifted, q - delta * m, 0.1 * tol, opts, &m, outer % 2 == 1);
        total_sweeps += inner.sweeps;
        total_newton += inner.newton_steps;
        m = inner.m;
        sol.m = m;
        sol.w = m_matrix * m + q;
        sol.residual = complementarity_residual(sol.m, sol.w);
        sol.sweeps = total_sweeps;
        sol.newton_steps = total_newton;
        if (std::getenv("SINKFLOW_LCP_DEBUG") && (outer < 3 || outer % 25 == 0)) {
            std::fprintf(stderr,
                         "prox outer %d: n=%ld |q|=%.6e |m_warm|=%.6e inner_res=%.3e "
                         "inner_conv=%d sweeps=%d newton=%d orig_res=%.3e tol=%.3e\n",
                         outer, (long)n, q.cwiseAbs().maxCoeff(), m.cwiseAbs().maxCoeff(),
                         inner.residual, (int)inner.converged, inner.sweeps,
                         inner.newton_steps, sol.residual, tol);
        }
        if (sol.residual <= tol) {
            sol.converged = true;
            return sol;
        }
        // With the prox-identified active set as warm start, a light
        // unshifted polish often lands exactly; try it periodically.
        if (outer % 4 == 3 || sol.residual <= 100.0 * tol) {
            LcpSolution direct = lcp_pass(m_matrix, q, tol, opts, &m, outer % 8 >= 4, 2);
            total_sweeps += direct.sweeps;
            total_newton += direct.newton_steps;
            if (direct.converged) {
                direct.sweeps = total_sweeps;
                direct.newton_steps = total_newton;
                return direct;
            }
        }
        // the residual floor scales with delta: shrink it once progress stalls
        if (sol.residual > 0.5 * prev_residual && delta > 1e-12 * diag_scale) {
            delta *= 0.02;
            shifted = m_matrix;
            shifted.diagonal().array() += delta;
        }
        prev_residual = sol.residual;
    }

    throw LcpNotConverged("solve_lcp: residual " + std::to_string(sol.residual) +
                              " above tolerance " + std::to_string(tol),
                          sol.residual);
}

LcpSolution solve_lcp(const Matrix& m_matrix, const Vector& q, double tol, int max_iter) {
    LcpOptions opts;
    opts.tolerance = tol;
    opts.max_iter = max_iter;
    return solve_lcp(m_matrix, q, opts);
}

FlowStepper::FlowStepper(const PotentialOperator& op, double tau, LcpOptions opts)
    : op_(op), tau_(tau), opts_(opts) {
    if (tau_ <= 0.0) throw Error("FlowStepper: tau must be > 0");
    m_ = op_.kernel()->matrix() + tau_ * op_.wk_matrix();
}

ResolventStep FlowStepper::step(const SphereEmbedding& b_prev, const Vector* warm) const {
    const Vector q = -b_prev.values();
    LcpSolution lcp = solve_lcp(m_, q, opts_, warm ? warm : &b_prev.preimage());
    Vector raw_b = op_.kernel()->apply(lcp.m);
    const double norm_pre = std::sqrt(std::max(0.0, raw_b.dot(lcp.m)));

    // p = (b_prev - (K + tau W K) m)/tau = -w/tau, nonpositive up to LCP
    // tolerance; its support mask comes from the new measure.
    Vector raw_p = -lcp.w / tau_;
    SphereEmbedding state = SphereEmbedding::from_preimage(lcp.m, op_.kernel(), true);
    PressureVector pressure = make_pressure(std::move(raw_p), state.measure_weights());
    return ResolventStep{std::move(state), std::move(pressure), std::move(raw_b),
                         lcp.m,            1.0 - norm_pre,      std::move(lcp)};
}

ResolventStep resolvent_step(const SphereEmbedding& b_prev, const PotentialOperator& op,
                             double tau, const LcpOptions& opts) {
    return FlowStepper(op, tau, opts).step(b_prev);
}

namespace {

SphereEmbedding sanitize_initial_state(const SphereEmbedding& b0) {
    const double cone = b0.preimage().minCoeff();
    if (cone < -1e-6) {
        throw NotInCone("run_flow: initial state leaves the cone by " + std::to_string(cone));
    }
    if (cone < 0.0) {
        return SphereEmbedding::from_preimage(b0.preimage().cwiseMax(0.0), b0.kernel(), true);
    }
    return b0;
}

}  // namespace

FlowTrajectory run_flow(const SphereEmbedding& b0, const PotentialOperator& op, double tau,
                        double horizon, const LcpOptions& opts) {
    if (horizon <= 0.0) throw Error("run_flow: horizon must be > 0");
    const int steps = static_cast<int>(std::ceil(horizon / tau - 1e-12));
    const FlowStepper stepper(op, tau, opts);
    const bool has_space = op.kernel()->space() != nullptr;

    FlowTrajectory traj;
    SphereEmbedding state = sanitize_initial_state(b0);

    const auto push_frame = [&](double time, const SphereEmbedding& b,
                                const PressureVector& pressure, double speed) {
        traj.times.push_back(time);
        traj.states.push_back(b);
        if (has_space) traj.measures.push_back(unembed(b));
        traj.energies.push_back(op.energy(b));
        traj.pressures.push_back(pressure);
        traj.speed_norms.push_back(speed);
        traj.hc_norm_residuals.push_back(std::abs(b.hc_norm() - 1.0));
    };

    push_frame(0.0, state, make_pressure(Vector::Zero(state.size()), state.measure_weights()),
               0.0);
    for (int k = 1; k <= steps; ++k) {
        ResolventStep step = stepper.step(state, &state.preimage());
        traj.all_converged = traj.all_converged && step.lcp.converged;
        const double speed = hc_distance(step.state, state) / tau;
        state = step.state;
        push_frame(static_cast<double>(k) * tau, state, step.pressure, speed);
    }
    return traj;
}

std::vector<double> nonexpansiveness_check(const SphereEmbedding& b0_a,
                                           const SphereEmbedding& b0_b,
                                           const PotentialOperator& op, double tau,
                                           double horizon, const LcpOptions& opts) {
    if (b0_a.kernel() != b0_b.kernel()) {
        throw Error("nonexpansiveness_check: states must share the kernel");
    }
    const int steps = static_cast<int>(std::ceil(horizon / tau - 1e-12));
    const FlowStepper stepper(op, tau, opts);

    SphereEmbedding a = sanitize_initial_state(b0_a);
    SphereEmbedding b = sanitize_initial_state(b0_b);
    std::vector<double> series;
    series.reserve(static_cast<std::size_t>(steps) + 1);
    series.push_back(hc_distance(a, b));
    for (int k = 0; k < steps; ++k) {
        a = stepper.step(a, &a.preimage()).state;
        b = stepper.step(b, &b.preimage()).state;
        const double d = hc_distance(a, b);
        if (d > series.back() + 1e-6) {
            throw Error("nonexpansiveness_check: distance increased by " +
                        std::to_string(d - series.back()) + " at step " + std::to_string(k + 1));
        }
        series.push_back(d);
    }
    return series;
}

std::vector<TauErrorRow> compare_sjko_to_flow(const DiscreteMeasure& mu0, const Vector& v,
                                              const std::vector<double>& taus, double horizon,
                                              double reference_tau, SjkoConfig cfg,
                                              const LcpOptions& lcp_opts) {
    if (mu0.mode() != MeasureMode::Eulerian) {
        throw Error("compare_sjko_to_flow: Eulerian initial measure required");
    }
    auto kernel = GibbsKernel::on_space(mu0.space(), cfg.epsilon);
    const PotentialOperator op(v, kernel);
    const SphereEmbedding b0 = embed(mu0, kernel, cfg.sinkhorn);
    const FlowTrajectory ref = run_flow(b0, op, reference_tau, horizon, lcp_opts);

    std::vector<TauErrorRow> table;
    table.reserve(taus.size());
    for (const double tau : taus) {
        SjkoConfig run_cfg = cfg;
        run_cfg.tau = tau;
        run_cfg.scheme = MeasureMode::Eulerian;
        const FlowTrajectory sjko = run_sjko(mu0, v, run_cfg, horizon);

        double sup = 0.0;
        for (std::size_t j = 0; j < ref.size(); ++j) {
            const double t = ref.times[j];
            // piecewise-constant interpolation bbar_t = b_k on [k tau, (k+1) tau)
            std::size_t k = static_cast<std::size_t>(std::floor(t / tau + 1e-12));
            if (k >= sjko.states.size()) k = sjko.states.size() - 1;
            sup = std::max(sup, hc_distance(sjko.states[k], ref.states[j]));
        }
        table.push_back({tau, sup});
    }
    return table;
}

}  // namespace sinkflow
