#include "sinkflow/eot.hpp"

#include <cmath>
#include <limits>

namespace sinkflow {

namespace {

constexpr double kMassTolerance = 1e-12;

void validate_weights(const Vector& w) {
    if (w.size() == 0) throw EmptySupport("DiscreteMeasure: empty support");
    if ((w.array() < 0.0).any()) throw Error("DiscreteMeasure: negative weight");
    if (std::abs(w.sum() - 1.0) > kMassTolerance) {
        throw Error("DiscreteMeasure: weights must sum to 1");
    }
}

// log a_i with log 0 = -inf, so zero-weight atoms drop out of the logsumexp.
Vector log_weights(const Vector& w) {
    return w.array().log().matrix();
}

}  // namespace

DiscreteMeasure DiscreteMeasure::eulerian(std::shared_ptr<const DiscreteSpace> space,
                                          Vector weights) {
    if (!space) throw Error("DiscreteMeasure::eulerian: null space");
    if (weights.size() != space->size()) {
        throw DimensionMismatch("DiscreteMeasure::eulerian: weights/space size mismatch");
    }
    validate_weights(weights);
    DiscreteMeasure mu;
    mu.mode_ = MeasureMode::Eulerian;
    mu.space_ = std::move(space);
    mu.weights_ = std::move(weights);
    return mu;
}

DiscreteMeasure DiscreteMeasure::lagrangian(Matrix positions) {
    if (positions.rows() < 1) throw EmptySupport("DiscreteMeasure::lagrangian: no particles");
    DiscreteMeasure mu;
    mu.mode_ = MeasureMode::Lagrangian;
    mu.positions_ = std::move(positions);
    mu.weights_ = Vector::Constant(mu.positions_.rows(),
                                   1.0 / static_cast<double>(mu.positions_.rows()));
    return mu;
}

const Matrix& DiscreteMeasure::support() const {
    return mode_ == MeasureMode::Eulerian ? space_->points() : positions_;
}

DiscreteMeasure DiscreteMeasure::with_weights(Vector weights) const {
    if (mode_ != MeasureMode::Eulerian) {
        throw Error("DiscreteMeasure::with_weights: Lagrangian weights are fixed");
    }
    return eulerian(space_, std::move(weights));
}

DiscreteMeasure DiscreteMeasure::with_positions(Matrix positions) const {
    if (mode_ != MeasureMode::Lagrangian) {
        throw Error("DiscreteMeasure::with_positions: Eulerian positions are fixed");
    }
    if (positions.rows() != positions_.rows() || positions.cols() != positions_.cols()) {
        throw DimensionMismatch("DiscreteMeasure::with_positions: shape mismatch");
    }
    return lagrangian(std::move(positions));
}

Vector sinkhorn_map(const Vector& f, const Vector& weights, const Matrix& cost,
                    double epsilon) {
    if (epsilon <= 0.0) throw NonPositiveEpsilon("sinkhorn_map: epsilon must be > 0");
    if (f.size() != weights.size() || cost.rows() != f.size()) {
        throw DimensionMismatch("sinkhorn_map: support size mismatch");
    }
    if (weights.maxCoeff() <= 0.0) throw EmptySupport("sinkhorn_map: all weights are zero");

    const Vector logw = log_weights(weights);
    // S_ij = log a_i + (f_i - c(x_i, y_j))/eps, logsumexp over i per target j.
    Matrix s = -cost;
    s.colwise() += f;
    s /= epsilon;
    s.colwise() += logw;

    const Eigen::Index m = cost.cols();
    Vector out(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double shift = s.col(j).maxCoeff();
        out(j) = -epsilon * (shift + std::log((s.col(j).array() - shift).exp().sum()));
    }
    return out;
}

DualPotentials solve_schrodinger(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                 double epsilon, const SinkhornConfig& cfg) {
    if (mu.support().cols() != nu.support().cols()) {
        throw DimensionMismatch("solve_schrodinger: ambient dimensions differ");
    }
    const Matrix cost_mu_nu = pairwise_squared_cost(mu.support(), nu.support());
    const Matrix cost_nu_mu = cost_mu_nu.transpose();
    const double tol = cfg.resolve_tolerance(cost_mu_nu.size() > 0 ? cost_mu_nu.maxCoeff() : 0.0);

    DualPotentials pot;
    if (cfg.warm_start && cfg.warm_start->f.size() == mu.size() &&
        cfg.warm_start->g.size() == nu.size()) {
        pot.f = cfg.warm_start->f;
        pot.g = cfg.warm_start->g;
    } else {
        pot.f = Vector::Zero(mu.size());
        pot.g = Vector::Zero(nu.size());
    }

    double update = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < cfg.max_iter && update > tol; ++it) {
        Vector f_new = sinkhorn_map(pot.g, nu.weights(), cost_nu_mu, epsilon);
        Vector g_new = sinkhorn_map(f_new, mu.weights(), cost_mu_nu, epsilon);
        update = std::max((f_new - pot.f).cwiseAbs().maxCoeff(),
                          (g_new - pot.g).cwiseAbs().maxCoeff());
        pot.f = std::move(f_new);
        pot.g = std::move(g_new);
    }
    pot.iterations = it;
    pot.converged = update <= tol;
    pot.residual =
        std::max((pot.f - sinkhorn_map(pot.g, nu.weights(), cost_nu_mu, epsilon))
                     .cwiseAbs()
                     .maxCoeff(),
                 (pot.g - sinkhorn_map(pot.f, mu.weights(), cost_mu_nu, epsilon))
                     .cwiseAbs()
                     .maxCoeff());

    const double shift = 0.5 * (mu.weights().dot(pot.f) - nu.weights().dot(pot.g));
    pot.f.array() -= shift;
    pot.g.array() += shift;
    pot.normalized = true;
    return pot;
}

SelfPotential solve_self_potential(const DiscreteMeasure& mu, double epsilon,
                                   const SinkhornConfig& cfg) {
    const Matrix cost = pairwise_squared_cost(mu.support(), mu.support());
    const double tol = cfg.resolve_tolerance(cost.size() > 0 ? cost.maxCoeff() : 0.0);

    SelfPotential self;
    self.f = (cfg.warm_start && cfg.warm_start->f.size() == mu.size())
                 ? cfg.warm_start->f
                 : Vector::Zero(mu.size());

    double residual = std::numeric_limits<double>::infinity();
    double window_residual = residual;
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        const Vector mapped = sinkhorn_map(self.f, mu.weights(), cost, epsilon);
        residual = (mapped - self.f).cwiseAbs().maxCoeff();
        if (residual <= tol) {
            ++it;
            break;
        }
        // Relaxation 1/2 is the contractive choice for the symmetric problem;
        // fall back to a full step if a 64-iteration window shows stalling.
        if (it > 0 && it % 64 == 0) {
            if (residual > 0.9 * window_residual) {
                self.f = mapped;
                window_residual = residual;
                continue;
            }
            window_residual = residual;
        }
        self.f = 0.5 * (self.f + mapped);
    }
    self.iterations = it;
    self.residual = residual;
    self.converged = residual <= tol;
    return self;
}

namespace {

// eps * (<mu (x) nu, exp((f+g-c)/eps)> - 1), the dual correction term.
double dual_correction(const Vector& a, const Vector& f, const Vector& b, const Vector& g,
                       const Matrix& cost, double epsilon) {
    Matrix expo = -cost;
    expo.rowwise() += g.transpose();
    expo.colwise() += f;
    expo /= epsilon;
    const double mass = (expo.array().exp() * (a * b.transpose()).array()).sum();
    return epsilon * (mass - 1.0);
}

// Primal plan pi_ij = a_i b_j exp((f_i + g_j - c_ij)/eps).
Matrix primal_plan(const Vector& a, const Vector& f, const Vector& b, const Vector& g,
                   const Matrix& cost, double epsilon) {
    Matrix expo = -cost;
    expo.rowwise() += g.transpose();
    expo.colwise() += f;
    expo /= epsilon;
    return (expo.array().exp() * (a * b.transpose()).array()).matrix();
}

}  // namespace

OtValue ot_eps(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double epsilon,
               const SinkhornConfig& cfg) {
    OtValue out;
    out.potentials = solve_schrodinger(mu, nu, epsilon, cfg);
    out.simplified = mu.weights().dot(out.potentials.f) + nu.weights().dot(out.potentials.g);
    const Matrix cost = pairwise_squared_cost(mu.support(), nu.support());
    out.value = out.simplified - dual_correction(mu.weights(), out.potentials.f,
                                                 nu.weights(), out.potentials.g, cost, epsilon);
    out.gap = std::abs(out.value - out.simplified);
    return out;
}

namespace {

double ot_self(const DiscreteMeasure& mu, double epsilon, const SinkhornConfig& cfg,
               SelfPotential* self_out = nullptr) {
    const SelfPotential self = solve_self_potential(mu, epsilon, cfg);
    const Matrix cost = pairwise_squared_cost(mu.support(), mu.support());
    const double simplified = 2.0 * mu.weights().dot(self.f);
    const double value = simplified - dual_correction(mu.weights(), self.f, mu.weights(),
                                                      self.f, cost, epsilon);
    if (self_out) *self_out = self;
    return value;
}

}  // namespace

double sinkhorn_divergence(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           double epsilon, const SinkhornConfig& cfg) {
    SinkhornConfig self_cfg = cfg;
    self_cfg.warm_start.reset();
    return ot_eps(mu, nu, epsilon, cfg).value - 0.5 * ot_self(mu, epsilon, self_cfg) -
           0.5 * ot_self(nu, epsilon, self_cfg);
}

Vector grad_seps_weights(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                         double epsilon, const SinkhornConfig& cfg) {
    if (mu.mode() != MeasureMode::Eulerian) {
        throw Error("grad_seps_weights: Eulerian mode required");
    }
    const DualPotentials cross = solve_schrodinger(mu, nu, epsilon, cfg);
    SinkhornConfig self_cfg = cfg;
    self_cfg.warm_start.reset();
    const SelfPotential self = solve_self_potential(mu, epsilon, self_cfg);
    return cross.f - self.f;
}

Matrix grad_seps_positions_at(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                              const DualPotentials& cross, const Vector& self_f,
                              double epsilon) {
    const Matrix& x = mu.support();
    const Matrix& y = nu.support();

    // Primal plans recovered from the potentials.
    const Matrix plan_xy = primal_plan(mu.weights(), cross.f, nu.weights(), cross.g,
                                       pairwise_squared_cost(x, y), epsilon);
    const Matrix plan_xx = primal_plan(mu.weights(), self_f, mu.weights(), self_f,
                                       pairwise_squared_cost(x, x), epsilon);

    // Envelope theorem for grad_x S_eps: potentials fixed, differentiate the
    // cost terms. With c = ||.||^2 this is 2 sum_j pi_ij (x_i - y_j) for the
    // cross term and the same with the debiasing self plan.
    const Vector row_xy = plan_xy.rowwise().sum();
    const Vector row_xx = plan_xx.rowwise().sum();
    return 2.0 * ((row_xy - row_xx).asDiagonal() * x - plan_xy * y + plan_xx * x);
}

Matrix grad_seps_positions(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           double epsilon, const SinkhornConfig& cfg) {
    if (mu.mode() != MeasureMode::Lagrangian) {
        throw Error("grad_seps_positions: Lagrangian mode required");
    }
    const DualPotentials cross = solve_schrodinger(mu, nu, epsilon, cfg);
    SinkhornConfig self_cfg = cfg;
    self_cfg.warm_start.reset();
    const SelfPotential self = solve_self_potential(mu, epsilon, self_cfg);
    return grad_seps_positions_at(mu, nu, cross, self.f, epsilon);
}

double embedding_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                          double epsilon, const SinkhornConfig& cfg) {
    SinkhornConfig self_cfg = cfg;
    self_cfg.warm_start.reset();
    const SelfPotential f_mu = solve_self_potential(mu, epsilon, self_cfg);
    const SelfPotential f_nu = solve_self_potential(nu, epsilon, self_cfg);

    // B(mu) = H_c[exp(f_mu/eps) mu]; preimage masses exp(log a_i + f_i/eps).
    const Vector m_mu =
        (log_weights(mu.weights()).array() + f_mu.f.array() / epsilon).exp().matrix();
    const Vector m_nu =
        (log_weights(nu.weights()).array() + f_nu.f.array() / epsilon).exp().matrix();

    const auto gram = [epsilon](const Matrix& a, const Matrix& b) -> Matrix {
        return (-pairwise_squared_cost(a, b) / epsilon).array().exp().matrix();
    };
    const double d2 = m_mu.dot(gram(mu.support(), mu.support()) * m_mu) +
                      m_nu.dot(gram(nu.support(), nu.support()) * m_nu) -
                      2.0 * m_mu.dot(gram(mu.support(), nu.support()) * m_nu);
    return std::sqrt(std::max(0.0, d2));
}

}  // namespace sinkflow
