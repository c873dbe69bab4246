#pragma once

#include <algorithm>
#include <memory>
#include <optional>

#include "sinkflow/space_kernel.hpp"

namespace sinkflow {

enum class MeasureMode { Eulerian, Lagrangian };

/// Probability measure on a finite support. Eulerian: variable weights on a
/// shared fixed point cloud. Lagrangian: uniform weights 1/n on owned,
/// movable particle positions.
class DiscreteMeasure {
  public:
    static DiscreteMeasure eulerian(std::shared_ptr<const DiscreteSpace> space,
                                    Vector weights);
    static DiscreteMeasure lagrangian(Matrix positions);

    MeasureMode mode() const { return mode_; }
    Eigen::Index size() const { return weights_.size(); }
    const Vector& weights() const { return weights_; }
    /// Support points, one per row (the space grid or the particles).
    const Matrix& support() const;
    const std::shared_ptr<const DiscreteSpace>& space() const { return space_; }
    const Matrix& positions() const { return positions_; }

    DiscreteMeasure with_weights(Vector weights) const;
    DiscreteMeasure with_positions(Matrix positions) const;

  private:
    DiscreteMeasure() = default;
    MeasureMode mode_ = MeasureMode::Eulerian;
    std::shared_ptr<const DiscreteSpace> space_;  // Eulerian only
    Matrix positions_;                            // Lagrangian only
    Vector weights_;
};

/// Schrödinger potential pair for OT_eps(mu, nu), normalized so that
/// <mu, f> = <nu, g>.
struct DualPotentials {
    Vector f;  // on the support of mu
    Vector g;  // on the support of nu
    bool normalized = false;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;  // sup-norm Schrödinger-system residual
};

struct SinkhornConfig {
    /// Sup-norm tolerance on potential updates; <= 0 selects the default
    /// 1e-9 * max(1, ||c||_inf).
    double tolerance = 0.0;
    int max_iter = 100000;
    std::optional<DualPotentials> warm_start;

    double resolve_tolerance(double cost_sup) const {
        return tolerance > 0.0 ? tolerance : 1e-9 * std::max(1.0, cost_sup);
    }
};

/// Self-transport potential f_mu with f_mu = T_eps(f_mu, mu).
struct SelfPotential {
    Vector f;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

struct OtValue {
    double value = 0.0;       // full dual expression, correction included
    double simplified = 0.0;  // <mu,f> + <nu,g>
    double gap = 0.0;         // |value - simplified|, convergence diagnostic
    DualPotentials potentials;
};

/// T_eps(f, mu) evaluated on target points: y_j -> -eps log sum_i a_i
/// exp((f_i - c(x_i, y_j))/eps), computed log-domain with max-shift.
/// `cost` has one row per support point of mu and one column per target.
Vector sinkhorn_map(const Vector& f, const Vector& weights, const Matrix& cost,
                    double epsilon);

/// Alternate the two Schrödinger-system equations until the sup-norm update is
/// below tolerance, then shift by the constant equalizing <mu,f> and <nu,g>.
DualPotentials solve_schrodinger(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                 double epsilon, const SinkhornConfig& cfg = {});

/// Averaged fixed-point iteration f <- (f + T_eps(f, mu))/2 for the
/// self-transport potential.
SelfPotential solve_self_potential(const DiscreteMeasure& mu, double epsilon,
                                   const SinkhornConfig& cfg = {});

OtValue ot_eps(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double epsilon,
               const SinkhornConfig& cfg = {});

double sinkhorn_divergence(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           double epsilon, const SinkhornConfig& cfg = {});

/// First variation of S_eps(., nu) at mu on the point cloud: f_{mu,nu} - f_mu
/// (Eulerian mode).
Vector grad_seps_weights(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                         double epsilon, const SinkhornConfig& cfg = {});

/// Per-particle gradients of x -> S_eps(mu(x), nu) for Lagrangian mu with the
/// squared Euclidean cost: potentials held fixed, the explicit dual objective
/// differentiated in the positions.
Matrix grad_seps_positions(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           double epsilon, const SinkhornConfig& cfg = {});

/// Same, from already-solved potentials (used by the SJKO inner loop to avoid
/// re-solving).
Matrix grad_seps_positions_at(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                              const DualPotentials& cross, const Vector& self_f,
                              double epsilon);

/// ||B(mu) - B(nu)||_{H_c} for measures on possibly different supports,
/// via the identity B(mu) = H_c[exp(f_mu/eps) mu].
double embedding_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                          double epsilon, const SinkhornConfig& cfg = {});

}  // namespace sinkflow
