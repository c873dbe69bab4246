#pragma once

#include "sinkflow/sjko.hpp"
#include "sinkflow/trajectory.hpp"

namespace sinkflow {

struct LcpOptions {
    double tolerance = 0.0;  // <= 0 selects 1e-10 * ||q||_inf
    int max_iter = 20000;    // projected Gauss-Seidel sweep budget
    double over_relaxation = 1.3;
    int newton_max = 50;

    double resolve_tolerance(const Vector& q) const {
        return tolerance > 0.0 ? tolerance : 1e-10 * q.cwiseAbs().maxCoeff();
    }
};

struct LcpSolution {
    Vector m;
    Vector w;  // M m + q
    bool converged = false;
    int sweeps = 0;
    int newton_steps = 0;
    double residual = 0.0;  // ||min(m, w)||_inf
};

/// LCP(M, q): m >= 0, w = M m + q >= 0, m . w = 0. Projected Gauss-Seidel
/// sweeps with over-relaxation, polished by an active-set semismooth Newton
/// pass on min(m, M m + q).
LcpSolution solve_lcp(const Matrix& m_matrix, const Vector& q, const LcpOptions& opts = {},
                      const Vector* warm_start = nullptr);
LcpSolution solve_lcp(const Matrix& m_matrix, const Vector& q, double tol, int max_iter);

struct ResolventStep {
    SphereEmbedding state;  // renormalized to the unit H_c sphere
    PressureVector pressure;
    Vector raw_b;         // K m before renormalization
    Vector raw_preimage;  // LCP solution m
    double norm_deficit = 0.0;  // 1 - ||K m||_{H_c} before renormalization
    LcpSolution lcp;
};

/// Reusable implicit-Euler stepper: the LCP matrix K + tau W K is fixed along
/// a run, only q = -b_prev changes.
class FlowStepper {
  public:
    FlowStepper(const PotentialOperator& op, double tau, LcpOptions opts = {});

    ResolventStep step(const SphereEmbedding& b_prev, const Vector* warm = nullptr) const;
    double tau() const { return tau_; }
    const Matrix& lcp_matrix() const { return m_; }

  private:
    const PotentialOperator& op_;
    double tau_;
    LcpOptions opts_;
    Matrix m_;
};

/// One implicit-Euler step of b' - b + tau (W b' + p) = 0 with b' = K m,
/// m >= 0, p <= 0, m . p = 0, posed as the LCP above; the state is rescaled
/// back to the unit sphere (the deficit is O(tau^2)).
ResolventStep resolvent_step(const SphereEmbedding& b_prev, const PotentialOperator& op,
                             double tau, const LcpOptions& opts = {});

/// Iterates resolvent steps, recording energies, pressures and speeds.
/// Initial cone violations in (-1e-6, -1e-10] are clipped and re-embedded;
/// worse ones are rejected.
FlowTrajectory run_flow(const SphereEmbedding& b0, const PotentialOperator& op, double tau,
                        double horizon, const LcpOptions& opts = {});

/// Distance series t -> ||b^a_t - b^b_t||_{H_c} for two flows of the same
/// potential; throws if any step increases the distance by more than 1e-6.
std::vector<double> nonexpansiveness_check(const SphereEmbedding& b0_a,
                                           const SphereEmbedding& b0_b,
                                           const PotentialOperator& op, double tau,
                                           double horizon, const LcpOptions& opts = {});

struct TauErrorRow {
    double tau = 0.0;
    double sup_error = 0.0;
};

/// sup_{t <= T} || bbar^tau_t - b^ref_t ||_{H_c} per tau, where bbar^tau is
/// the piecewise-constant interpolation of the SJKO embeddings and the
/// reference is the implicit flow at reference_tau.
std::vector<TauErrorRow> compare_sjko_to_flow(const DiscreteMeasure& mu0, const Vector& v,
                                              const std::vector<double>& taus, double horizon,
                                              double reference_tau, SjkoConfig cfg,
                                              const LcpOptions& lcp_opts = {});

}  // namespace sinkflow
