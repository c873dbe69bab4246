#pragma once

#include "sinkflow/potentials.hpp"
#include "sinkflow/trajectory.hpp"

namespace sinkflow {

struct SjkoConfig {
    double tau = 0.1;
    double epsilon = 0.1;
    double inner_tol = 1e-8;
    int inner_max_iter = 5000;
    MeasureMode scheme = MeasureMode::Eulerian;
    bool accel = true;
    SinkhornConfig sinkhorn;

    void validate() const {
        if (tau <= 0.0) throw Error("SjkoConfig: tau must be > 0");
        if (epsilon <= 0.0) throw NonPositiveEpsilon("SjkoConfig: epsilon must be > 0");
        if (inner_tol <= 0.0) throw Error("SjkoConfig: inner_tol must be > 0");
        if (inner_max_iter < 1) throw Error("SjkoConfig: inner_max_iter >= 1");
    }
};

struct SjkoDiagnostics {
    int inner_iterations = 0;
    bool converged = true;
    double optimality_residual = 0.0;  // min_i (g_i - <mu,g>), Eulerian
    double gradient_sup = 0.0;         // position-gradient sup-norm, Lagrangian
    double objective = 0.0;            // 2 tau <mu,V> + S_eps(mu, mu_prev) at return
    double divergence_to_prev = 0.0;   // S_eps(mu', mu_prev)
    double step_size = 0.0;            // 1/L actually used
    std::vector<double> objective_trace;  // accepted iterates, non-increasing
};

struct SjkoStepResult {
    DiscreteMeasure measure;
    PressureVector pressure;  // Eulerian branch only
    SjkoDiagnostics diag;
};

/// Warm-start state threaded across inner iterations and outer steps: the
/// previous Schrödinger potentials and the running Lipschitz estimate.
struct SjkoWarmState {
    std::optional<DualPotentials> cross;
    std::optional<Vector> self_f;
    std::optional<Vector> prev_self_f;
    double lipschitz = 0.0;
};

/// Euclidean projection onto {a >= 0, sum a = 1} (sort-and-threshold).
Vector simplex_project(Vector v);

/// Rescaled step objective 2 tau <mu, V> + S_eps(mu, mu_prev); V given on the
/// candidate's support.
double sjko_objective(const DiscreteMeasure& candidate, const DiscreteMeasure& prev,
                      const Vector& v_on_support, double tau, double epsilon,
                      const SinkhornConfig& cfg = {});
double sjko_objective(const DiscreteMeasure& candidate, const DiscreteMeasure& prev,
                      const Potential& v, double tau, double epsilon,
                      const SinkhornConfig& cfg = {});

/// One SJKO step over the simplex: accelerated projected gradient descent with
/// restart-on-increase, gradient 2 tau V + f_{mu,mu_prev} - f_mu, stopping on
/// the first-order condition g - <mu, g> >= -inner_tol.
SjkoStepResult sjko_step_eulerian(const DiscreteMeasure& prev, const Vector& v,
                                  const SjkoConfig& cfg, SjkoWarmState* warm = nullptr);

/// One SJKO step over particle positions: monotone accelerated descent with
/// backtracking, stopping when the position gradient's sup-norm drops below
/// inner_tol.
SjkoStepResult sjko_step_lagrangian(const DiscreteMeasure& prev, const Potential& v,
                                    const SjkoConfig& cfg, SjkoWarmState* warm = nullptr);

/// ceil(T/tau) steps from mu0, recording measures, embeddings (Eulerian),
/// energies, pressures and speeds; Sinkhorn solves are warm-started step to
/// step.
FlowTrajectory run_sjko(const DiscreteMeasure& mu0, const Potential& v,
                        const SjkoConfig& cfg, double horizon);
FlowTrajectory run_sjko(const DiscreteMeasure& mu0, const Vector& v_grid,
                        const SjkoConfig& cfg, double horizon);

}  // namespace sinkflow
