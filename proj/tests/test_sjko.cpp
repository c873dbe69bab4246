#include <doctest.h>

#include <cmath>
#include <random>

#include "sinkflow/sjko.hpp"

using namespace sinkflow;

namespace {

std::shared_ptr<const DiscreteSpace> grid(Eigen::Index n) {
    return std::make_shared<const DiscreteSpace>(DiscreteSpace::interval(0.0, 1.0, n));
}

DiscreteMeasure random_measure(std::shared_ptr<const DiscreteSpace> space,
                               std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Vector w(space->size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
    w /= w.sum();
    return DiscreteMeasure::eulerian(std::move(space), std::move(w));
}

}  // namespace

TEST_SUITE("sjko") {

TEST_CASE("simplex projection: fixed points, corners, ties") {
    Vector on(3);
    on << 0.2, 0.5, 0.3;
    CHECK((simplex_project(on) - on).cwiseAbs().maxCoeff() < 1e-15);

    Vector corner(2);
    corner << 2.0, 0.0;
    Vector pc = simplex_project(corner);
    CHECK(pc(0) == doctest::Approx(1.0));
    CHECK(pc(1) == doctest::Approx(0.0));

    Vector tie(2);
    tie << 0.6, 0.6;
    Vector pt = simplex_project(tie);
    CHECK(pt(0) == doctest::Approx(0.5));
    CHECK(pt(1) == doctest::Approx(0.5));

    // projection property: output on the simplex, idempotent
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        Vector v(6);
        for (int i = 0; i < 6; ++i) v(i) = g(rng);
        const Vector p = simplex_project(v);
        CHECK(p.minCoeff() >= 0.0);
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((simplex_project(p) - p).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("sjko objective: value at prev, convexity in the weights") {
    std::mt19937_64 rng(5);
    auto space = grid(9);
    const double eps = 0.3;
    const double tau = 0.1;
    Vector v(9);
    for (Eigen::Index i = 0; i < 9; ++i) v(i) = space->point(i).squaredNorm();

    const auto mu = random_measure(space, rng);
    // at the previous measure the S term vanishes
    CHECK(sjko_objective(mu, mu, v, tau, eps) ==
          doctest::Approx(2.0 * tau * mu.weights().dot(v)).epsilon(1e-7));

    for (int trial = 0; trial < 3; ++trial) {
        const auto prev = random_measure(space, rng);
        const auto a = random_measure(space, rng);
        const auto b = random_measure(space, rng);
        const auto mid =
            DiscreteMeasure::eulerian(space, 0.5 * (a.weights() + b.weights()));
        CHECK(sjko_objective(mid, prev, v, tau, eps) <=
              0.5 * sjko_objective(a, prev, v, tau, eps) +
                  0.5 * sjko_objective(b, prev, v, tau, eps) + 1e-8);
    }
}

TEST_CASE("eulerian step: constant potential is a fixed point") {
    std::mt19937_64 rng(7);
    auto space = grid(12);
    const auto prev = random_measure(space, rng);
    SjkoConfig cfg;
    cfg.tau = 0.1;
    cfg.epsilon = 0.3;
    cfg.scheme = MeasureMode::Eulerian;
    const SjkoStepResult step = sjko_step_eulerian(prev, Vector::Constant(12, 4.2), cfg);
    CHECK(step.diag.converged);
    CHECK((step.measure.weights() - prev.weights()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("eulerian step: descent, optimality residual, pressure invariants") {
    std::mt19937_64 rng(11);
    auto space = grid(15);
    const double eps = 0.2;
    Vector v(15);
    for (Eigen::Index i = 0; i < 15; ++i) v(i) = space->point(i).squaredNorm();

    const auto prev = random_measure(space, rng);
    SjkoConfig cfg;
    cfg.tau = 0.05;
    cfg.epsilon = eps;
    cfg.inner_tol = 1e-8;
    const SjkoStepResult step = sjko_step_eulerian(prev, v, cfg);
    CHECK(step.diag.converged);
    CHECK(step.diag.optimality_residual >= -cfg.inner_tol);

    // suboptimality inequality: E(mu') + S(mu', prev)/(2 tau) <= E(prev)
    const double lhs = step.measure.weights().dot(v) +
                       step.diag.divergence_to_prev / (2.0 * cfg.tau);
    CHECK(lhs <= prev.weights().dot(v) + 1e-8);

    // the inner objective never increased along accepted iterates
    for (std::size_t i = 1; i < step.diag.objective_trace.size(); ++i) {
        CHECK(step.diag.objective_trace[i] <=
              step.diag.objective_trace[i - 1] + 1e-10);
    }

    CHECK((step.pressure.p.array() <= 0.0).all());
    for (Eigen::Index i = 0; i < 15; ++i) {
        if (step.pressure.support(i)) CHECK(step.pressure.p(i) == 0.0);
    }
}

TEST_CASE("eulerian step tolerates zero weights in the previous iterate") {
    auto space = grid(8);
    Vector w = Vector::Zero(8);
    w(2) = 0.5;
    w(5) = 0.5;
    const auto prev = DiscreteMeasure::eulerian(space, w);
    Vector v(8);
    for (Eigen::Index i = 0; i < 8; ++i) v(i) = space->point(i).squaredNorm();
    SjkoConfig cfg;
    cfg.tau = 0.05;
    cfg.epsilon = 0.25;
    const SjkoStepResult step = sjko_step_eulerian(prev, v, cfg);
    CHECK(step.measure.weights().minCoeff() >= 0.0);
    CHECK(step.measure.weights().sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(step.measure.weights().dot(v) <= prev.weights().dot(v) + 1e-8);
}

TEST_CASE("lagrangian step: constant potential freezes particles") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix pts(6, 2);
    for (int i = 0; i < 6; ++i) {
        pts(i, 0) = u(rng);
        pts(i, 1) = u(rng);
    }
    const auto prev = DiscreteMeasure::lagrangian(pts);
    Potential flat;
    flat.name = "flat";
    flat.value = [](const Eigen::RowVectorXd&) { return 1.5; };
    flat.gradient = [](const Eigen::RowVectorXd& x) -> Eigen::RowVectorXd {
        return Eigen::RowVectorXd::Zero(x.size());
    };
    SjkoConfig cfg;
    cfg.tau = 0.05;
    cfg.epsilon = 0.3;
    cfg.scheme = MeasureMode::Lagrangian;
    const SjkoStepResult step = sjko_step_lagrangian(prev, flat, cfg);
    CHECK((step.measure.positions() - pts).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("lagrangian single particle approximates backward Euler") {
    // V(x) = x^2, one step: x' = x/(1 + 2 tau) up to 10 tau^2
    const double tau = 1e-2;
    Matrix x0(1, 1);
    x0(0, 0) = 0.8;
    const auto prev = DiscreteMeasure::lagrangian(x0);
    SjkoConfig cfg;
    cfg.tau = tau;
    cfg.epsilon = 0.3;
    cfg.scheme = MeasureMode::Lagrangian;
    cfg.inner_tol = 1e-11;
    const SjkoStepResult step = sjko_step_lagrangian(prev, quadratic_potential(), cfg);
    CHECK(step.diag.converged);
    const double expected_euler = 0.8 - 2.0 * tau * 0.8;
    CHECK(std::abs(step.measure.positions()(0, 0) - expected_euler) < 10.0 * tau * tau);

    // objective trace is non-increasing (monotone backtracking)
    for (std::size_t i = 1; i < step.diag.objective_trace.size(); ++i) {
        CHECK(step.diag.objective_trace[i] <= step.diag.objective_trace[i - 1] + 1e-12);
    }
}

TEST_CASE("run_sjko eulerian: monotone energies and the telescoping bound") {
    std::mt19937_64 rng(17);
    auto space = grid(16);
    const double eps = 0.15;
    Vector v(16);
    for (Eigen::Index i = 0; i < 16; ++i) v(i) = space->point(i).squaredNorm();

    const auto mu0 = random_measure(space, rng);
    SjkoConfig cfg;
    cfg.tau = 0.1;
    cfg.epsilon = eps;
    cfg.inner_tol = 1e-7;
    cfg.inner_max_iter = 10000;
    const FlowTrajectory traj = run_sjko(mu0, v, cfg, 1.0);
    CHECK(traj.size() == 11);
    CHECK(traj.all_converged);

    double telescoped = 0.0;
    for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
        CHECK(traj.energies[k + 1] <= traj.energies[k] + 1e-8);
        telescoped +=
            sinkhorn_divergence(traj.measures[k + 1], traj.measures[k], eps) / (2.0 * cfg.tau);
    }
    CHECK(telescoped <= traj.energies.front() - v.minCoeff() + 1e-8);

    // recorded embeddings respect the sphere invariants
    for (const double r : traj.hc_norm_residuals) CHECK(r < 1e-8);
}

TEST_CASE("run_sjko lagrangian: energies decrease under the quadratic potential") {
    Matrix pts(5, 1);
    pts << 0.9, 0.7, 0.8, 0.6, 0.85;
    const auto mu0 = DiscreteMeasure::lagrangian(pts);
    SjkoConfig cfg;
    cfg.tau = 0.05;
    cfg.epsilon = 0.2;
    cfg.scheme = MeasureMode::Lagrangian;
    const FlowTrajectory traj = run_sjko(mu0, quadratic_potential(), cfg, 0.5);
    CHECK(traj.size() == 11);
    for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
        CHECK(traj.energies[k + 1] <= traj.energies[k] + 1e-8);
    }
    CHECK(traj.states.empty());
    CHECK(traj.speed_norms[1] > 0.0);
}

}  // TEST_SUITE
