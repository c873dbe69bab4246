#include <doctest.h>

#include <cmath>
#include <random>

#include "sinkflow/eot.hpp"

using namespace sinkflow;

namespace {

std::shared_ptr<const DiscreteSpace> space_1d(std::initializer_list<double> xs) {
    Matrix p(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) p(i++, 0) = x;
    return std::make_shared<const DiscreteSpace>(std::move(p));
}

DiscreteMeasure random_measure(std::shared_ptr<const DiscreteSpace> space,
                               std::mt19937_64& rng, double floor = 0.02) {
    std::uniform_real_distribution<double> u(floor, 1.0);
    Vector w(space->size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
    w /= w.sum();
    return DiscreteMeasure::eulerian(std::move(space), std::move(w));
}

std::shared_ptr<const DiscreteSpace> random_space(Eigen::Index n, Eigen::Index d,
                                                  std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix p(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) p(i, j) = u(rng);
    }
    return std::make_shared<const DiscreteSpace>(std::move(p));
}

Vector random_mass_zero(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector s(n);
    for (Eigen::Index i = 0; i < n; ++i) s(i) = g(rng);
    s.array() -= s.mean();
    return s;
}

// 1D fixed point s = -s - eps log((1 + e^{-C/eps})/2) solved by bisection;
// the oracle for the symmetric 2-point self-potential.
double symmetric_self_potential_oracle(double cost01, double eps) {
    const auto residual = [&](double s) {
        return s + eps * std::log(0.5 * (std::exp(s / eps) + std::exp((s - cost01) / eps)));
    };
    double lo = -10.0, hi = 10.0;
    REQUIRE(residual(lo) < 0.0);
    REQUIRE(residual(hi) > 0.0);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (residual(mid) <= 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_SUITE("eot") {

TEST_CASE("sinkhorn_map closed forms") {
    // mu = delta_x: T(f,mu)(y) = c(x,y) - f(x)
    auto space = space_1d({0.0, 0.6, 1.0});
    Vector w = Vector::Zero(3);
    w(1) = 1.0;
    const Matrix cost = pairwise_squared_cost(space->points(), space->points());

    Vector f = Vector::Zero(3);
    Vector t = sinkhorn_map(f, w, cost, 0.7);
    for (int j = 0; j < 3; ++j) CHECK(t(j) == doctest::Approx(cost(1, j)).epsilon(1e-12));

    f(1) = 0.37;
    t = sinkhorn_map(f, w, cost, 0.7);
    for (int j = 0; j < 3; ++j) {
        CHECK(t(j) == doctest::Approx(cost(1, j) - 0.37).epsilon(1e-12));
    }

    // uniform mu on the symmetric unit-cost 2-point space, f = 0, eps = 1:
    // T(f,mu) is the constant -log((1+e^{-1})/2)
    Matrix c2(2, 2);
    c2 << 0.0, 1.0, 1.0, 0.0;
    const Vector half = Vector::Constant(2, 0.5);
    const Vector t2 = sinkhorn_map(Vector::Zero(2), half, c2, 1.0);
    CHECK(t2(0) == doctest::Approx(0.37988549304172248).epsilon(1e-14));
    CHECK(t2(1) == doctest::Approx(0.37988549304172248).epsilon(1e-14));

    CHECK_THROWS_AS(sinkhorn_map(Vector::Zero(2), Vector::Zero(2), c2, 1.0), EmptySupport);
}

TEST_CASE("solve_schrodinger: Dirac cases and symmetry") {
    auto space = space_1d({0.1, 0.55, 0.9});
    Vector wx = Vector::Zero(3);
    wx(0) = 1.0;
    Vector wy = Vector::Zero(3);
    wy(2) = 1.0;
    const auto dx = DiscreteMeasure::eulerian(space, wx);
    const auto dy = DiscreteMeasure::eulerian(space, wy);
    const double eps = 0.3;
    const double c = (space->point(0) - space->point(2)).squaredNorm();

    // mu = nu = delta_x: f = g = c(x, .) with f(x) = 0
    const DualPotentials self = solve_schrodinger(dx, dx, eps, {});
    CHECK(self.converged);
    CHECK(self.residual <= 1e-8);
    for (int j = 0; j < 3; ++j) {
        CHECK(self.f(j) ==
              doctest::Approx((space->point(0) - space->point(j)).squaredNorm()).epsilon(1e-9));
        CHECK(self.g(j) == doctest::Approx(self.f(j)).epsilon(1e-9));
    }

    // mu = delta_x, nu = delta_y: normalization forces f(x) = g(y) = c/2
    const DualPotentials cross = solve_schrodinger(dx, dy, eps, {});
    CHECK(cross.f(0) == doctest::Approx(0.5 * c).epsilon(1e-10));
    CHECK(cross.g(2) == doctest::Approx(0.5 * c).epsilon(1e-10));

    // any mu = nu: f = g and both fixed-point equations hold to tolerance
    std::mt19937_64 rng(3);
    const auto mu = random_measure(space, rng);
    const DualPotentials p = solve_schrodinger(mu, mu, eps, {});
    CHECK((p.f - p.g).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(p.residual <= 1e-8);
}

TEST_CASE("schrodinger residual stays below 10x tolerance on random instances") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng() % 9);
        const Eigen::Index m = 2 + static_cast<Eigen::Index>(rng() % 9);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 3);
        const auto mu = random_measure(random_space(n, d, rng), rng);
        const auto nu = random_measure(random_space(m, d, rng), rng);
        SinkhornConfig cfg;
        const DualPotentials pot = solve_schrodinger(mu, nu, 0.4, cfg);
        CHECK(pot.converged);
        CHECK(pot.residual <= 10.0 * cfg.resolve_tolerance(3.0));
        CHECK(std::abs(mu.weights().dot(pot.f) - nu.weights().dot(pot.g)) < 1e-10);
    }
}

TEST_CASE("solve_self_potential: Dirac, symmetric 2-point fixed point, duplication") {
    auto space = space_1d({0.2, 0.8});
    const double eps = 1.0;

    Vector w = Vector::Zero(2);
    w(0) = 1.0;
    const SelfPotential dirac = solve_self_potential(DiscreteMeasure::eulerian(space, w), eps);
    CHECK(dirac.converged);
    CHECK(dirac.f(0) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(dirac.f(1) == doctest::Approx(0.36).epsilon(1e-8));  // (0.8-0.2)^2

    // symmetric uniform measure: constant potential matching the bisection oracle
    auto unit = space_1d({0.0, 1.0});
    const auto half = DiscreteMeasure::eulerian(unit, Vector::Constant(2, 0.5));
    const SelfPotential sym = solve_self_potential(half, eps);
    const double oracle = symmetric_self_potential_oracle(1.0, eps);
    CHECK(oracle == doctest::Approx(0.18994274652086124).epsilon(1e-12));
    CHECK(sym.f(0) == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(sym.f(1) == doctest::Approx(oracle).epsilon(1e-9));

    // duplicating a point with split mass leaves f unchanged at shared points
    auto three = space_1d({0.0, 1.0, 1.0 + 1e-9});
    Vector split(3);
    split << 0.5, 0.25, 0.25;
    const SelfPotential dup =
        solve_self_potential(DiscreteMeasure::eulerian(three, split), eps);
    CHECK(dup.f(0) == doctest::Approx(sym.f(0)).epsilon(1e-6));
    CHECK(dup.f(1) == doctest::Approx(sym.f(1)).epsilon(1e-6));
}

TEST_CASE("ot_eps: Dirac values and primal oracle") {
    auto space = space_1d({0.15, 0.85});
    Vector wx = Vector::Zero(2);
    wx(0) = 1.0;
    Vector wy = Vector::Zero(2);
    wy(1) = 1.0;
    const auto dx = DiscreteMeasure::eulerian(space, wx);
    const auto dy = DiscreteMeasure::eulerian(space, wy);
    const double eps = 0.5;
    const double c = 0.49;

    CHECK(ot_eps(dx, dy, eps).value == doctest::Approx(c).epsilon(1e-10));
    CHECK(std::abs(ot_eps(dx, dx, eps).value) < 1e-10);

    // 2x2 primal oracle: couplings have one free parameter; scan + refine.
    std::mt19937_64 rng(29);
    const auto mu = random_measure(space, rng);
    const auto nu = random_measure(space, rng);
    const Matrix cost = pairwise_squared_cost(space->points(), space->points());
    const auto primal = [&](double p00) {
        const double a0 = mu.weights()(0), b0 = nu.weights()(0);
        Matrix pi(2, 2);
        pi << p00, a0 - p00, b0 - p00, 1.0 - a0 - b0 + p00;
        double val = 0.0;
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const double ref = mu.weights()(i) * nu.weights()(j);
                val += pi(i, j) * cost(i, j);
                if (pi(i, j) > 0.0) val += eps * pi(i, j) * std::log(pi(i, j) / ref);
            }
        }
        return val;
    };
    const double lo = std::max(0.0, mu.weights()(0) + nu.weights()(0) - 1.0);
    const double hi = std::min(mu.weights()(0), nu.weights()(0));
    double best = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 20000; ++k) {
        best = std::min(best, primal(lo + (hi - lo) * k / 20000.0));
    }
    const OtValue dual = ot_eps(mu, nu, eps);
    CHECK(dual.value == doctest::Approx(best).epsilon(1e-5));
    CHECK(dual.gap < 1e-8);
    CHECK(dual.value >= 0.0);
}

TEST_CASE("ot_eps is nonnegative on random instances") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 8; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng() % 9);
        const auto space = random_space(n, 2, rng);
        const auto mu = random_measure(space, rng);
        const auto nu = random_measure(space, rng);
        CHECK(ot_eps(mu, nu, 0.3).value >= -1e-10);
    }
}

TEST_CASE("sinkhorn divergence: identity, Diracs, positivity, symmetry, convexity") {
    std::mt19937_64 rng(37);
    const auto space = random_space(8, 2, rng);
    const double eps = 0.35;

    const auto mu = random_measure(space, rng);
    CHECK(std::abs(sinkhorn_divergence(mu, mu, eps)) < 1e-8);

    Vector wx = Vector::Zero(8), wy = Vector::Zero(8);
    wx(1) = 1.0;
    wy(5) = 1.0;
    const double c15 = (space->point(1) - space->point(5)).squaredNorm();
    CHECK(sinkhorn_divergence(DiscreteMeasure::eulerian(space, wx),
                              DiscreteMeasure::eulerian(space, wy), eps) ==
          doctest::Approx(c15).epsilon(1e-9));

    for (int trial = 0; trial < 6; ++trial) {
        const auto a = random_measure(space, rng);
        const auto b = random_measure(space, rng);
        const double sab = sinkhorn_divergence(a, b, eps);
        CHECK(sab > 0.0);
        CHECK(sab == doctest::Approx(sinkhorn_divergence(b, a, eps)).epsilon(1e-8));
    }

    // convexity in the weights: midpoint bound for lambda in {1/4, 1/2, 3/4}
    for (int trial = 0; trial < 3; ++trial) {
        const auto m0 = random_measure(space, rng);
        const auto m1 = random_measure(space, rng);
        const auto nu = random_measure(space, rng);
        for (const double lam : {0.25, 0.5, 0.75}) {
            const auto blend = DiscreteMeasure::eulerian(
                space, lam * m0.weights() + (1.0 - lam) * m1.weights());
            CHECK(sinkhorn_divergence(blend, nu, eps) <=
                  lam * sinkhorn_divergence(m0, nu, eps) +
                      (1.0 - lam) * sinkhorn_divergence(m1, nu, eps) + 1e-8);
        }
    }
}

TEST_CASE("sinkhorn divergence metrizes convergence along a line segment") {
    std::mt19937_64 rng(43);
    const auto space = random_space(10, 1, rng);
    const auto mu0 = random_measure(space, rng);
    const auto nu = random_measure(space, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (const double lam : {0.0, 0.5, 0.9, 0.99, 0.999}) {
        const auto muk = DiscreteMeasure::eulerian(
            space, (1.0 - lam) * mu0.weights() + lam * nu.weights());
        const double s = sinkhorn_divergence(muk, nu, 0.4);
        CHECK(s < prev);
        prev = s;
    }
    CHECK(prev < 1e-4);
}

TEST_CASE("warm starts do not increase iteration counts") {
    std::mt19937_64 rng(47);
    const auto space = random_space(12, 2, rng);
    const auto mu = random_measure(space, rng);
    const auto nu = random_measure(space, rng);
    const double eps = 0.25;

    SinkhornConfig cold;
    const DualPotentials first = solve_schrodinger(mu, nu, eps, cold);

    // a nearby measure: slightly perturbed weights
    Vector w2 = mu.weights();
    w2(0) += 0.01;
    w2 /= w2.sum();
    const auto mu2 = DiscreteMeasure::eulerian(space, w2);
    const DualPotentials cold2 = solve_schrodinger(mu2, nu, eps, cold);
    SinkhornConfig warm;
    warm.warm_start = first;
    const DualPotentials warm2 = solve_schrodinger(mu2, nu, eps, warm);
    CHECK(warm2.converged);
    CHECK(warm2.iterations <= cold2.iterations);
}

TEST_CASE("grad_seps_weights: zero at nu = mu and finite-difference oracle") {
    std::mt19937_64 rng(53);
    const auto space = random_space(6, 2, rng);
    const double eps = 0.4;
    const auto mu = random_measure(space, rng);

    Vector g_same = grad_seps_weights(mu, mu, eps);
    g_same.array() -= g_same.mean();
    CHECK(g_same.cwiseAbs().maxCoeff() < 1e-8);

    for (int trial = 0; trial < 4; ++trial) {
        const auto nu = random_measure(space, rng);
        const Vector grad = grad_seps_weights(mu, nu, eps);
        Vector sigma = random_mass_zero(6, rng);
        sigma *= 0.05 / sigma.cwiseAbs().maxCoeff();
        const double t = 1e-4;
        const auto at = [&](double s) {
            return sinkhorn_divergence(
                DiscreteMeasure::eulerian(space, mu.weights() + s * sigma), nu, eps);
        };
        const double fd = (at(t) - at(-t)) / (2.0 * t);
        CHECK(std::abs(fd - sigma.dot(grad)) / std::max(1e-12, std::abs(fd)) < 1e-3);
    }

    // n=2: gradient of the scalar weight function matches 1D differences
    auto two = space_1d({0.2, 0.9});
    const auto nu2 = random_measure(two, rng);
    Vector w(2);
    w << 0.3, 0.7;
    const auto mu2 = DiscreteMeasure::eulerian(two, w);
    const Vector grad2 = grad_seps_weights(mu2, nu2, eps);
    const double t = 1e-5;
    Vector sig(2);
    sig << 1.0, -1.0;
    const double fd2 = (sinkhorn_divergence(DiscreteMeasure::eulerian(two, w + t * sig), nu2,
                                            eps) -
                        sinkhorn_divergence(DiscreteMeasure::eulerian(two, w - t * sig), nu2,
                                            eps)) /
                       (2.0 * t);
    CHECK(fd2 == doctest::Approx(sig.dot(grad2)).epsilon(1e-3));
}

TEST_CASE("grad_seps_positions: Diracs, self-vanishing, finite differences") {
    const double eps = 0.3;

    // single particle vs single target: gradient = 2(x - y)
    Matrix x(1, 2), y(1, 2);
    x << 0.2, 0.7;
    y << 0.9, 0.1;
    const Matrix g1 = grad_seps_positions(DiscreteMeasure::lagrangian(x),
                                          DiscreteMeasure::lagrangian(y), eps);
    CHECK(g1(0, 0) == doctest::Approx(2.0 * (0.2 - 0.9)).epsilon(1e-8));
    CHECK(g1(0, 1) == doctest::Approx(2.0 * (0.7 - 0.1)).epsilon(1e-8));

    std::mt19937_64 rng(59);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix particles(5, 2);
    for (int i = 0; i < 5; ++i) {
        particles(i, 0) = u(rng);
        particles(i, 1) = u(rng);
    }
    const auto mu = DiscreteMeasure::lagrangian(particles);
    const Matrix gz = grad_seps_positions(mu, mu, eps);
    CHECK(gz.cwiseAbs().maxCoeff() < 1e-8);

    Matrix targets(4, 2);
    for (int i = 0; i < 4; ++i) {
        targets(i, 0) = u(rng);
        targets(i, 1) = u(rng);
    }
    const auto nu = DiscreteMeasure::lagrangian(targets);
    const Matrix grad = grad_seps_positions(mu, nu, eps);
    const double h = 1e-5;
    for (int i = 0; i < 5; ++i) {
        for (int k = 0; k < 2; ++k) {
            Matrix up = particles, dn = particles;
            up(i, k) += h;
            dn(i, k) -= h;
            const double fd = (sinkhorn_divergence(DiscreteMeasure::lagrangian(up), nu, eps) -
                               sinkhorn_divergence(DiscreteMeasure::lagrangian(dn), nu, eps)) /
                              (2.0 * h);
            CHECK(std::abs(fd - grad(i, k)) / std::max(1.0, std::abs(fd)) < 1e-4);
        }
    }
}

TEST_CASE("embedding distance bound by the divergence") {
    std::mt19937_64 rng(61);
    const auto space = random_space(9, 2, rng);
    const double eps = 0.5;
    for (int trial = 0; trial < 5; ++trial) {
        const auto mu = random_measure(space, rng);
        const auto nu = random_measure(space, rng);
        const double d = embedding_distance(mu, nu, eps);
        CHECK(d * d <= 2.0 / eps * sinkhorn_divergence(mu, nu, eps) + 1e-8);
    }
}

}  // TEST_SUITE
