#include "sinkflow/potentials.hpp"

#include <cmath>
#include <random>

#include "sinkflow/errors.hpp"

namespace sinkflow {

Vector potential_values(const Potential& v, const Matrix& points) {
    if (!v.value) throw Error("potential_values: potential has no value function");
    Vector out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) out(i) = v.value(points.row(i));
    return out;
}

Matrix potential_gradients(const Potential& v, const Matrix& points) {
    Matrix out(points.rows(), points.cols());
    if (v.gradient) {
        for (Eigen::Index i = 0; i < points.rows(); ++i) out.row(i) = v.gradient(points.row(i));
        return out;
    }
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        Eigen::RowVectorXd x = points.row(i);
        for (Eigen::Index k = 0; k < points.cols(); ++k) {
            const double xk = x(k);
            x(k) = xk + h;
            const double up = v.value(x);
            x(k) = xk - h;
            const double dn = v.value(x);
            x(k) = xk;
            out(i, k) = (up - dn) / (2.0 * h);
        }
    }
    return out;
}

Potential quadratic_potential() {
    Potential v;
    v.name = "quadratic";
    v.value = [](const Eigen::RowVectorXd& x) { return x.squaredNorm(); };
    v.gradient = [](const Eigen::RowVectorXd& x) -> Eigen::RowVectorXd { return 2.0 * x; };
    return v;
}

Potential double_well_potential() {
    Potential v;
    v.name = "double_well";
    v.value = [](const Eigen::RowVectorXd& x) {
        if (x.size() != 1) throw Error("double_well potential is 1D");
        const double t = x(0);
        const double a = t - 0.25;
        const double b = t - 0.75;
        return 80.0 * a * a * b * b - 0.3 * (t - 0.5);
    };
    v.gradient = [](const Eigen::RowVectorXd& x) -> Eigen::RowVectorXd {
        const double t = x(0);
        Eigen::RowVectorXd g(1);
        g(0) = 320.0 * (t - 0.25) * (t - 0.75) * (t - 0.5) - 0.3;
        return g;
    };
    return v;
}

Vector gaussian_weights(const DiscreteSpace& space, const Eigen::RowVectorXd& mean,
                        double sigma) {
    if (sigma <= 0.0) throw Error("gaussian_weights: sigma must be > 0");
    if (mean.size() != space.dim()) throw DimensionMismatch("gaussian_weights: mean dimension");
    Vector w(space.size());
    for (Eigen::Index i = 0; i < space.size(); ++i) {
        w(i) = std::exp(-(space.point(i) - mean).squaredNorm() / (2.0 * sigma * sigma));
    }
    w /= w.sum();
    return w;
}

Matrix sample_gaussian_particles(Eigen::Index n, const Eigen::RowVectorXd& mean,
                                 double sigma, const Eigen::RowVectorXd& lo,
                                 const Eigen::RowVectorXd& hi, std::uint64_t seed) {
    if (n < 1) throw Error("sample_gaussian_particles: n must be >= 1");
    const Eigen::Index d = mean.size();
    std::mt19937_64 rng(seed);
    const auto uniform01 = [&rng]() {
        // 53-bit mantissa draw, independent of the standard library's
        // distribution implementations.
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    };
    Matrix pts(n, d);
    double spare = 0.0;
    bool has_spare = false;
    const auto normal = [&]() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u = 0.0;
        do {
            u = uniform01();
        } while (u <= 0.0);
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * M_PI * uniform01();
        spare = r * std::sin(theta);
        has_spare = true;
        return r * std::cos(theta);
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) {
            const double x = mean(k) + sigma * normal();
            pts(i, k) = std::min(hi(k), std::max(lo(k), x));
        }
    }
    return pts;
}

}  // namespace sinkflow
