#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sinkflow/space_kernel.hpp"

namespace sinkflow {

/// Scenario potential: pointwise values plus an optional closed-form gradient.
/// When `gradient` is empty, central finite differences (h = 1e-6) are used.
struct Potential {
    std::string name;
    std::function<double(const Eigen::RowVectorXd&)> value;
    std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd&)> gradient;
};

Vector potential_values(const Potential& v, const Matrix& points);
Matrix potential_gradients(const Potential& v, const Matrix& points);

/// V(x) = ||x||^2.
Potential quadratic_potential();

/// 1D double well 80 (x - 1/4)^2 (x - 3/4)^2 - 0.3 (x - 1/2): two minima of
/// distinct depth, the global one right of the barrier. Not taken from any
/// published parameterization.
Potential double_well_potential();

/// Truncated-Gaussian weights exp(-||x - mean||^2 / (2 sigma^2)) on the grid,
/// normalized to unit mass.
Vector gaussian_weights(const DiscreteSpace& space, const Eigen::RowVectorXd& mean,
                        double sigma);

/// n Gaussian samples clamped to the box [lo, hi]^d, Box-Muller on a seeded
/// 64-bit Mersenne Twister so reruns are bit-identical.
Matrix sample_gaussian_particles(Eigen::Index n, const Eigen::RowVectorXd& mean,
                                 double sigma, const Eigen::RowVectorXd& lo,
                                 const Eigen::RowVectorXd& hi, std::uint64_t seed);

}  // namespace sinkflow
