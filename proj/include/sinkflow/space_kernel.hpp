#pragma once

#include <Eigen/Dense>
#include <memory>

#include "sinkflow/errors.hpp"

namespace sinkflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Finite base space: n points in R^d, one per row.
class DiscreteSpace {
  public:
    explicit DiscreteSpace(Matrix points);

    Eigen::Index size() const { return points_.rows(); }
    Eigen::Index dim() const { return points_.cols(); }
    const Matrix& points() const { return points_; }
    Eigen::RowVectorXd point(Eigen::Index i) const { return points_.row(i); }

    /// Regular grid on [lo, hi] with `resolution` points (1D).
    static DiscreteSpace interval(double lo, double hi, Eigen::Index resolution);
    /// Regular grid on [lo, hi]^2 with resolution^2 points, row-major.
    static DiscreteSpace square(double lo, double hi, Eigen::Index resolution);

  private:
    Matrix points_;
};

/// C[i][j] = ||x_i - x_j||^2 on a single space.
Matrix squared_euclidean_cost(const DiscreteSpace& space);

/// Cross-cost c(a_i, b_j) = ||a_i - b_j||^2 between two point clouds (rows).
Matrix pairwise_squared_cost(const Matrix& a, const Matrix& b);

struct KernelOptions {
    double condition_threshold = 1e14;
};

/// Gibbs kernel K = exp(-C/eps) together with the H_c-level linear algebra:
/// apply, solve, inner products and the inverse square root. The matrix is
/// factorized once (Cholesky); a diagonal jitter of 1e-12 tr(K)/n is applied
/// only if the factorization fails, with a warning on stderr.
class GibbsKernel {
  public:
    GibbsKernel(Matrix cost, double epsilon, KernelOptions opts = {});

    /// Kernel over the squared-Euclidean cost of `space`; keeps a reference to
    /// the space so embeddings can be mapped back to measures.
    static std::shared_ptr<const GibbsKernel> on_space(
        std::shared_ptr<const DiscreteSpace> space, double epsilon,
        KernelOptions opts = {});

    Eigen::Index size() const { return kernel_.rows(); }
    double epsilon() const { return epsilon_; }
    const Matrix& matrix() const { return kernel_; }
    const Matrix& cost() const { return cost_; }
    double cost_sup() const { return cost_sup_; }
    /// Space the kernel was built on, or nullptr when built from a raw cost.
    const std::shared_ptr<const DiscreteSpace>& space() const { return space_; }

    /// K sigma: the H_c Riesz representative of the signed measure sigma.
    Vector apply(const Vector& sigma) const;

    /// m with K m = phi. Throws IllConditioned past the condition threshold.
    Vector solve(const Vector& phi) const;

    /// <phi, psi>_{H_c} = phi^T K^{-1} psi.
    double inner(const Vector& phi, const Vector& psi) const;
    double norm(const Vector& phi) const;

    /// Symmetric S with S K S = Id (spectral); maps the H_c unit sphere onto
    /// the Euclidean one.
    Matrix inverse_sqrt() const;

    double condition_estimate() const;

  private:
    void factorize();
    void check_conditioning() const;

    Matrix cost_;
    Matrix kernel_;
    double epsilon_;
    double cost_sup_;
    KernelOptions opts_;
    std::shared_ptr<const DiscreteSpace> space_;
    Eigen::LLT<Matrix> llt_;
    double jitter_ = 0.0;
    mutable double cond_estimate_ = -1.0;  // computed lazily
};

}  // namespace sinkflow
