#include "sinkflow/space_kernel.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace sinkflow {

DiscreteSpace::DiscreteSpace(Matrix points) : points_(std::move(points)) {
    if (points_.rows() < 1) {
        throw Error("DiscreteSpace: need at least one point");
    }
    const Eigen::Index n = points_.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if ((points_.row(i) - points_.row(j)).squaredNorm() == 0.0) {
                throw Error("DiscreteSpace: points must be pairwise distinct");
            }
        }
    }
}

DiscreteSpace DiscreteSpace::interval(double lo, double hi, Eigen::Index resolution) {
    if (resolution < 2) throw Error("DiscreteSpace::interval: resolution >= 2 required");
    Matrix pts(resolution, 1);
    for (Eigen::Index i = 0; i < resolution; ++i) {
        pts(i, 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
    return DiscreteSpace(std::move(pts));
}

DiscreteSpace DiscreteSpace::square(double lo, double hi, Eigen::Index resolution) {
    if (resolution < 2) throw Error("DiscreteSpace::square: resolution >= 2 required");
    Matrix pts(resolution * resolution, 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < resolution; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
        for (Eigen::Index j = 0; j < resolution; ++j, ++k) {
            pts(k, 0) = x;
            pts(k, 1) = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(resolution - 1);
        }
    }
    return DiscreteSpace(std::move(pts));
}

Matrix pairwise_squared_cost(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionMismatch("pairwise_squared_cost: ambient dimensions differ");
    }
    const Vector a2 = a.rowwise().squaredNorm();
    const Vector b2 = b.rowwise().squaredNorm();
    Matrix c = -2.0 * a * b.transpose();
    c.colwise() += a2;
    c.rowwise() += b2.transpose();
    return c.cwiseMax(0.0);
}

Matrix squared_euclidean_cost(const DiscreteSpace& space) {
    Matrix c = pairwise_squared_cost(space.points(), space.points());
    c.diagonal().setZero();
    // exact symmetry, not just up to rounding of the GEMM
    c = 0.5 * (c + c.transpose()).eval();
    return c;
}

GibbsKernel::GibbsKernel(Matrix cost, double epsilon, KernelOptions opts)
    : cost_(std::move(cost)), epsilon_(epsilon), opts_(opts) {
    if (epsilon_ <= 0.0) throw NonPositiveEpsilon("GibbsKernel: epsilon must be > 0");
    if (cost_.rows() != cost_.cols()) throw DimensionMismatch("GibbsKernel: cost must be square");
    cost_sup_ = cost_.size() > 0 ? cost_.cwiseAbs().maxCoeff() : 0.0;
    kernel_ = (-cost_ / epsilon_).array().exp().matrix();
    factorize();
}

std::shared_ptr<const GibbsKernel> GibbsKernel::on_space(
    std::shared_ptr<const DiscreteSpace> space, double epsilon, KernelOptions opts) {
    auto kernel = std::make_shared<GibbsKernel>(squared_euclidean_cost(*space), epsilon, opts);
    kernel->space_ = std::move(space);
    return kernel;
}

void GibbsKernel::factorize() {
    llt_.compute(kernel_);
    if (llt_.info() != Eigen::Success) {
        jitter_ = 1e-12 * kernel_.trace() / static_cast<double>(kernel_.rows());
        std::fprintf(stderr,
                     "sinkflow: warning: kernel factorization failed, retrying with "
                     "diagonal jitter %.3e\n",
                     jitter_);
        Matrix shifted = kernel_;
        shifted.diagonal().array() += jitter_;
        llt_.compute(shifted);
        if (llt_.info() != Eigen::Success) {
            throw IllConditioned("GibbsKernel: factorization failed even with jitter",
                                 condition_estimate());
        }
    }
}

double GibbsKernel::condition_estimate() const {
    if (cond_estimate_ < 0.0) {
        const double rc = llt_.rcond();
        cond_estimate_ = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    }
    return cond_estimate_;
}

void GibbsKernel::check_conditioning() const {
    const double cond = condition_estimate();
    if (cond > opts_.condition_threshold) {
        throw IllConditioned("GibbsKernel::solve: condition estimate " +
                                 std::to_string(cond) + " exceeds threshold",
                             cond);
    }
}

Vector GibbsKernel::apply(const Vector& sigma) const {
    if (sigma.size() != size()) throw DimensionMismatch("GibbsKernel::apply: size mismatch");
    return kernel_ * sigma;
}

Vector GibbsKernel::solve(const Vector& phi) const {
    if (phi.size() != size()) throw DimensionMismatch("GibbsKernel::solve: size mismatch");
    check_conditioning();
    return llt_.solve(phi);
}

double GibbsKernel::inner(const Vector& phi, const Vector& psi) const {
    return solve(phi).dot(psi);
}

double GibbsKernel::norm(const Vector& phi) const {
    return std::sqrt(std::max(0.0, inner(phi, phi)));
}

Matrix GibbsKernel::inverse_sqrt() const {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(kernel_);
    if (eig.info() != Eigen::Success) {
        throw IllConditioned("GibbsKernel::inverse_sqrt: eigendecomposition failed",
                             condition_estimate());
    }
    const Vector& lam = eig.eigenvalues();
    if (lam.minCoeff() <= 0.0) {
        throw IllConditioned("GibbsKernel::inverse_sqrt: kernel not positive definite",
                             condition_estimate());
    }
    return eig.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal() *
           eig.eigenvectors().transpose();
}

}  // namespace sinkflow
