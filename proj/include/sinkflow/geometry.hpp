#pragma once

#include "sinkflow/eot.hpp"

namespace sinkflow {

struct EmbeddingTolerances {
    double norm = 1e-8;         // | ||b||_{H_c} - 1 |
    double cone = 1e-10;        // entrywise lower bound on the preimage
    double consistency = 1e-6;  // ||K m - b||_inf / ||b||_inf
};

/// Point b = B(mu) on the unit H_c sphere, stored together with its preimage
/// m = H_c^{-1}[b] (a nonnegative mass vector). Carrying the preimage keeps
/// every norm, inner product and cone check free of ill-conditioned kernel
/// solves: ||b||^2 = b.m exactly.
class SphereEmbedding {
  public:
    SphereEmbedding(Vector b, Vector preimage, std::shared_ptr<const GibbsKernel> kernel,
                    EmbeddingTolerances tol = {});

    /// Build from values only; the preimage comes from a kernel solve.
    static SphereEmbedding from_values(Vector b, std::shared_ptr<const GibbsKernel> kernel,
                                       EmbeddingTolerances tol = {});
    /// Build from a nonnegative preimage; b = K m, rescaled to unit norm when
    /// `renormalize` is set.
    static SphereEmbedding from_preimage(Vector preimage,
                                         std::shared_ptr<const GibbsKernel> kernel,
                                         bool renormalize = true,
                                         EmbeddingTolerances tol = {});

    const Vector& values() const { return b_; }
    const Vector& preimage() const { return m_; }
    const std::shared_ptr<const GibbsKernel>& kernel() const { return kernel_; }
    double epsilon() const { return kernel_->epsilon(); }
    Eigen::Index size() const { return b_.size(); }

    double hc_norm() const { return std::sqrt(std::max(0.0, b_.dot(m_))); }
    /// Measure weights b .* m (not clipped; see unembed for the checked path).
    Vector measure_weights() const { return b_.cwiseProduct(m_); }

  private:
    Vector b_;
    Vector m_;
    std::shared_ptr<const GibbsKernel> kernel_;
};

/// B(mu) = exp(-f_mu / eps) with the preimage exp(f_mu/eps) mu.
SphereEmbedding embed(const DiscreteMeasure& mu, std::shared_ptr<const GibbsKernel> kernel,
                      const SinkhornConfig& cfg = {}, EmbeddingTolerances tol = {});

/// B^{-1}(b) = b H_c^{-1}[b]; requires the kernel to know its space.
DiscreteMeasure unembed(const SphereEmbedding& b);

/// ||b1 - b2||_{H_c} through the preimages (no solves).
double hc_distance(const SphereEmbedding& b1, const SphereEmbedding& b2);

/// Energy pairing <<phi, psi>>_{H_c} = <H_c^{-1} phi, psi>.
double hc_pairing(const GibbsKernel& kernel, const Vector& phi, const Vector& psi);

/// Multiplication operator V, its H_c-adjoint V* = H_c V H_c^{-1} and the skew
/// part W = (2/eps)(V - V*).
class PotentialOperator {
  public:
    PotentialOperator(Vector values, std::shared_ptr<const GibbsKernel> kernel);

    const Vector& values() const { return v_; }
    const std::shared_ptr<const GibbsKernel>& kernel() const { return kernel_; }
    double epsilon() const { return kernel_->epsilon(); }
    double oscillation() const { return v_.maxCoeff() - v_.minCoeff(); }

    Vector v_star(const Vector& phi) const;
    Vector w_apply(const Vector& phi) const;
    /// W(K m) evaluated from the preimage, solve-free.
    Vector w_apply_preimage(const Vector& m) const;
    Vector w_apply(const SphereEmbedding& b) const { return w_apply_preimage(b.preimage()); }

    /// E(mu) = <<b, V b>>_{H_c} = sum_i m_i V_i b_i.
    double energy(const SphereEmbedding& b) const;

    /// Matrix of W K = (2/eps)(V K - K V), the solve-free composite used by
    /// the implicit flow step.
    Matrix wk_matrix() const;

  private:
    Vector v_;
    std::shared_ptr<const GibbsKernel> kernel_;
};

/// Nonpositive multiplier vanishing on the support of the measure.
struct PressureVector {
    Vector p;
    Eigen::Array<bool, Eigen::Dynamic, 1> support;
    double clip_magnitude = 0.0;  // largest positive part removed

    double min() const { return p.size() > 0 ? p.minCoeff() : 0.0; }
};

/// Clamps `raw` to be <= 0, zeroes it on the support of `weights` (threshold
/// 1e-12 * max weight) and records the clipped magnitude.
PressureVector make_pressure(Vector raw, const Vector& weights);

/// Matrix of K_mu: phi -> b^{-1} H_c[phi H_c^{-1} b] = diag(b)^{-1} K diag(m).
Matrix k_mu_matrix(const SphereEmbedding& b);

/// Spectrum of K_mu (real, in [0,1]) via the L^2(mu) symmetrization, ascending.
Vector k_mu_eigenvalues(const SphereEmbedding& b);

/// Metric tensor g_mu(sigma, sigma) = (eps/2) <sigma, (Id - K_mu^2)^{-1} H_mu[sigma]>
/// for a mass-zero sigma; the singular solve is done on the L^2(mu)-orthogonal
/// complement of constants.
double metric_g_mu(const SphereEmbedding& b, const Vector& sigma);

/// Pullback metric on the sphere for a tangent bdot (<bdot, b>_{H_c} = 0).
double metric_g_tilde(const SphereEmbedding& b, const Vector& bdot);

/// bdot = b (Id + K_mu)^{-1} H_mu[mudot]: the embedded velocity of a measure
/// path with vertical velocity mudot.
Vector embedding_velocity(const SphereEmbedding& b, const Vector& mudot);

/// max over support of |(W b)_i| and over the rest of max(0, -(W b)_i);
/// zero exactly at critical points W b + P~ b \ni 0.
double criticality_residual(const PotentialOperator& op, const SphereEmbedding& b);

/// d f_{mu, nu_s} / ds for a vertical perturbation nudot of nu, as an element
/// of C(X)/R returned with mu-weighted mean zero.
Vector schrodinger_derivative(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                              const Vector& nudot, double epsilon,
                              const SinkhornConfig& cfg = {});

}  // namespace sinkflow
