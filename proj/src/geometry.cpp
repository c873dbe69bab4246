#include "sinkflow/geometry.hpp"

#include <cmath>

namespace sinkflow {

namespace {

// Solves A u = r where A is singular exactly on constants, with left null
// vector `a` (the measure weights). The right-hand side is projected onto the
// solvable range and the rank-one shift A + 1 a^T pins the solution to the
// L^2(mu)-orthogonal complement of constants: a^T u = 0.
Vector solve_mod_constants(Matrix A, const Vector& a, Vector r) {
    const Eigen::Index n = A.rows();
    r.array() -= a.dot(r);
    A += Vector::Ones(n) * a.transpose();
    return Eigen::PartialPivLU<Matrix>(std::move(A)).solve(r);
}

}  // namespace

SphereEmbedding::SphereEmbedding(Vector b, Vector preimage,
                                 std::shared_ptr<const GibbsKernel> kernel,
                                 EmbeddingTolerances tol)
    : b_(std::move(b)), m_(std::move(preimage)), kernel_(std::move(kernel)) {
    if (!kernel_) throw Error("SphereEmbedding: null kernel");
    if (b_.size() != kernel_->size() || m_.size() != kernel_->size()) {
        throw DimensionMismatch("SphereEmbedding: size mismatch with kernel");
    }
    if ((b_.array() <= 0.0).any()) {
        throw EmbeddingInvariantViolated("SphereEmbedding: b must be positive entrywise",
                                         b_.minCoeff());
    }
    const double cone = m_.minCoeff();
    if (cone < -tol.cone) {
        throw EmbeddingInvariantViolated(
            "SphereEmbedding: preimage leaves the cone H_c[M+]", cone);
    }
    const double norm_residual = std::abs(b_.dot(m_) - 1.0);
    if (norm_residual > 2.0 * tol.norm) {
        throw EmbeddingInvariantViolated("SphereEmbedding: ||b||_{H_c} != 1",
                                         norm_residual);
    }
    const double consistency =
        (kernel_->matrix() * m_ - b_).cwiseAbs().maxCoeff() / b_.maxCoeff();
    if (consistency > tol.consistency) {
        throw EmbeddingInvariantViolated(
            "SphereEmbedding: K m and b disagree (insufficient Sinkhorn tolerance?)",
            consistency);
    }
}

SphereEmbedding SphereEmbedding::from_values(Vector b,
                                             std::shared_ptr<const GibbsKernel> kernel,
                                             EmbeddingTolerances tol) {
    if (!kernel) throw Error("SphereEmbedding: null kernel");
    Vector m = kernel->solve(b);
    return SphereEmbedding(std::move(b), std::move(m), std::move(kernel), tol);
}

SphereEmbedding SphereEmbedding::from_preimage(Vector preimage,
                                               std::shared_ptr<const GibbsKernel> kernel,
                                               bool renormalize, EmbeddingTolerances tol) {
    if (!kernel) throw Error("SphereEmbedding: null kernel");
    Vector b = kernel->apply(preimage);
    if (renormalize) {
        const double norm = std::sqrt(std::max(0.0, b.dot(preimage)));
        if (norm <= 0.0) throw EmbeddingInvariantViolated("from_preimage: zero norm", norm);
        b /= norm;
        preimage /= norm;
    }
    return SphereEmbedding(std::move(b), std::move(preimage), std::move(kernel), tol);
}

SphereEmbedding embed(const DiscreteMeasure& mu, std::shared_ptr<const GibbsKernel> kernel,
                      const SinkhornConfig& cfg, EmbeddingTolerances tol) {
    if (!kernel) throw Error("embed: null kernel");
    if (mu.mode() != MeasureMode::Eulerian || mu.size() != kernel->size()) {
        throw Error("embed: Eulerian measure on the kernel's point cloud required");
    }
    const SelfPotential self = solve_self_potential(mu, kernel->epsilon(), cfg);
    const Vector b = (-self.f / kernel->epsilon()).array().exp().matrix();
    // m = exp(f_mu/eps) mu in log-domain, so zero weights stay exactly zero.
    const Vector m = (mu.weights().array().log() + self.f.array() / kernel->epsilon())
                         .exp()
                         .matrix();
    return SphereEmbedding(b, m, std::move(kernel), tol);
}

DiscreteMeasure unembed(const SphereEmbedding& b) {
    const auto& space = b.kernel()->space();
    if (!space) throw Error("unembed: kernel carries no space");
    const double cone = b.preimage().minCoeff();
    if (cone < -1e-6) {
        throw NotInCone("unembed: preimage has negative mass " + std::to_string(cone));
    }
    Vector weights = b.values().cwiseProduct(b.preimage().cwiseMax(0.0));
    const double mass = weights.sum();
    if (std::abs(mass - 1.0) > 1e-8) {
        throw EmbeddingInvariantViolated("unembed: total mass drifted from 1",
                                         std::abs(mass - 1.0));
    }
    weights /= mass;
    return DiscreteMeasure::eulerian(space, std::move(weights));
}

double hc_distance(const SphereEmbedding& b1, const SphereEmbedding& b2) {
    if (b1.size() != b2.size()) throw DimensionMismatch("hc_distance: size mismatch");
    const Vector dm = b1.preimage() - b2.preimage();
    const Vector db = b1.values() - b2.values();
    return std::sqrt(std::max(0.0, dm.dot(db)));
}

double hc_pairing(const GibbsKernel& kernel, const Vector& phi, const Vector& psi) {
    return kernel.solve(phi).dot(psi);
}

PotentialOperator::PotentialOperator(Vector values,
                                     std::shared_ptr<const GibbsKernel> kernel)
    : v_(std::move(values)), kernel_(std::move(kernel)) {
    if (!kernel_) throw Error("PotentialOperator: null kernel");
    if (v_.size() != kernel_->size()) {
        throw DimensionMismatch("PotentialOperator: potential/kernel size mismatch");
    }
}

Vector PotentialOperator::v_star(const Vector& phi) const {
    return kernel_->apply(v_.cwiseProduct(kernel_->solve(phi)));
}

Vector PotentialOperator::w_apply(const Vector& phi) const {
    return (2.0 / epsilon()) * (v_.cwiseProduct(phi) - v_star(phi));
}

Vector PotentialOperator::w_apply_preimage(const Vector& m) const {
    const Vector b = kernel_->apply(m);
    return (2.0 / epsilon()) * (v_.cwiseProduct(b) - kernel_->apply(v_.cwiseProduct(m)));
}

double PotentialOperator::energy(const SphereEmbedding& b) const {
    return b.preimage().cwiseProduct(v_).dot(b.values());
}

Matrix PotentialOperator::wk_matrix() const {
    const Matrix& k = kernel_->matrix();
    return (2.0 / epsilon()) * (v_.asDiagonal() * k - k * v_.asDiagonal());
}

PressureVector make_pressure(Vector raw, const Vector& weights) {
    PressureVector out;
    out.support = weights.array() > 1e-12 * weights.maxCoeff();
    double clip = 0.0;
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        if (out.support(i)) {
            clip = std::max(clip, std::abs(raw(i)));
            raw(i) = 0.0;
        } else if (raw(i) > 0.0) {
            clip = std::max(clip, raw(i));
            raw(i) = 0.0;
        }
    }
    out.clip_magnitude = clip;
    out.p = std::move(raw);
    return out;
}

Matrix k_mu_matrix(const SphereEmbedding& b) {
    return b.values().cwiseInverse().asDiagonal() * b.kernel()->matrix() *
           b.preimage().asDiagonal();
}

Vector k_mu_eigenvalues(const SphereEmbedding& b) {
    // Conjugating by diag(sqrt(m/b)) makes K_mu symmetric PSD: entries
    // sqrt(m_i/b_i) K_ij sqrt(m_j/b_j). Zero-mass atoms contribute zero rows.
    const Vector s = (b.preimage().cwiseMax(0.0).cwiseQuotient(b.values())).cwiseSqrt();
    const Matrix sym = s.asDiagonal() * b.kernel()->matrix() * s.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) throw Error("k_mu_eigenvalues: eigensolver failed");
    return eig.eigenvalues();
}

namespace {

// H_mu[sigma] = b^{-1} H_c[b^{-1} sigma].
Vector h_mu_apply(const SphereEmbedding& b, const Vector& sigma) {
    return b.kernel()->apply(sigma.cwiseQuotient(b.values())).cwiseQuotient(b.values());
}

}  // namespace

double metric_g_mu(const SphereEmbedding& b, const Vector& sigma) {
    if (sigma.size() != b.size()) throw DimensionMismatch("metric_g_mu: size mismatch");
    if (std::abs(sigma.sum()) > 1e-12) {
        throw NotMassZero("metric_g_mu: sigma must have zero total mass");
    }
    const Vector a = b.measure_weights();
    const Matrix kmu = k_mu_matrix(b);
    const Matrix A = Matrix::Identity(b.size(), b.size()) - kmu * kmu;
    const Vector u = solve_mod_constants(A, a, h_mu_apply(b, sigma));
    return 0.5 * b.epsilon() * sigma.dot(u);
}

double metric_g_tilde(const SphereEmbedding& b, const Vector& bdot) {
    if (bdot.size() != b.size()) throw DimensionMismatch("metric_g_tilde: size mismatch");
    const double tangency = bdot.dot(b.preimage());
    if (std::abs(tangency) > 1e-8) {
        throw NotTangent("metric_g_tilde: <bdot, b>_{H_c} = " + std::to_string(tangency));
    }
    const double flat = b.kernel()->inner(bdot, bdot);
    const Vector a = b.measure_weights();
    const Vector phi = bdot.cwiseQuotient(b.values());
    const Matrix A = Matrix::Identity(b.size(), b.size()) - k_mu_matrix(b);
    const Vector u = solve_mod_constants(A, a, phi);
    return 0.5 * b.epsilon() * (flat + 2.0 * a.cwiseProduct(phi).dot(u));
}

Vector embedding_velocity(const SphereEmbedding& b, const Vector& mudot) {
    if (std::abs(mudot.sum()) > 1e-12) {
        throw NotMassZero("embedding_velocity: mudot must have zero total mass");
    }
    const Matrix A = Matrix::Identity(b.size(), b.size()) + k_mu_matrix(b);
    const Vector v = Eigen::PartialPivLU<Matrix>(A).solve(h_mu_apply(b, mudot));
    return b.values().cwiseProduct(v);
}

double criticality_residual(const PotentialOperator& op, const SphereEmbedding& b) {
    const Vector wb = op.w_apply_preimage(b.preimage());
    const Vector a = b.measure_weights();
    const double threshold = 1e-12 * a.maxCoeff();
    double res = 0.0;
    for (Eigen::Index i = 0; i < wb.size(); ++i) {
        if (a(i) > threshold) {
            res = std::max(res, std::abs(wb(i)));
        } else {
            res = std::max(res, std::max(0.0, -wb(i)));
        }
    }
    return res;
}

Vector schrodinger_derivative(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                              const Vector& nudot, double epsilon,
                              const SinkhornConfig& cfg) {
    if (nudot.size() != nu.size()) {
        throw DimensionMismatch("schrodinger_derivative: nudot/nu size mismatch");
    }
    if (std::abs(nudot.sum()) > 1e-12) {
        throw NotMassZero("schrodinger_derivative: nudot must have zero total mass");
    }
    const DualPotentials pot = solve_schrodinger(mu, nu, epsilon, cfg);

    // Generalized kernel k_{mu,nu}(x_i, y_j) = exp((f(x_i) + g(y_j) - c_ij)/eps).
    Matrix gk = -pairwise_squared_cost(mu.support(), nu.support());
    gk.colwise() += pot.f;
    gk.rowwise() += pot.g.transpose();
    gk = (gk / epsilon).array().exp().matrix();

    const Matrix k_mu_nu = gk * nu.weights().asDiagonal();
    const Matrix k_nu_mu = gk.transpose() * mu.weights().asDiagonal();
    const Matrix A =
        Matrix::Identity(mu.size(), mu.size()) - k_mu_nu * k_nu_mu;
    const Vector rhs = -epsilon * (gk * nudot);
    return solve_mod_constants(A, mu.weights(), rhs);
}

}  // namespace sinkflow
