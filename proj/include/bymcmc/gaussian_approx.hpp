#pragma once

#include "band_linalg.hpp"
#include "error.hpp"
#include "model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace bymcmc {

/// Band layout of the 2N x 2N matrix C: the sparsity pattern couples theta_i with
/// phi_i (the V^-1 blocks) and phi_i with phi_j for neighbouring regions.
/// Original index i < N is theta_i, N + i is phi_i.
struct CLayout {
    Graph pattern;
    Permutation perm;
    std::size_t bandwidth = 0;
};

inline std::shared_ptr<const CLayout> make_c_layout(const Graph& adjacency) {
    const std::size_t n = adjacency.size();
    CLayout layout;
    layout.pattern = Graph(2 * n);
    for (std::size_t i = 0; i < n; ++i) layout.pattern.add_edge(i, n + i);
    for (auto [i, j] : adjacency.edges()) layout.pattern.add_edge(n + i, n + j);
    layout.perm = rcm_ordering(layout.pattern);
    layout.bandwidth = bandwidth(layout.pattern, layout.perm);
    return std::make_shared<const CLayout>(std::move(layout));
}

/// Pieces of the Gaussian approximation that do not depend on the precisions.
struct ApproximationContext {
    std::vector<double> mu_hat;      // log(Y_i / E_i), zero counts replaced by 0.5
    std::vector<double> v_inv_diag;  // adjusted Y_i
    std::vector<double> d;           // (-2 mu_hat' V^-1, -2 mu_hat' V^-1)
    double k_const = 0.0;            // mu_hat' V^-1 mu_hat
    std::shared_ptr<const CLayout> layout;

    std::size_t n_regions() const noexcept { return mu_hat.size(); }
};

/// Builds mu_hat, V^-1, D and k from the data. Zero counts are replaced by 0.5 here
/// only; the exact posterior keeps the raw counts.
inline ApproximationContext compute_mu_hat(const SpatialDataset& data) {
    validate(data);
    const std::size_t n = data.n_regions();
    ApproximationContext ctx;
    ctx.mu_hat.resize(n);
    ctx.v_inv_diag.resize(n);
    ctx.d.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = data.counts[i] == 0 ? 0.5 : static_cast<double>(data.counts[i]);
        ctx.v_inv_diag[i] = y;
        ctx.mu_hat[i] = std::log(y / data.expected[i]);
        ctx.d[i] = ctx.d[n + i] = -2.0 * ctx.mu_hat[i] * y;
        ctx.k_const += ctx.mu_hat[i] * y * ctx.mu_hat[i];
    }
    ctx.layout = make_c_layout(data.adjacency);
    return ctx;
}

/// C(tau_h, tau_c) = [V^-1 + tau_h I, V^-1; V^-1, V^-1 + tau_c Q~], stored permuted in band form.
class CMatrix {
public:
    CMatrix(double tau_h, double tau_c, BandMatrix band, std::shared_ptr<const CLayout> layout)
        : tau_h_(tau_h), tau_c_(tau_c), band_(std::move(band)), layout_(std::move(layout)) {}

    double tau_h() const noexcept { return tau_h_; }
    double tau_c() const noexcept { return tau_c_; }
    std::size_t order() const noexcept { return band_.order(); }
    /// The permuted band matrix P C P^T.
    const BandMatrix& band() const noexcept { return band_; }
    const CLayout& layout() const noexcept { return *layout_; }
    const std::shared_ptr<const CLayout>& layout_ptr() const noexcept { return layout_; }

    /// Element in the original (theta, phi) ordering.
    double operator()(std::size_t i, std::size_t j) const {
        return band_(layout_->perm.position(i), layout_->perm.position(j));
    }

    Eigen::MatrixXd dense() const {
        const auto n = static_cast<Eigen::Index>(order());
        Eigen::MatrixXd m(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                m(i, j) = (*this)(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        return m;
    }

private:
    double tau_h_;
    double tau_c_;
    BandMatrix band_;
    std::shared_ptr<const CLayout> layout_;
};

inline CMatrix assemble_C(double tau_h, double tau_c, const ApproximationContext& ctx,
                          const PrecisionGraphMatrix& q_tilde) {
    if (!(tau_h > 0.0) || !(tau_c > 0.0) || !std::isfinite(tau_h) || !std::isfinite(tau_c))
        throw DomainError("tau_h and tau_c must be positive and finite");
    const std::size_t n = ctx.n_regions();
    if (q_tilde.size() != n) throw DomainError("Q~ and context sizes differ");
    const auto& layout = *ctx.layout;
    const auto& p = layout.perm;
    BandMatrix c(2 * n, layout.bandwidth);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = ctx.v_inv_diag[i];
        c.add(p.position(i), p.position(i), v + tau_h);
        c.add(p.position(n + i), p.position(n + i), v + tau_c * q_tilde.diagonal(i));
        c.add(p.position(i), p.position(n + i), v);
    }
    for (auto [i, j] : q_tilde.edges()) c.add(p.position(n + i), p.position(n + j), -tau_c);
    return CMatrix(tau_h, tau_c, std::move(c), ctx.layout);
}

/// Coordinates in which C is factored. `theta_phi` factors C itself. `sum_phi` uses
/// u = (theta + phi, phi), in which the quadratic form reads
///   w'V^-1 w + tau_h (w - phi)'(w - phi) + tau_c phi'Q~ phi,
/// so every pivot is formed without cancellation when tau_h is small against V^-1.
/// Both have the same band pattern and the same determinant.
enum class CFactorBasis { theta_phi, sum_phi };

inline CFactorBasis choose_basis(double tau_h, const ApproximationContext& ctx) {
    const double vmax = *std::max_element(ctx.v_inv_diag.begin(), ctx.v_inv_diag.end());
    return tau_h <= vmax ? CFactorBasis::sum_phi : CFactorBasis::theta_phi;
}

/// The matrix factored for C(tau_h, tau_c) in the given basis, permuted to band form.
inline BandMatrix assemble_factor_matrix(double tau_h, double tau_c, const ApproximationContext& ctx,
                                         const PrecisionGraphMatrix& q_tilde, CFactorBasis basis) {
    if (basis == CFactorBasis::theta_phi) return assemble_C(tau_h, tau_c, ctx, q_tilde).band();
    if (!(tau_h > 0.0) || !(tau_c > 0.0) || !std::isfinite(tau_h) || !std::isfinite(tau_c))
        throw DomainError("tau_h and tau_c must be positive and finite");
    const std::size_t n = ctx.n_regions();
    if (q_tilde.size() != n) throw DomainError("Q~ and context sizes differ");
    const auto& p = ctx.layout->perm;
    BandMatrix a(2 * n, ctx.layout->bandwidth);
    for (std::size_t i = 0; i < n; ++i) {
        a.add(p.position(i), p.position(i), ctx.v_inv_diag[i] + tau_h);
        a.add(p.position(n + i), p.position(n + i), tau_h + tau_c * q_tilde.diagonal(i));
        a.add(p.position(i), p.position(n + i), -tau_h);
    }
    for (auto [i, j] : q_tilde.edges()) a.add(p.position(n + i), p.position(n + j), -tau_c);
    return a;
}

/// The conditional Gaussian s2(Theta | tau_h, tau_c) = N(mu_N, C^-1), with C factored.
/// Theta is always in the original (theta, phi) ordering at the interface.
class ConditionalGaussian {
public:
    ConditionalGaussian(double tau_h, double tau_c, CFactorBasis basis, std::shared_ptr<const CLayout> layout,
                        BandMatrix factor, std::vector<double> mean_permuted)
        : tau_h_(tau_h), tau_c_(tau_c), basis_(basis), layout_(std::move(layout)), factor_(std::move(factor)),
          mean_perm_(std::move(mean_permuted)), log_det_(log_det_from_factor(factor_)) {}

    double tau_h() const noexcept { return tau_h_; }
    double tau_c() const noexcept { return tau_c_; }
    CFactorBasis basis() const noexcept { return basis_; }
    /// Band Cholesky factor of the permuted matrix in basis().
    const BandMatrix& factor() const noexcept { return factor_; }
    /// log det C
    double log_det() const noexcept { return log_det_; }
    std::size_t dimension() const noexcept { return mean_perm_.size(); }

    /// mu_N = -C^-1 D^T / 2.
    std::vector<double> mean() const {
        std::vector<double> u(dimension());
        layout_->perm.unapply(mean_perm_, u);
        return from_basis(std::move(u));
    }

    /// (Theta - mu_N)^T C (Theta - mu_N)
    double quadratic_form(std::span<const double> theta) const {
        return factor_quadratic_form(factor_, permuted_residual(theta));
    }

    /// C (Theta - mu_N)
    std::vector<double> precision_times_residual(std::span<const double> theta) const {
        const auto r = permuted_residual(theta);
        // A r with A = L L^T
        std::vector<double> t(r.size(), 0.0);
        const std::size_t b = factor_.bandwidth();
        for (std::size_t i = 0; i < r.size(); ++i) {
            const std::size_t j0 = i >= b ? i - b : 0;
            for (std::size_t j = j0; j <= i; ++j) t[j] += factor_.lower(i, j) * r[i];
        }
        std::vector<double> y(r.size(), 0.0);
        for (std::size_t i = 0; i < r.size(); ++i) {
            const std::size_t j0 = i >= b ? i - b : 0;
            for (std::size_t j = j0; j <= i; ++j) y[i] += factor_.lower(i, j) * t[j];
        }
        std::vector<double> out(dimension());
        layout_->perm.unapply(y, out);
        if (basis_ == CFactorBasis::sum_phi) {
            // C = T^T A T with T (theta, phi) = (theta + phi, phi)
            const std::size_t n = dimension() / 2;
            for (std::size_t i = 0; i < n; ++i) out[n + i] += out[i];
        }
        return out;
    }

    /// Mean-free draw z ~ N(0, C^-1). Also returns ||eps||^2 of the underlying
    /// standard normal vector, which equals z^T C z.
    std::pair<std::vector<double>, double> sample_centered(Engine& rng) const {
        std::normal_distribution<double> normal;
        std::vector<double> z(dimension());
        double norm2 = 0.0;
        for (auto& v : z) {
            v = normal(rng);
            norm2 += v * v;
        }
        solve_upper_in_place(factor_, z);
        std::vector<double> u(dimension());
        layout_->perm.unapply(z, u);
        return {from_basis(std::move(u)), norm2};
    }

private:
    std::vector<double> from_basis(std::vector<double> u) const {
        if (basis_ == CFactorBasis::sum_phi) {
            const std::size_t n = u.size() / 2;
            for (std::size_t i = 0; i < n; ++i) u[i] -= u[n + i];
        }
        return u;
    }

    std::vector<double> permuted_residual(std::span<const double> theta) const {
        if (theta.size() != dimension()) throw DomainError("dimension mismatch in quadratic form");
        std::vector<double> u(theta.begin(), theta.end());
        if (basis_ == CFactorBasis::sum_phi) {
            const std::size_t n = u.size() / 2;
            for (std::size_t i = 0; i < n; ++i) u[i] += u[n + i];
        }
        std::vector<double> r(dimension());
        layout_->perm.apply(u, r);
        for (std::size_t k = 0; k < r.size(); ++k) r[k] -= mean_perm_[k];
        return r;
    }

    double tau_h_;
    double tau_c_;
    CFactorBasis basis_;
    std::shared_ptr<const CLayout> layout_;
    BandMatrix factor_;
    std::vector<double> mean_perm_;
    double log_det_;
};

/// Factors C(tau_h, tau_c) and solves C mu_N = -D^T / 2. The basis defaults to
/// choose_basis(tau_h, ctx). Throws IndefiniteCError when the factorization fails.
inline ConditionalGaussian conditional_gaussian_params(double tau_h, double tau_c, const ApproximationContext& ctx,
                                                       const PrecisionGraphMatrix& q_tilde,
                                                       std::optional<CFactorBasis> basis = std::nullopt) {
    const CFactorBasis b = basis.value_or(choose_basis(tau_h, ctx));
    BandMatrix l;
    try {
        l = band_cholesky(assemble_factor_matrix(tau_h, tau_c, ctx, q_tilde, b));
    } catch (const NotPositiveDefiniteError& e) {
        throw IndefiniteCError(e.pivot(), tau_h, tau_c);
    }
    const std::size_t n = ctx.n_regions();
    std::vector<double> rhs(2 * n);
    for (std::size_t k = 0; k < 2 * n; ++k) rhs[k] = -0.5 * ctx.d[k];
    if (b == CFactorBasis::sum_phi)
        for (std::size_t i = 0; i < n; ++i) rhs[n + i] -= rhs[i];
    std::vector<double> rhs_perm(2 * n);
    ctx.layout->perm.apply(rhs, rhs_perm);
    solve_lower_in_place(l, rhs_perm);
    solve_upper_in_place(l, rhs_perm);
    return ConditionalGaussian(tau_h, tau_c, b, ctx.layout, std::move(l), std::move(rhs_perm));
}

/// log s1 from an already factored C: prior and power terms, -1/2 log det C and
/// 1/8 D C^-1 D^T (= -1/4 D mu_N).
inline double log_s1(const ConditionalGaussian& cond, const ApproximationContext& ctx, const Hyperparameters& hyper,
                     const PrecisionGraphMatrix& q) {
    const double tau_h = cond.tau_h();
    const double tau_c = cond.tau_c();
    const double n = static_cast<double>(ctx.n_regions());
    const double m = static_cast<double>(q.rank());
    const auto mu = cond.mean();
    double dmu = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) dmu += ctx.d[k] * mu[k];
    return (0.5 * n + hyper.alpha_h - 1.0) * std::log(tau_h) + (0.5 * m + hyper.alpha_c - 1.0) * std::log(tau_c) -
           tau_h / hyper.beta_h - tau_c / hyper.beta_c - 0.5 * cond.log_det() - 0.25 * dmu;
}

/// Log of the approximate marginal s1(tau_h, tau_c | Y), up to the constant
/// log_s1_offset(ctx) which is the same for every (tau_h, tau_c).
///
/// `q_tilde` enters C; `q` supplies the rank M in the tau_c exponent.
inline double log_s1(double tau_h, double tau_c, const ApproximationContext& ctx, const Hyperparameters& hyper,
                     const PrecisionGraphMatrix& q_tilde, const PrecisionGraphMatrix& q) {
    return log_s1(conditional_gaussian_params(tau_h, tau_c, ctx, q_tilde), ctx, hyper, q);
}

/// log_s1 + log_s1_offset equals the log of the integral of the approximate joint
/// posterior over Theta (without normalizing constants of the priors).
inline double log_s1_offset(const ApproximationContext& ctx) {
    return static_cast<double>(ctx.n_regions()) * std::log(2.0 * std::numbers::pi) - 0.5 * ctx.k_const;
}

/// Closed-form maximizer of the approximate joint posterior in Theta:
///   phi_hat = (I + (tau_c/tau_h) S + tau_c V S)^-1 mu_hat,  theta_hat = (tau_c/tau_h) S phi_hat,
/// where S is the structure matrix passed in (Q, or Q~ to match C).
inline std::pair<std::vector<double>, std::vector<double>> theta_hat_phi_hat(double tau_h, double tau_c,
                                                                            const ApproximationContext& ctx,
                                                                            const PrecisionGraphMatrix& s) {
    if (!(tau_h > 0.0) || !(tau_c > 0.0)) throw DomainError("tau_h and tau_c must be positive");
    const auto n = static_cast<Eigen::Index>(ctx.n_regions());
    const Eigen::MatrixXd sd = s.dense();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) + (tau_c / tau_h) * sd;
    for (Eigen::Index i = 0; i < n; ++i) a.row(i) += tau_c / ctx.v_inv_diag[static_cast<std::size_t>(i)] * sd.row(i);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) throw SingularSystemError("theta_hat/phi_hat system is singular");
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(ctx.mu_hat.data(), n);
    const Eigen::VectorXd phi = lu.solve(mu);
    const Eigen::VectorXd theta = (tau_c / tau_h) * (sd * phi);
    return {std::vector<double>(theta.data(), theta.data() + n), std::vector<double>(phi.data(), phi.data() + n)};
}

/// Default Q~ shift: 1e-4 times the mean diagonal of Q.
inline double default_delta(const PrecisionGraphMatrix& q) {
    const double md = q.mean_degree();
    return 1e-4 * (md > 0.0 ? md : 1.0);
}

} // namespace bymcmc
