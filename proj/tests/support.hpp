#pragma once

#include "bymcmc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace testsupport {

inline double normal_log_pdf(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

inline double t_log_pdf(double x, double nu) {
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
           0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal target with a Student-t proposal, both normalized.
struct NormalTPair {
    double nu = 4.0;
    /// Proposal scale; below 1 with a normal proposal gives an unbounded ratio.
    double scale = 1.0;
    bool normal_proposal = false;

    std::size_t dimension() const { return 1; }

    double log_proposal(double x) const {
        const double z = x / scale;
        return (normal_proposal ? normal_log_pdf(z) : t_log_pdf(z, nu)) - std::log(scale);
    }

    bymcmc::WeightedPoint draw(bymcmc::Engine& rng) const {
        double z;
        if (normal_proposal) z = std::normal_distribution<double>()(rng);
        else z = std::student_t_distribution<double>(nu)(rng);
        const double x = scale * z;
        return {{x}, normal_log_pdf(x), log_proposal(x)};
    }

    double log_ratio(std::span<const double> x, std::span<double> g) const {
        const double h = 1e-6;
        auto f = [&](double v) { return normal_log_pdf(v) - log_proposal(v); };
        if (!g.empty()) g[0] = (f(x[0] + h) - f(x[0] - h)) / (2.0 * h);
        return f(x[0]);
    }
};

/// The target used as its own proposal.
struct SelfPair {
    std::size_t dimension() const { return 1; }
    bymcmc::WeightedPoint draw(bymcmc::Engine& rng) const {
        const double x = std::normal_distribution<double>()(rng);
        return {{x}, normal_log_pdf(x), normal_log_pdf(x)};
    }
};

/// Two-sided one-sample Kolmogorov-Smirnov test: statistic and asymptotic p-value.
inline std::pair<double, double> ks_test(std::vector<double> x, double (*cdf)(double)) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-16) break;
    }
    return {d, std::clamp(p, 0.0, 1.0)};
}

/// Dataset on a given graph with the given counts and expected counts.
inline bymcmc::SpatialDataset make_dataset(bymcmc::Graph g, std::vector<std::int64_t> y, std::vector<double> e) {
    bymcmc::SpatialDataset d;
    d.adjacency = std::move(g);
    d.counts = std::move(y);
    d.expected = std::move(e);
    for (std::size_t i = 0; i < d.counts.size(); ++i) d.region_ids.push_back("r" + std::to_string(i + 1));
    return d;
}

/// Random connected graph: a random spanning tree plus extra edges.
inline bymcmc::Graph random_connected_graph(std::size_t n, std::size_t extra, bymcmc::Engine& rng) {
    bymcmc::Graph g(n);
    for (std::size_t i = 1; i < n; ++i) g.add_edge(i, std::uniform_int_distribution<std::size_t>(0, i - 1)(rng));
    for (std::size_t k = 0; k < extra; ++k) {
        std::uniform_int_distribution<std::size_t> u(0, n - 1);
        const auto a = u(rng), b = u(rng);
        if (a != b) g.add_edge(a, b);
    }
    return g;
}

inline bymcmc::SpatialDataset random_dataset(std::size_t n, bymcmc::Engine& rng, bool allow_zero = true) {
    auto g = random_connected_graph(n, n / 2, rng);
    std::vector<std::int64_t> y(n);
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::uniform_int_distribution<std::int64_t>(allow_zero ? 0 : 1, 30)(rng);
        e[i] = std::uniform_real_distribution<double>(2.0, 20.0)(rng);
    }
    return make_dataset(std::move(g), std::move(y), std::move(e));
}

/// Dense Laplacian of a graph, built from the adjacency alone.
inline Eigen::MatrixXd dense_laplacian(const bymcmc::Graph& g) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && g.adjacent(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) {
                q(i, j) = -1.0;
                q(i, i) += 1.0;
            }
    return q;
}

/// Dense C assembled from the data directly.
inline Eigen::MatrixXd dense_C(const bymcmc::SpatialDataset& d, double tau_h, double tau_c, double delta) {
    const auto n = static_cast<Eigen::Index>(d.n_regions());
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto y = d.counts[static_cast<std::size_t>(i)];
        v(i, i) = y == 0 ? 0.5 : static_cast<double>(y);
    }
    const Eigen::MatrixXd qt = dense_laplacian(d.adjacency) + delta * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd c(2 * n, 2 * n);
    c << v + tau_h * Eigen::MatrixXd::Identity(n, n), v, v, v + tau_c * qt;
    return c;
}

inline Eigen::VectorXd dense_D(const bymcmc::SpatialDataset& d) {
    const auto n = static_cast<Eigen::Index>(d.n_regions());
    Eigen::VectorXd out(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double y = d.counts[k] == 0 ? 0.5 : static_cast<double>(d.counts[k]);
        out(i) = out(n + i) = -2.0 * y * std::log(y / d.expected[k]);
    }
    return out;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Source bound to a synthetic lattice with the default proposal fit.
inline bymcmc::SpatialProposalSource lattice_source(std::size_t rows, std::size_t cols, double tau_h, double tau_c,
                                                   double base_E, std::uint64_t seed,
                                                   bymcmc::ProposalConfig pc = {}) {
    auto syn = bymcmc::synthesize_dataset(rows, cols, tau_h, tau_c, base_E, seed);
    const auto q = bymcmc::build_precision_matrix(syn.data.adjacency);
    const auto ctx = bymcmc::compute_mu_hat(syn.data);
    const bymcmc::Hyperparameters hyper;
    const auto spec = bymcmc::fit_proposal(ctx, hyper, q, pc);
    return bymcmc::SpatialProposalSource(bymcmc::PosteriorDensity(syn.data, hyper, q), ctx, spec);
}

} // namespace testsupport
