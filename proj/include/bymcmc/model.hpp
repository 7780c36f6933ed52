#pragma once

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bymcmc {

/// Undirected simple graph stored as sorted adjacency lists.
class Graph {
public:
    Graph() = default;
    explicit Graph(std::size_t n) : neighbors_(n) {}

    std::size_t size() const noexcept { return neighbors_.size(); }

    /// Adds the edge {i, j}. Returns false when it is already present.
    bool add_edge(std::size_t i, std::size_t j) {
        auto& a = neighbors_.at(i);
        auto it = std::lower_bound(a.begin(), a.end(), j);
        if (it != a.end() && *it == j) return false;
        a.insert(it, j);
        if (i != j) {
            auto& b = neighbors_.at(j);
            b.insert(std::lower_bound(b.begin(), b.end(), i), i);
        }
        return true;
    }

    bool adjacent(std::size_t i, std::size_t j) const {
        const auto& a = neighbors_.at(i);
        return std::binary_search(a.begin(), a.end(), j);
    }

    std::size_t degree(std::size_t i) const { return neighbors_.at(i).size(); }
    const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.at(i); }

    /// Edges as (i, j) pairs with i < j, in lexicographic order.
    std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j : neighbors_[i])
                if (i < j) out.emplace_back(i, j);
        return out;
    }

    bool has_self_loop() const {
        for (std::size_t i = 0; i < size(); ++i)
            if (adjacent(i, i)) return true;
        return false;
    }

    bool is_symmetric() const {
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j : neighbors_[i])
                if (j >= size() || !adjacent(j, i)) return false;
        return true;
    }

    /// Connected components, each sorted, ordered by smallest member.
    std::vector<std::vector<std::size_t>> connected_components() const {
        std::vector<std::vector<std::size_t>> comps;
        std::vector<char> seen(size(), 0);
        std::vector<std::size_t> stack;
        for (std::size_t s = 0; s < size(); ++s) {
            if (seen[s]) continue;
            comps.emplace_back();
            seen[s] = 1;
            stack.push_back(s);
            while (!stack.empty()) {
                const std::size_t v = stack.back();
                stack.pop_back();
                comps.back().push_back(v);
                for (std::size_t w : neighbors_[v])
                    if (!seen[w]) {
                        seen[w] = 1;
                        stack.push_back(w);
                    }
            }
            std::sort(comps.back().begin(), comps.back().end());
        }
        return comps;
    }

    /// Rook adjacency on a rows x cols lattice, row-major node numbering.
    static Graph lattice(std::size_t rows, std::size_t cols) {
        Graph g(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                if (c + 1 < cols) g.add_edge(i, i + 1);
                if (r + 1 < rows) g.add_edge(i, i + cols);
            }
        return g;
    }

    static Graph path(std::size_t n) {
        Graph g(n);
        for (std::size_t i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
        return g;
    }

private:
    std::vector<std::vector<std::size_t>> neighbors_;
};

/// Observed counts, expected counts and region adjacency.
struct SpatialDataset {
    std::vector<std::string> region_ids;
    std::vector<std::int64_t> counts;  // Y
    std::vector<double> expected;      // E
    Graph adjacency;

    std::size_t n_regions() const noexcept { return counts.size(); }
};

/// Throws DatasetError / DisconnectedGraphError when the dataset invariants fail.
inline void validate(const SpatialDataset& data) {
    const std::size_t n = data.counts.size();
    if (n == 0) throw DomainError("dataset has no regions");
    if (data.expected.size() != n || data.adjacency.size() != n)
        throw DomainError("dataset arrays disagree on the number of regions");
    if (!data.region_ids.empty() && data.region_ids.size() != n)
        throw DomainError("dataset region id list has the wrong length");
    auto id = [&](std::size_t i) { return data.region_ids.empty() ? std::to_string(i) : data.region_ids[i]; };
    for (std::size_t i = 0; i < n; ++i) {
        if (data.counts[i] < 0)
            throw DatasetError(DatasetError::Kind::negative_count, id(i), "negative count in region " + id(i));
        if (!(data.expected[i] > 0.0) || !std::isfinite(data.expected[i]))
            throw DatasetError(DatasetError::Kind::nonpositive_expected, id(i),
                               "expected count must be positive in region " + id(i));
        if (data.adjacency.adjacent(i, i))
            throw DatasetError(DatasetError::Kind::self_loop, id(i), "self-loop at region " + id(i));
    }
    if (!data.adjacency.is_symmetric()) throw DomainError("adjacency is not symmetric");
    auto comps = data.adjacency.connected_components();
    if (comps.size() != 1) throw DisconnectedGraphError(std::move(comps));
}

/// Gamma(shape, scale) priors on the two precisions.
///
/// NOTE: beta is a SCALE: the prior density is proportional to
/// tau^(alpha - 1) exp(-tau / beta). Pass 1/rate when porting rate-parametrized priors.
struct Hyperparameters {
    double alpha_h = 1.0;
    double beta_h = 100.0;
    double alpha_c = 1.0;
    double beta_c = 100.0;

    void validate() const {
        if (!(alpha_h > 0 && beta_h > 0 && alpha_c > 0 && beta_c > 0))
            throw DomainError("Gamma hyperparameters must be strictly positive");
        if (alpha_h < 1.0) throw DomainError("alpha_h must be >= 1 for the proposal to envelope the posterior");
    }
};

/// One point (theta, phi, tau_h, tau_c) of the posterior support.
///
/// The flat layout (tau_h, tau_c, theta_1..theta_N, phi_1..phi_N) is used by the
/// samplers and the samples file.
struct ModelState {
    std::vector<double> theta;
    std::vector<double> phi;
    double tau_h = 1.0;
    double tau_c = 1.0;

    std::vector<double> to_flat() const {
        std::vector<double> x;
        x.reserve(2 + theta.size() + phi.size());
        x.push_back(tau_h);
        x.push_back(tau_c);
        x.insert(x.end(), theta.begin(), theta.end());
        x.insert(x.end(), phi.begin(), phi.end());
        return x;
    }

    static ModelState from_flat(std::span<const double> x) {
        if (x.size() < 2 || x.size() % 2 != 0) throw DomainError("flat state has an invalid length");
        const std::size_t n = (x.size() - 2) / 2;
        ModelState s;
        s.tau_h = x[0];
        s.tau_c = x[1];
        s.theta.assign(x.begin() + 2, x.begin() + 2 + n);
        s.phi.assign(x.begin() + 2 + n, x.end());
        return s;
    }
};

/// Sparse symmetric N x N matrix Q + shift * I, where Q is the graph Laplacian of
/// the adjacency (Q_ii = degree, Q_ij = -1 for neighbours).
class PrecisionGraphMatrix {
public:
    PrecisionGraphMatrix() = default;

    std::size_t size() const noexcept { return degree_.size(); }
    const Graph& graph() const noexcept { return graph_; }
    const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }

    double shift() const noexcept { return shift_; }
    double diagonal(std::size_t i) const { return static_cast<double>(degree_.at(i)) + shift_; }
    double operator()(std::size_t i, std::size_t j) const {
        if (i == j) return diagonal(i);
        return graph_.adjacent(i, j) ? -1.0 : 0.0;
    }

    /// Number of connected components of the graph: the rank deficiency of the unshifted Q.
    std::size_t rank_deficiency() const noexcept { return shift_ == 0.0 ? components_ : 0; }
    /// M = N - rank_deficiency of the unshifted matrix (N - 1 on a connected map).
    std::size_t rank() const noexcept { return size() - components_; }

    /// Exact integer row sum of the unshifted matrix.
    std::int64_t row_sum(std::size_t i) const {
        std::int64_t s = static_cast<std::int64_t>(degree_.at(i));
        for (std::size_t j : graph_.neighbors(i)) s -= (j == i ? 0 : 1);
        return s;
    }

    /// Mean of the unshifted diagonal (mean degree).
    double mean_degree() const {
        double s = 0.0;
        for (auto d : degree_) s += static_cast<double>(d);
        return size() ? s / static_cast<double>(size()) : 0.0;
    }

    PrecisionGraphMatrix shifted(double delta) const {
        if (!(delta > 0.0)) throw DomainError("shift must be positive");
        PrecisionGraphMatrix q = *this;
        q.shift_ = shift_ + delta;
        q.eigen_ = std::make_shared<EigenCache>();
        return q;
    }

    /// x^T (Q + shift I) x
    double quadratic_form(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += diagonal(i) * x[i] * x[i];
        for (auto [i, j] : edges_) s -= 2.0 * x[i] * x[j];
        return s;
    }

    /// out = (Q + shift I) x
    void multiply(std::span<const double> x, std::span<double> out) const {
        for (std::size_t i = 0; i < size(); ++i) out[i] = diagonal(i) * x[i];
        for (auto [i, j] : edges_) {
            out[i] -= x[j];
            out[j] -= x[i];
        }
    }

    Eigen::MatrixXd dense() const {
        const auto n = static_cast<Eigen::Index>(size());
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) m(i, i) = diagonal(static_cast<std::size_t>(i));
        for (auto [i, j] : edges_) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = -1.0;
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = -1.0;
        }
        return m;
    }

    /// All eigenvalues in ascending order (computed on first use, then cached).
    const std::vector<double>& eigenvalues() const {
        std::call_once(eigen_->once, [this] {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense(), Eigen::EigenvaluesOnly);
            const auto& ev = solver.eigenvalues();
            eigen_->values.assign(ev.data(), ev.data() + ev.size());
        });
        return eigen_->values;
    }

    /// Eigenvalues with the rank_deficiency() zero eigenvalues removed.
    std::vector<double> nonzero_eigenvalues() const {
        const auto& ev = eigenvalues();
        return {ev.begin() + static_cast<std::ptrdiff_t>(rank_deficiency()), ev.end()};
    }

private:
    struct EigenCache {
        std::once_flag once;
        std::vector<double> values;
    };

    friend PrecisionGraphMatrix build_precision_matrix(const Graph& adjacency);

    Graph graph_;
    std::vector<std::size_t> degree_;
    std::vector<std::pair<std::size_t, std::size_t>> edges_;
    std::size_t components_ = 0;
    double shift_ = 0.0;
    std::shared_ptr<EigenCache> eigen_ = std::make_shared<EigenCache>();
};

/// Builds Q from the adjacency. Throws DisconnectedGraphError unless the graph is connected.
inline PrecisionGraphMatrix build_precision_matrix(const Graph& adjacency) {
    if (adjacency.size() == 0) throw DomainError("empty adjacency graph");
    if (adjacency.has_self_loop()) throw DomainError("adjacency has a self-loop");
    if (!adjacency.is_symmetric()) throw DomainError("adjacency is not symmetric");
    auto comps = adjacency.connected_components();
    if (comps.size() != 1) throw DisconnectedGraphError(std::move(comps));

    PrecisionGraphMatrix q;
    q.graph_ = adjacency;
    q.degree_.resize(adjacency.size());
    for (std::size_t i = 0; i < adjacency.size(); ++i) q.degree_[i] = adjacency.degree(i);
    q.edges_ = adjacency.edges();
    q.components_ = 1;
    return q;
}

/// Exact unnormalized log posterior of the BYM Poisson model, bound to one dataset.
///
/// Evaluations are pure; one instance may be shared between threads.
class PosteriorDensity {
public:
    PosteriorDensity(SpatialDataset data, Hyperparameters hyper, PrecisionGraphMatrix q)
        : data_(std::move(data)), hyper_(hyper), q_(std::move(q)) {
        if (q_.size() != data_.n_regions()) throw DomainError("Q and dataset sizes differ");
        if (q_.shift() != 0.0) throw DomainError("the posterior uses the unshifted Q");
    }

    const SpatialDataset& data() const noexcept { return data_; }
    const Hyperparameters& hyper() const noexcept { return hyper_; }
    const PrecisionGraphMatrix& q() const noexcept { return q_; }
    std::size_t n_regions() const noexcept { return data_.n_regions(); }
    std::size_t dimension() const noexcept { return 2 * n_regions() + 2; }

    /// log pi at a flat state. Returns -inf where exp(theta + phi) overflows or a
    /// precision is not positive.
    double operator()(std::span<const double> x) const {
        const std::size_t n = n_regions();
        const double tau_h = x[0];
        const double tau_c = x[1];
        if (!(tau_h > 0.0) || !(tau_c > 0.0)) return -std::numeric_limits<double>::infinity();
        const auto theta = x.subspan(2, n);
        const auto phi = x.subspan(2 + n, n);
        double like = 0.0;
        double tt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = theta[i] + phi[i];
            const double ew = std::exp(w);
            if (!std::isfinite(ew)) return -std::numeric_limits<double>::infinity();
            like += w * static_cast<double>(data_.counts[i]) - data_.expected[i] * ew;
            tt += theta[i] * theta[i];
        }
        return like - 0.5 * tau_h * tt - 0.5 * tau_c * q_.quadratic_form(phi) + log_precision_terms(tau_h, tau_c);
    }

    /// Gradient of log pi with respect to (log tau_h, log tau_c, theta, phi).
    void gradient_log_scale(std::span<const double> x, std::span<double> grad) const {
        const std::size_t n = n_regions();
        const double tau_h = x[0];
        const double tau_c = x[1];
        const auto theta = x.subspan(2, n);
        const auto phi = x.subspan(2 + n, n);
        std::vector<double> qphi(n);
        q_.multiply(phi, qphi);
        double tt = 0.0;
        double pqp = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = theta[i] + phi[i];
            const double dl = static_cast<double>(data_.counts[i]) - data_.expected[i] * std::exp(w);
            grad[2 + i] = dl - tau_h * theta[i];
            grad[2 + n + i] = dl - tau_c * qphi[i];
            tt += theta[i] * theta[i];
            pqp += phi[i] * qphi[i];
        }
        const double m = static_cast<double>(q_.rank());
        grad[0] = -0.5 * tau_h * tt + (0.5 * static_cast<double>(n) + hyper_.alpha_h - 1.0) - tau_h / hyper_.beta_h;
        grad[1] = -0.5 * tau_c * pqp + (0.5 * m + hyper_.alpha_c - 1.0) - tau_c / hyper_.beta_c;
    }

    /// Prior and normalizing-constant terms that depend only on the precisions.
    double log_precision_terms(double tau_h, double tau_c) const {
        const double n = static_cast<double>(n_regions());
        const double m = static_cast<double>(q_.rank());
        return (0.5 * n + hyper_.alpha_h - 1.0) * std::log(tau_h) + (0.5 * m + hyper_.alpha_c - 1.0) * std::log(tau_c) -
               tau_h / hyper_.beta_h - tau_c / hyper_.beta_c;
    }

private:
    SpatialDataset data_;
    Hyperparameters hyper_;
    PrecisionGraphMatrix q_;
};

/// Exact unnormalized log posterior
///   sum_i [(theta_i + phi_i) Y_i - E_i exp(theta_i + phi_i)] - tau_h/2 theta'theta - tau_c/2 phi'Q phi
///   + (N/2 + alpha_h - 1) log tau_h + (M/2 + alpha_c - 1) log tau_c - tau_h/beta_h - tau_c/beta_c.
///
/// Throws OverflowError instead of returning -inf when exp(theta_i + phi_i) overflows.
inline double log_unnormalized_posterior(const ModelState& state, const SpatialDataset& data,
                                         const Hyperparameters& hyper, const PrecisionGraphMatrix& q) {
    const std::size_t n = data.n_regions();
    if (state.theta.size() != n || state.phi.size() != n || q.size() != n)
        throw DomainError("state, dataset and Q dimensions differ");
    if (!(state.tau_h > 0.0) || !(state.tau_c > 0.0)) throw DomainError("precisions must be positive");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(std::exp(state.theta[i] + state.phi[i]))) throw OverflowError(i);
    double like = 0.0;
    double tt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = state.theta[i] + state.phi[i];
        like += w * static_cast<double>(data.counts[i]) - data.expected[i] * std::exp(w);
        tt += state.theta[i] * state.theta[i];
    }
    const double nn = static_cast<double>(n);
    const double m = static_cast<double>(q.rank());
    const double value = like - 0.5 * state.tau_h * tt - 0.5 * state.tau_c * q.quadratic_form(state.phi) +
                         (0.5 * nn + hyper.alpha_h - 1.0) * std::log(state.tau_h) +
                         (0.5 * m + hyper.alpha_c - 1.0) * std::log(state.tau_c) - state.tau_h / hyper.beta_h -
                         state.tau_c / hyper.beta_c;
    if (!std::isfinite(value)) throw OverflowError(n);
    return value;
}

} // namespace bymcmc
