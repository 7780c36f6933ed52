#pragma once

#include "error.hpp"
#include "model.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace bymcmc {

/// Bijection between original indices and positions in a reordered system.
class Permutation {
public:
    Permutation() = default;

    /// `order[p]` is the original index placed at position p.
    explicit Permutation(std::vector<std::size_t> order) : inverse_(std::move(order)), forward_(inverse_.size()) {
        std::vector<char> seen(inverse_.size(), 0);
        for (std::size_t p = 0; p < inverse_.size(); ++p) {
            const std::size_t i = inverse_[p];
            if (i >= inverse_.size() || seen[i]) throw DomainError("ordering is not a permutation");
            seen[i] = 1;
            forward_[i] = p;
        }
    }

    static Permutation identity(std::size_t n) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        return Permutation(std::move(order));
    }

    std::size_t size() const noexcept { return forward_.size(); }
    /// Position of original index i.
    std::size_t position(std::size_t i) const { return forward_[i]; }
    /// Original index at position p.
    std::size_t original(std::size_t p) const { return inverse_[p]; }

    /// out[position(i)] = in[i]
    void apply(std::span<const double> in, std::span<double> out) const {
        for (std::size_t i = 0; i < size(); ++i) out[forward_[i]] = in[i];
    }
    /// out[i] = in[position(i)]
    void unapply(std::span<const double> in, std::span<double> out) const {
        for (std::size_t i = 0; i < size(); ++i) out[i] = in[forward_[i]];
    }

private:
    std::vector<std::size_t> inverse_;
    std::vector<std::size_t> forward_;
};

/// Largest |position(i) - position(j)| over the edges of the graph.
inline std::size_t bandwidth(const Graph& g, const Permutation& perm) {
    std::size_t b = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j : g.neighbors(i)) {
            const std::size_t pi = perm.position(i), pj = perm.position(j);
            b = std::max(b, pi > pj ? pi - pj : pj - pi);
        }
    return b;
}

namespace detail {

// Breadth-first level structure from `root`; returns the nodes of the last level
// and the eccentricity.
inline std::pair<std::vector<std::size_t>, std::size_t> last_level(const Graph& g, std::size_t root) {
    std::vector<std::size_t> level(g.size(), static_cast<std::size_t>(-1));
    std::deque<std::size_t> queue{root};
    level[root] = 0;
    std::size_t depth = 0;
    while (!queue.empty()) {
        const std::size_t v = queue.front();
        queue.pop_front();
        depth = std::max(depth, level[v]);
        for (std::size_t w : g.neighbors(v))
            if (level[w] == static_cast<std::size_t>(-1)) {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
    }
    std::vector<std::size_t> last;
    for (std::size_t v = 0; v < g.size(); ++v)
        if (level[v] == depth) last.push_back(v);
    return {last, depth};
}

// George-Liu pseudo-peripheral node search inside the component of `start`.
inline std::size_t pseudo_peripheral(const Graph& g, std::size_t start) {
    std::size_t root = start;
    auto [last, ecc] = last_level(g, root);
    for (;;) {
        std::size_t best = last.front();
        for (std::size_t v : last)
            if (g.degree(v) < g.degree(best)) best = v;
        auto [next_last, next_ecc] = last_level(g, best);
        if (next_ecc <= ecc) return root;
        root = best;
        last = std::move(next_last);
        ecc = next_ecc;
    }
}

} // namespace detail

/// Reverse Cuthill-McKee ordering of a sparsity pattern.
///
/// Every component is numbered from a pseudo-peripheral node, neighbours visited in
/// order of increasing degree. The identity ordering is returned instead whenever it
/// has the smaller bandwidth.
inline Permutation rcm_ordering(const Graph& pattern) {
    const std::size_t n = pattern.size();
    std::vector<std::size_t> order;
    order.reserve(n);
    std::vector<char> placed(n, 0);
    for (;;) {
        std::size_t start = n;
        for (std::size_t v = 0; v < n; ++v)
            if (!placed[v] && (start == n || pattern.degree(v) < pattern.degree(start))) start = v;
        if (start == n) break;
        const std::size_t root = detail::pseudo_peripheral(pattern, start);
        std::deque<std::size_t> queue{root};
        placed[root] = 1;
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            order.push_back(v);
            std::vector<std::size_t> next;
            for (std::size_t w : pattern.neighbors(v))
                if (!placed[w]) {
                    placed[w] = 1;
                    next.push_back(w);
                }
            std::stable_sort(next.begin(), next.end(),
                             [&](std::size_t a, std::size_t b) { return pattern.degree(a) < pattern.degree(b); });
            queue.insert(queue.end(), next.begin(), next.end());
        }
    }
    std::reverse(order.begin(), order.end());
    Permutation rcm(std::move(order));
    Permutation id = Permutation::identity(n);
    return bandwidth(pattern, rcm) <= bandwidth(pattern, id) ? rcm : id;
}

/// Symmetric band matrix; only the lower band is stored.
///
/// Row i keeps entries A(i, i - b) .. A(i, i) contiguously, so the storage is
/// order x (b + 1) with element (i, j) at data[i * (b + 1) + b - (i - j)].
/// Entries of the first rows that fall left of column 0 are padding and stay zero.
class BandMatrix {
public:
    BandMatrix() = default;
    BandMatrix(std::size_t order, std::size_t bandwidth)
        : order_(order), bandwidth_(bandwidth), data_(order * (bandwidth + 1), 0.0) {}

    std::size_t order() const noexcept { return order_; }
    std::size_t bandwidth() const noexcept { return bandwidth_; }

    bool in_band(std::size_t i, std::size_t j) const noexcept {
        return (i >= j ? i - j : j - i) <= bandwidth_;
    }

    /// Lower-band element (i, j), j <= i <= j + b.
    double& lower(std::size_t i, std::size_t j) { return data_[i * (bandwidth_ + 1) + bandwidth_ + j - i]; }
    double lower(std::size_t i, std::size_t j) const { return data_[i * (bandwidth_ + 1) + bandwidth_ + j - i]; }

    /// Symmetric read of any element (zero outside the band).
    double operator()(std::size_t i, std::size_t j) const {
        if (i < j) std::swap(i, j);
        return i - j <= bandwidth_ ? lower(i, j) : 0.0;
    }

    /// Adds v to A(i, j) (and implicitly to A(j, i)).
    void add(std::size_t i, std::size_t j, double v) {
        if (i < j) std::swap(i, j);
        if (i - j > bandwidth_) throw DomainError("element outside the band");
        lower(i, j) += v;
    }

    /// Row i of the stored lower band: columns i - b .. i.
    std::span<double> row(std::size_t i) { return {data_.data() + i * (bandwidth_ + 1), bandwidth_ + 1}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * (bandwidth_ + 1), bandwidth_ + 1}; }

    /// y = A x for the full symmetric matrix.
    std::vector<double> multiply(std::span<const double> x) const {
        if (x.size() != order_) throw DomainError("dimension mismatch in band multiply");
        std::vector<double> y(order_, 0.0);
        for (std::size_t i = 0; i < order_; ++i) {
            const std::size_t j0 = i >= bandwidth_ ? i - bandwidth_ : 0;
            double s = lower(i, i) * x[i];
            for (std::size_t j = j0; j < i; ++j) {
                const double a = lower(i, j);
                s += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += s;
        }
        return y;
    }

    /// x^T A x
    double quadratic_form(std::span<const double> x) const {
        if (x.size() != order_) throw DomainError("dimension mismatch in band quadratic form");
        double s = 0.0;
        for (std::size_t i = 0; i < order_; ++i) {
            const std::size_t j0 = i >= bandwidth_ ? i - bandwidth_ : 0;
            double off = 0.0;
            for (std::size_t j = j0; j < i; ++j) off += lower(i, j) * x[j];
            s += x[i] * (lower(i, i) * x[i] + 2.0 * off);
        }
        return s;
    }

private:
    std::size_t order_ = 0;
    std::size_t bandwidth_ = 0;
    std::vector<double> data_;
};

/// Band Cholesky factorization A = L L^T. L keeps the bandwidth of A.
///
/// Throws NotPositiveDefiniteError carrying the failing pivot.
inline BandMatrix band_cholesky(BandMatrix a) {
    const std::size_t n = a.order();
    const std::size_t b = a.bandwidth();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j0 = i >= b ? i - b : 0;
        auto ri = a.row(i);
        for (std::size_t j = j0; j <= i; ++j) {
            // columns k in [max(j0, j - b), j) are shared by rows i and j
            const std::size_t k0 = std::max(j0, j >= b ? j - b : std::size_t{0});
            const auto rj = a.row(j);
            const double* pi = ri.data() + b + k0 - i;
            const double* pj = rj.data() + b + k0 - j;
            double s = a.lower(i, j);
            for (std::size_t k = k0; k < j; ++k) s -= *pi++ * *pj++;
            if (j < i) {
                a.lower(i, j) = s / a.lower(j, j);
            } else {
                if (!(s > 0.0) || !std::isfinite(s)) throw NotPositiveDefiniteError(i);
                a.lower(i, i) = std::sqrt(s);
            }
        }
    }
    return a;
}

/// log det(L L^T) = 2 sum log L_ii.
inline double log_det_from_factor(const BandMatrix& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.order(); ++i) s += std::log(l.lower(i, i));
    return 2.0 * s;
}

/// Solves L y = rhs in place.
inline void solve_lower_in_place(const BandMatrix& l, std::span<double> y) {
    const std::size_t b = l.bandwidth();
    for (std::size_t i = 0; i < l.order(); ++i) {
        const std::size_t j0 = i >= b ? i - b : 0;
        double s = y[i];
        for (std::size_t j = j0; j < i; ++j) s -= l.lower(i, j) * y[j];
        y[i] = s / l.lower(i, i);
    }
}

/// Solves L^T x = rhs in place.
inline void solve_upper_in_place(const BandMatrix& l, std::span<double> x) {
    const std::size_t b = l.bandwidth();
    for (std::size_t i = l.order(); i-- > 0;) {
        x[i] /= l.lower(i, i);
        const double xi = x[i];
        const std::size_t j0 = i >= b ? i - b : 0;
        for (std::size_t j = j0; j < i; ++j) x[j] -= l.lower(i, j) * xi;
    }
}

/// Solves (L L^T) x = rhs by forward and back substitution.
inline std::vector<double> solve(const BandMatrix& l, std::span<const double> rhs) {
    if (rhs.size() != l.order()) throw DomainError("dimension mismatch in band solve");
    std::vector<double> x(rhs.begin(), rhs.end());
    solve_lower_in_place(l, x);
    solve_upper_in_place(l, x);
    return x;
}

/// ||L^T x||^2 = x^T (L L^T) x.
inline double factor_quadratic_form(const BandMatrix& l, std::span<const double> x) {
    const std::size_t n = l.order();
    const std::size_t b = l.bandwidth();
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j0 = i >= b ? i - b : 0;
        for (std::size_t j = j0; j <= i; ++j) y[j] += l.lower(i, j) * x[i];
    }
    double s = 0.0;
    for (double v : y) s += v * v;
    return s;
}

/// Zero-mean Gaussian draw with precision L L^T (covariance (L L^T)^{-1}):
/// back-substitutes a standard normal vector against L^T.
inline std::vector<double> sample_gaussian(const BandMatrix& l, Engine& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> z(l.order());
    for (auto& v : z) v = normal(rng);
    solve_upper_in_place(l, z);
    return z;
}

} // namespace bymcmc
