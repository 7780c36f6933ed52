#pragma once

#include "error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bymcmc {

/// Sequence of states stored run-length encoded: consecutive repeats of a state (an
/// independence chain rejecting a proposal) share one stored row.
class Chain {
public:
    Chain() = default;
    explicit Chain(std::size_t dimension) : dim_(dimension) {}

    std::size_t dimension() const noexcept { return dim_; }
    /// Number of states in the sequence, repeats included.
    std::size_t size() const noexcept { return total_; }
    bool empty() const noexcept { return total_ == 0; }
    std::size_t distinct() const noexcept { return counts_.size(); }

    void push(std::span<const double> x) {
        if (x.size() != dim_) throw DomainError("state has the wrong dimension");
        rows_.insert(rows_.end(), x.begin(), x.end());
        counts_.push_back(1);
        ++total_;
    }
    /// Appends another copy of the last state.
    void repeat_last() {
        if (counts_.empty()) throw DomainError("cannot repeat the state of an empty chain");
        ++counts_.back();
        ++total_;
    }

    std::span<const double> distinct_row(std::size_t k) const { return {rows_.data() + k * dim_, dim_}; }
    std::size_t multiplicity(std::size_t k) const { return counts_[k]; }

    /// State number i of the expanded sequence (binary search over the runs).
    std::span<const double> operator[](std::size_t i) const {
        if (i >= total_) throw DomainError("chain index out of range");
        if (starts_.size() != counts_.size()) {
            starts_.resize(counts_.size());
            std::size_t s = 0;
            for (std::size_t k = 0; k < counts_.size(); ++k) {
                starts_[k] = s;
                s += counts_[k];
            }
        }
        const auto it = std::upper_bound(starts_.begin(), starts_.end(), i);
        return distinct_row(static_cast<std::size_t>(it - starts_.begin()) - 1);
    }

    /// Values of coordinate j, expanded.
    std::vector<double> column(std::size_t j) const {
        std::vector<double> out;
        out.reserve(total_);
        for (std::size_t k = 0; k < counts_.size(); ++k) out.insert(out.end(), counts_[k], rows_[k * dim_ + j]);
        return out;
    }

    bool operator==(const Chain& o) const {
        return dim_ == o.dim_ && total_ == o.total_ && counts_ == o.counts_ && rows_ == o.rows_;
    }

private:
    std::size_t dim_ = 0;
    std::size_t total_ = 0;
    std::vector<double> rows_;
    std::vector<std::size_t> counts_;
    mutable std::vector<std::size_t> starts_;
};

struct CbmEstimate {
    double mean = 0.0;      // mean of the a * b values used
    double sigma_sq = 0.0;  // batch means estimate of the asymptotic variance
    std::size_t n = 0;
    std::size_t a = 0;      // number of batches
    std::size_t b = 0;      // batch size
};

/// Consistent batch means over a run-length encoded sequence: b = floor(sqrt(n)),
/// a = floor(n / b); the trailing n - a b values are left out.
inline CbmEstimate cbm_variance(std::span<const double> values, std::span<const std::size_t> counts) {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    if (n < 4) throw DomainError("consistent batch means needs at least 4 values");
    CbmEstimate est;
    est.n = n;
    est.b = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    while ((est.b + 1) * (est.b + 1) <= n) ++est.b;
    while (est.b * est.b > n) --est.b;
    est.a = n / est.b;
    const std::size_t used = est.a * est.b;

    std::vector<double> batch(est.a, 0.0);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < values.size() && pos < used; ++k) {
        std::size_t left = std::min(counts[k], used - pos);
        while (left > 0) {
            const std::size_t j = pos / est.b;
            const std::size_t take = std::min(left, (j + 1) * est.b - pos);
            batch[j] += values[k] * static_cast<double>(take);
            pos += take;
            left -= take;
        }
    }
    double total = 0.0;
    for (auto& s : batch) {
        total += s;
        s /= static_cast<double>(est.b);
    }
    est.mean = total / static_cast<double>(used);
    double ss = 0.0;
    for (double m : batch) ss += (m - est.mean) * (m - est.mean);
    est.sigma_sq = static_cast<double>(est.b) / static_cast<double>(est.a - 1) * ss;
    return est;
}

inline CbmEstimate cbm_variance(std::span<const double> values) {
    const std::vector<std::size_t> ones(values.size(), 1);
    return cbm_variance(values, ones);
}

/// Mean and unbiased sample variance (the variance of independent draws).
inline std::pair<double, double> iid_variance(std::span<const double> values, std::span<const std::size_t> counts) {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        for (std::size_t c = 0; c < counts[k]; ++c) {
            n += 1.0;
            const double delta = values[k] - mean;
            mean += delta / n;
            m2 += delta * (values[k] - mean);
        }
    }
    if (n < 2.0) throw DomainError("sample variance needs at least 2 values");
    return {mean, m2 / (n - 1.0)};
}

enum class ThresholdMode { half_width, mcse };

/// A monitored linear functional sum_k w_k x[index_k] of the flat state.
struct MonitoredQuantity {
    std::string name;
    std::vector<std::pair<std::size_t, double>> terms;
    double epsilon = 0.01;

    double operator()(std::span<const double> x) const {
        double s = 0.0;
        for (auto [j, w] : terms) s += w * x[j];
        return s;
    }
    static MonitoredQuantity coordinate(std::string name, std::size_t index, double epsilon) {
        return {std::move(name), {{index, 1.0}}, epsilon};
    }
};

/// Fixed-width stopping rule checked at n = check_start * 2^k (n >= min_iterations).
struct StoppingRule {
    std::vector<MonitoredQuantity> quantities;
    double confidence = 0.95;
    std::size_t min_iterations = 1000;
    std::size_t check_start = 1000;
    ThresholdMode mode = ThresholdMode::half_width;

    void validate() const {
        if (!(confidence > 0.0 && confidence < 1.0)) throw DomainError("confidence must lie in (0, 1)");
        if (min_iterations < 100) throw DomainError("min_iterations must be at least 100");
        if (check_start == 0) throw DomainError("check_start must be positive");
        for (const auto& q : quantities)
            if (!(q.epsilon > 0.0)) throw DomainError("threshold for '" + q.name + "' must be positive");
    }

    bool is_check_point(std::size_t n) const {
        if (n < min_iterations || n < check_start || n % check_start != 0) return false;
        const std::size_t k = n / check_start;
        return (k & (k - 1)) == 0;
    }
};

/// Default monitoring for the flat state (tau_h, tau_c, theta_1..N, phi_1..N):
/// every coordinate, with one threshold for the precisions and one for the random effects.
inline std::vector<MonitoredQuantity> default_quantities(std::size_t n_regions, double eps_precision,
                                                         double eps_random_effects) {
    std::vector<MonitoredQuantity> q;
    q.push_back(MonitoredQuantity::coordinate("tau_h", 0, eps_precision));
    q.push_back(MonitoredQuantity::coordinate("tau_c", 1, eps_precision));
    for (std::size_t i = 0; i < n_regions; ++i)
        q.push_back(MonitoredQuantity::coordinate("theta[" + std::to_string(i + 1) + "]", 2 + i, eps_random_effects));
    for (std::size_t i = 0; i < n_regions; ++i)
        q.push_back(
            MonitoredQuantity::coordinate("phi[" + std::to_string(i + 1) + "]", 2 + n_regions + i, eps_random_effects));
    return q;
}

enum class Decision { continue_sampling, stop };

struct QuantitySummary {
    std::string name;
    double mean = 0.0;
    double sigma_sq = 0.0;
    double mcse = 0.0;
    double half_width = 0.0;
    double threshold = 0.0;
    bool satisfied = false;
};

struct ChainSummary {
    std::vector<QuantitySummary> quantities;
    std::size_t n = 0;
    std::size_t a = 0;
    std::size_t b = 0;
    bool iid = false;
    double confidence = 0.95;
    ThresholdMode mode = ThresholdMode::half_width;
};

/// t quantile with the given degrees of freedom for a two-sided interval.
inline double interval_multiplier(double confidence, double dof) {
    boost::math::students_t dist(dof);
    return boost::math::quantile(dist, 1.0 - 0.5 * (1.0 - confidence));
}

/// Evaluates every monitored quantity on the chain. Markov chains use consistent
/// batch means; `iid` output (rejection sampling) uses the sample variance with
/// m - 1 degrees of freedom.
inline ChainSummary summarize(const Chain& chain, const StoppingRule& rule, bool iid) {
    ChainSummary s;
    s.iid = iid;
    s.confidence = rule.confidence;
    s.mode = rule.mode;
    s.n = chain.size();
    std::vector<std::size_t> counts(chain.distinct());
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] = chain.multiplicity(k);
    std::vector<double> g(chain.distinct());
    double multiplier = 0.0;
    for (const auto& q : rule.quantities) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = q(chain.distinct_row(k));
        QuantitySummary qs;
        qs.name = q.name;
        qs.threshold = q.epsilon;
        double used = 0.0;
        if (iid) {
            auto [mean, var] = iid_variance(g, counts);
            qs.mean = mean;
            qs.sigma_sq = var;
            used = static_cast<double>(s.n);
            s.a = s.n;
            s.b = 1;
            if (multiplier == 0.0) multiplier = interval_multiplier(rule.confidence, used - 1.0);
        } else {
            const auto est = cbm_variance(g, counts);
            qs.mean = est.mean;
            qs.sigma_sq = est.sigma_sq;
            used = static_cast<double>(est.a * est.b);
            s.a = est.a;
            s.b = est.b;
            if (multiplier == 0.0) multiplier = interval_multiplier(rule.confidence, static_cast<double>(est.a - 1));
        }
        qs.mcse = std::sqrt(qs.sigma_sq / static_cast<double>(s.n));
        qs.half_width = multiplier * std::sqrt(qs.sigma_sq / used);
        const double measured = rule.mode == ThresholdMode::half_width ? qs.half_width : qs.mcse;
        qs.satisfied = measured <= qs.threshold;
        s.quantities.push_back(std::move(qs));
    }
    return s;
}

/// Stop iff every monitored quantity meets its threshold under `rule`.
inline Decision evaluate_stopping(const ChainSummary& summary, const StoppingRule& rule) {
    if (summary.quantities.size() != rule.quantities.size())
        throw DomainError("summary and stopping rule monitor different quantities");
    for (std::size_t k = 0; k < rule.quantities.size(); ++k) {
        const auto& q = summary.quantities[k];
        const double measured = rule.mode == ThresholdMode::half_width ? q.half_width : q.mcse;
        if (!(measured <= rule.quantities[k].epsilon)) return Decision::continue_sampling;
    }
    return Decision::stop;
}

/// Plain-text table: quantity, mean, MCSE, half-width, threshold, status.
inline std::string to_report(const ChainSummary& s) {
    std::ostringstream os;
    os << "# n = " << s.n << ", batches a = " << s.a << ", batch size b = " << s.b
       << (s.iid ? " (independent draws)" : " (consistent batch means)") << "\n";
    os << "# confidence = " << s.confidence
       << ", thresholds bound the " << (s.mode == ThresholdMode::half_width ? "interval half-width" : "MCSE") << "\n";
    os << std::left << std::setw(16) << "quantity" << std::right << std::setw(18) << "mean" << std::setw(16) << "mcse"
       << std::setw(16) << "half_width" << std::setw(12) << "threshold" << "  status\n";
    os << std::setprecision(8);
    for (const auto& q : s.quantities) {
        os << std::left << std::setw(16) << q.name << std::right << std::setw(18) << q.mean << std::setw(16) << q.mcse
           << std::setw(16) << q.half_width << std::setw(12) << q.threshold << "  "
           << (q.satisfied ? "ok" : "above") << "\n";
    }
    return os.str();
}

} // namespace bymcmc
