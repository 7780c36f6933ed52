#pragma once

#include "error.hpp"
#include "mc_output.hpp"
#include "optimize.hpp"
#include "random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <vector>

namespace bymcmc {

/// A draw from the proposal r with log pi and log r evaluated at it.
struct WeightedPoint {
    std::vector<double> x;
    double log_target = 0.0;
    double log_proposal = 0.0;

    double log_weight() const noexcept { return log_target - log_proposal; }
};

/// Anything that can draw from r and evaluate both log densities at the draw.
/// draw() must be const and thread-safe given distinct engines.
template <class S>
concept ProposalSource = requires(const S& s, Engine& rng) {
    { s.draw(rng) } -> std::same_as<WeightedPoint>;
    { s.dimension() } -> std::convertible_to<std::size_t>;
};

// ---------------------------------------------------------------------------
// Envelope bound

struct TracePoint {
    std::vector<double> start;
    double start_log_ratio = 0.0;
    std::vector<double> point;
    double log_ratio = 0.0;
    std::size_t iterations = 0;
};

struct EnvelopeBound {
    enum class Method { optimized, empirical_sup };

    double log_B = 0.0;
    /// Largest log pi - log r seen while computing the bound.
    double max_log_ratio = -std::numeric_limits<double>::infinity();
    std::vector<double> argmax;
    std::vector<TracePoint> trace;
    Method method = Method::optimized;
};

struct BoundConfig {
    /// Added to the maximum found.
    double safety_margin = 0.5;
    optim::LbfgsOptions lbfgs{};
};

/// Multi-start maximization of a log ratio log pi - log r. log_B is the best local
/// maximum plus the safety margin. A search that runs off to infinity means the
/// ratio is unbounded: EnvelopeViolationError with the witness point.
inline EnvelopeBound optimize_bound(const optim::ValueAndGradient& log_ratio,
                                    const std::vector<std::vector<double>>& starts, const BoundConfig& config = {}) {
    if (starts.empty()) throw DomainError("optimize_bound needs at least one start");
    EnvelopeBound bound;
    bound.method = EnvelopeBound::Method::optimized;
    for (const auto& s : starts) {
        TracePoint tp;
        tp.start = s;
        std::vector<double> g(s.size());
        tp.start_log_ratio = log_ratio(s, g);
        auto res = optim::lbfgs_maximize(log_ratio, s, config.lbfgs);
        if (res.diverged || (std::isinf(res.value) && res.value > 0)) throw EnvelopeViolationError(res.x, res.value);
        tp.point = res.x;
        tp.log_ratio = res.value;
        tp.iterations = res.iterations;
        for (double v : {tp.start_log_ratio, tp.log_ratio})
            if (v > bound.max_log_ratio) {
                bound.max_log_ratio = v;
                bound.argmax = v == tp.log_ratio ? tp.point : tp.start;
            }
        bound.trace.push_back(std::move(tp));
    }
    if (!std::isfinite(bound.max_log_ratio)) throw DomainError("log ratio is not finite at any start");
    bound.log_B = bound.max_log_ratio + config.safety_margin;
    return bound;
}

/// log_B = max of log pi - log r over m draws from r. The trace records every new
/// running maximum with its draw index in iterations.
template <ProposalSource S>
EnvelopeBound empirical_sup_bound(const S& source, std::size_t m_draws, Engine& rng) {
    if (m_draws < 1) throw DomainError("empirical_sup_bound needs at least one draw");
    EnvelopeBound bound;
    bound.method = EnvelopeBound::Method::empirical_sup;
    for (std::size_t k = 0; k < m_draws; ++k) {
        auto p = source.draw(rng);
        const double w = p.log_weight();
        if (w > bound.max_log_ratio) {
            bound.max_log_ratio = w;
            bound.argmax = p.x;
            bound.trace.push_back({{}, w, p.x, w, k});
        }
    }
    bound.log_B = bound.max_log_ratio;
    return bound;
}

// ---------------------------------------------------------------------------
// Sampler runs

enum class RunStatus { stopped, budget_exhausted };

struct SamplerRun {
    Chain draws;
    std::size_t n_proposed = 0;
    std::size_t n_accepted = 0;
    /// Proposals whose log weight exceeded log_B (rejection sampling only).
    std::size_t n_bound_exceeded = 0;
    double wall_time = 0.0;
    std::uint64_t rng_seed = 0;
    RunStatus status = RunStatus::budget_exhausted;
    std::optional<ChainSummary> summary;

    double acceptance_rate() const noexcept {
        return n_proposed ? static_cast<double>(n_accepted) / static_cast<double>(n_proposed) : 0.0;
    }
};

struct SamplerOptions {
    /// Proposal budget (rejection) or iteration budget (independence chain).
    std::size_t budget = 10'000'000;
    /// Proposals per batch; batch k is drawn from stream derive_seed(seed, k).
    std::size_t batch_size = 256;
    /// Worker threads generating batches; results do not depend on this.
    std::size_t workers = 1;
    /// Called for every element of the output sequence, repeats included.
    std::function<void(std::span<const double>)> sink;
};

namespace detail {

struct Proposal {
    WeightedPoint point;
    double log_u = 0.0;
};

template <ProposalSource S>
std::vector<Proposal> make_batch(const S& source, std::uint64_t seed, std::uint64_t batch, std::size_t size) {
    Engine rng = make_engine(seed, batch);
    std::vector<Proposal> out(size);
    for (auto& p : out) {
        p.point = source.draw(rng);
        p.log_u = std::log(open_uniform(rng));
    }
    return out;
}

/// Generates batches [first, first + count) with up to `workers` threads, in order.
template <ProposalSource S>
std::vector<std::vector<Proposal>> make_batches(const S& source, std::uint64_t seed, std::uint64_t first,
                                                std::size_t count, std::size_t batch_size, std::size_t workers) {
    std::vector<std::vector<Proposal>> out(count);
    if (workers <= 1 || count == 1) {
        for (std::size_t k = 0; k < count; ++k) out[k] = make_batch(source, seed, first + k, batch_size);
        return out;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w)
        pool.emplace_back([&, w] {
            for (std::size_t k = w; k < count; k += workers) out[k] = make_batch(source, seed, first + k, batch_size);
        });
    for (auto& t : pool) t.join();
    return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/// Accept-reject sampling: each proposal X ~ r is kept when log U <= log pi(X) - log r(X) - log_B.
/// Accepted draws are independent, so the stopping rule uses the sample variance.
/// Without a rule the sampler runs until the proposal budget is spent.
template <ProposalSource S>
SamplerRun rejection_sample(const S& source, const EnvelopeBound& bound, const std::optional<StoppingRule>& stop,
                            std::uint64_t seed, const SamplerOptions& options = {}) {
    if (!std::isfinite(bound.log_B)) throw DomainError("envelope bound is not finite");
    if (stop) stop->validate();
    const auto t0 = std::chrono::steady_clock::now();
    SamplerRun run;
    run.rng_seed = seed;
    run.draws = Chain(source.dimension());
    const std::size_t workers = std::max<std::size_t>(options.workers, 1);
    std::uint64_t next_batch = 0;
    bool done = false;
    while (!done && run.n_proposed < options.budget) {
        auto batches = detail::make_batches(source, seed, next_batch, workers, options.batch_size, workers);
        next_batch += workers;
        for (auto& batch : batches) {
            for (auto& p : batch) {
                if (run.n_proposed >= options.budget) {
                    done = true;
                    break;
                }
                ++run.n_proposed;
                const double w = p.point.log_weight();
                if (w > bound.log_B) ++run.n_bound_exceeded;
                if (!(p.log_u <= w - bound.log_B)) continue;
                ++run.n_accepted;
                run.draws.push(p.point.x);
                if (options.sink) options.sink(p.point.x);
                if (stop && stop->is_check_point(run.draws.size())) {
                    auto summary = summarize(run.draws, *stop, true);
                    const bool halt = evaluate_stopping(summary, *stop) == Decision::stop;
                    run.summary = std::move(summary);
                    if (halt) {
                        run.status = RunStatus::stopped;
                        done = true;
                        break;
                    }
                }
            }
            if (done) break;
        }
    }
    if (stop && run.status != RunStatus::stopped && run.draws.size() >= 2) run.summary = summarize(run.draws, *stop, true);
    run.wall_time = detail::seconds_since(t0);
    return run;
}

/// Independence Metropolis-Hastings with whole-state block updates from r. The
/// initial state is the first draw from r; a proposal y replaces the current x with
/// probability min{1, [pi(y) r(x)] / [pi(x) r(y)]}. The chain length counts the
/// initial state; n_proposed and n_accepted count the MH moves only.
template <ProposalSource S>
SamplerRun independence_mh(const S& source, const std::optional<StoppingRule>& stop, std::uint64_t seed,
                           const SamplerOptions& options = {}) {
    if (stop) stop->validate();
    const auto t0 = std::chrono::steady_clock::now();
    SamplerRun run;
    run.rng_seed = seed;
    run.draws = Chain(source.dimension());
    const std::size_t workers = std::max<std::size_t>(options.workers, 1);
    std::uint64_t next_batch = 0;
    bool started = false;
    bool done = false;
    double current_w = -std::numeric_limits<double>::infinity();
    std::vector<double> current;
    while (!done && run.draws.size() < options.budget) {
        auto batches = detail::make_batches(source, seed, next_batch, workers, options.batch_size, workers);
        next_batch += workers;
        for (auto& batch : batches) {
            for (auto& p : batch) {
                if (run.draws.size() >= options.budget) {
                    done = true;
                    break;
                }
                const double w = p.point.log_weight();
                if (!started) {
                    started = true;
                    current = std::move(p.point.x);
                    current_w = w;
                    run.draws.push(current);
                } else {
                    ++run.n_proposed;
                    const double log_alpha = w - current_w;
                    if (p.log_u <= log_alpha && !std::isnan(log_alpha)) {
                        ++run.n_accepted;
                        current = std::move(p.point.x);
                        current_w = w;
                        run.draws.push(current);
                    } else {
                        run.draws.repeat_last();
                    }
                }
                if (options.sink) options.sink(current);
                if (stop && stop->is_check_point(run.draws.size())) {
                    auto summary = summarize(run.draws, *stop, false);
                    const bool halt = evaluate_stopping(summary, *stop) == Decision::stop;
                    run.summary = std::move(summary);
                    if (halt) {
                        run.status = RunStatus::stopped;
                        done = true;
                        break;
                    }
                }
            }
            if (done) break;
        }
    }
    if (stop && run.status != RunStatus::stopped && run.draws.size() >= 4)
        run.summary = summarize(run.draws, *stop, false);
    run.wall_time = detail::seconds_since(t0);
    return run;
}

} // namespace bymcmc
