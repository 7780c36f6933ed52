#pragma once

#include "gaussian_approx.hpp"
#include "heavy_tail_proposal.hpp"
#include "model.hpp"
#include "optimize.hpp"
#include "samplers.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace bymcmc {

/// The heavy-tailed proposal r bound to a dataset, together with the exact
/// posterior it stands in for. Points use the flat layout (tau_h, tau_c, theta, phi).
class SpatialProposalSource {
public:
    SpatialProposalSource(PosteriorDensity posterior, ApproximationContext ctx, ProposalSpec spec)
        : posterior_(std::move(posterior)), ctx_(std::move(ctx)), spec_(spec),
          q_tilde_(posterior_.q().shifted(spec.delta)) {
        spec_.validate();
        if (ctx_.n_regions() != posterior_.n_regions()) throw DomainError("context and posterior sizes differ");
    }

    std::size_t dimension() const noexcept { return posterior_.dimension(); }
    std::size_t n_regions() const noexcept { return posterior_.n_regions(); }
    const PosteriorDensity& posterior() const noexcept { return posterior_; }
    const ApproximationContext& context() const noexcept { return ctx_; }
    const ProposalSpec& spec() const noexcept { return spec_; }
    const PrecisionGraphMatrix& q_tilde() const noexcept { return q_tilde_; }

    WeightedPoint draw(Engine& rng) const {
        auto d = sample_from_r(spec_, ctx_, q_tilde_, rng);
        WeightedPoint p;
        p.x = d.flat();
        p.log_proposal = d.log_r();
        p.log_target = posterior_(p.x);
        return p;
    }

    double log_target(std::span<const double> x) const { return posterior_(x); }

    double log_proposal(std::span<const double> x) const {
        const double tau_h = x[0], tau_c = x[1];
        if (!(tau_h > 0.0) || !(tau_c > 0.0)) return -std::numeric_limits<double>::infinity();
        return log_r1(tau_h, tau_c, spec_) + log_r2(x.subspan(2), tau_h, tau_c, spec_, ctx_, q_tilde_);
    }

    /// log pi - log r at z = (log tau_h, log tau_c, theta, phi), with its gradient in z.
    /// The Theta part of the gradient is analytic; the two log tau coordinates of
    /// log r2 use central differences because mu_N and C both move with them.
    double log_ratio_log_scale(std::span<const double> z, std::span<double> grad) const {
        const std::size_t n = n_regions();
        const double ninf = -std::numeric_limits<double>::infinity();
        std::vector<double> x(z.begin(), z.end());
        if (std::abs(z[0]) > 700.0 || std::abs(z[1]) > 700.0) {
            std::fill(grad.begin(), grad.end(), 0.0);
            return ninf;
        }
        x[0] = std::exp(z[0]);
        x[1] = std::exp(z[1]);
        const double lp = posterior_(x);
        if (!std::isfinite(lp)) {
            std::fill(grad.begin(), grad.end(), 0.0);
            return ninf;
        }
        const auto theta = std::span<const double>(x).subspan(2);
        const auto cond = conditional_gaussian_params(x[0], x[1], ctx_, q_tilde_);
        const double quad = cond.quadratic_form(theta);
        const double lr = log_r1(x[0], x[1], spec_) + log_r2_from_quadratic(quad, cond, spec_.nu_r);

        posterior_.gradient_log_scale(x, grad);
        const double v = static_cast<double>(spec_.nu_r);
        const double dim = static_cast<double>(2 * n);
        const auto ct = cond.precision_times_residual(theta);
        const double w = (v + dim) / (v + quad);
        for (std::size_t k = 0; k < 2 * n; ++k) grad[2 + k] += w * ct[k];

        grad[0] -= d_log_t(z[0], spec_.tau_h_logt);
        grad[1] -= d_log_t(z[1], spec_.tau_c_logt);
        const double h = 1e-5;
        for (int a = 0; a < 2; ++a) {
            double tp[2] = {x[0], x[1]}, tm[2] = {x[0], x[1]};
            tp[a] = std::exp(z[a] + h);
            tm[a] = std::exp(z[a] - h);
            const double fp = log_r2(theta, tp[0], tp[1], spec_, ctx_, q_tilde_);
            const double fm = log_r2(theta, tm[0], tm[1], spec_, ctx_, q_tilde_);
            grad[a] -= (fp - fm) / (2.0 * h);
        }
        return lp - lr;
    }

    /// Starting points for the bound search, in log scale: the r1 mode with Theta = mu_N,
    /// the local maxima of the ratio profiled over a (log tau_h, log tau_c) grid with
    /// Theta = mu_N (best `grid_keep` of them), then `extra` draws from r. The grid spans
    /// the central 1 - 2 * 1e-6 of each log-t factor of r1.
    std::vector<std::vector<double>> bound_starts(std::size_t extra, Engine& rng, std::size_t grid_points = 24,
                                                  std::size_t grid_keep = 6) const {
        std::vector<std::vector<double>> out;
        auto start_at = [&](double lh, double lc) {
            const auto mu = conditional_gaussian_params(std::exp(lh), std::exp(lc), ctx_, q_tilde_).mean();
            std::vector<double> s{lh, lc};
            s.insert(s.end(), mu.begin(), mu.end());
            return s;
        };
        out.push_back(start_at(spec_.tau_h_logt.mu, spec_.tau_c_logt.mu));

        if (grid_points >= 3) {
            auto span_of = [](const LogTParams& p) {
                const boost::math::students_t t(static_cast<double>(p.nu));
                const double w = p.sigma * boost::math::quantile(boost::math::complement(t, 1e-6));
                return std::pair{p.mu - w, p.mu + w};
            };
            const auto [h0, h1] = span_of(spec_.tau_h_logt);
            const auto [c0, c1] = span_of(spec_.tau_c_logt);
            const std::size_t m = grid_points;
            auto coord = [m](double a, double b, std::size_t k) { return a + (b - a) * k / double(m - 1); };
            std::vector<double> value(m * m, -std::numeric_limits<double>::infinity());
            std::vector<std::vector<double>> point(m * m);
            std::vector<double> grad(dimension());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    try {
                        point[i * m + j] = start_at(coord(h0, h1, i), coord(c0, c1, j));
                        const double v = log_ratio_log_scale(point[i * m + j], grad);
                        if (std::isfinite(v)) value[i * m + j] = v;
                    } catch (const Error&) {
                    }
                }
            std::vector<std::pair<double, std::size_t>> peaks;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double v = value[i * m + j];
                    if (!std::isfinite(v)) continue;
                    bool peak = true;
                    for (int di = -1; di <= 1 && peak; ++di)
                        for (int dj = -1; dj <= 1 && peak; ++dj) {
                            const auto a = static_cast<std::ptrdiff_t>(i) + di, b = static_cast<std::ptrdiff_t>(j) + dj;
                            if ((di || dj) && a >= 0 && b >= 0 && a < std::ptrdiff_t(m) && b < std::ptrdiff_t(m) &&
                                value[static_cast<std::size_t>(a) * m + static_cast<std::size_t>(b)] > v)
                                peak = false;
                        }
                    if (peak) peaks.push_back({v, i * m + j});
                }
            std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t k = 0; k < std::min(grid_keep, peaks.size()); ++k) out.push_back(point[peaks[k].second]);
        }

        for (std::size_t k = 0; k < extra; ++k) {
            auto p = draw(rng).x;
            p[0] = std::log(p[0]);
            p[1] = std::log(p[1]);
            out.push_back(std::move(p));
        }
        return out;
    }

    /// Bound on log pi - log r from multi-start optimization. The argmax and the trace
    /// points are reported in the flat (tau_h, tau_c, ...) layout.
    EnvelopeBound optimize_bound(std::size_t extra_starts, Engine& rng, const BoundConfig& config = {}) const {
        const auto starts = bound_starts(extra_starts, rng);
        auto to_flat = [](std::vector<double> z) {
            if (z.size() >= 2) {
                z[0] = std::exp(z[0]);
                z[1] = std::exp(z[1]);
            }
            return z;
        };
        EnvelopeBound b;
        try {
            b = bymcmc::optimize_bound([this](std::span<const double> z, std::span<double> g) {
                return log_ratio_log_scale(z, g);
            }, starts, config);
        } catch (const EnvelopeViolationError& e) {
            throw EnvelopeViolationError(to_flat(e.witness()), e.log_ratio());
        }
        b.argmax = to_flat(std::move(b.argmax));
        for (auto& t : b.trace) {
            t.start = to_flat(std::move(t.start));
            t.point = to_flat(std::move(t.point));
        }
        return b;
    }

private:
    /// d/dx of the log-t log density of tau = e^x (Jacobian term included).
    static double d_log_t(double x, const LogTParams& p) {
        const double zz = (x - p.mu) / p.sigma;
        const double v = static_cast<double>(p.nu);
        return -(v + 1.0) * zz / (p.sigma * (v + zz * zz)) - 1.0;
    }

    PosteriorDensity posterior_;
    ApproximationContext ctx_;
    ProposalSpec spec_;
    PrecisionGraphMatrix q_tilde_;
};

static_assert(ProposalSource<SpatialProposalSource>);

} // namespace bymcmc
