#pragma once

#include "error.hpp"
#include "gaussian_approx.hpp"
#include "optimize.hpp"
#include "random.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace bymcmc {

/// Log-t distribution: log(tau) = mu + sigma * T with T ~ Student-t(nu).
struct LogTParams {
    double mu = 0.0;
    double sigma = 1.0;
    int nu = 4;

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu)) throw DomainError("log-t needs finite mu, sigma > 0");
        if (nu < 1) throw DomainError("log-t degrees of freedom must be >= 1");
    }

    /// Density of tau (including the 1/tau Jacobian), on the log scale.
    double log_density(double tau) const {
        const double x = std::log(tau);
        const double z = (x - mu) / sigma;
        const double v = static_cast<double>(nu);
        return std::lgamma(0.5 * (v + 1.0)) - std::lgamma(0.5 * v) - 0.5 * std::log(v * std::numbers::pi) -
               std::log(sigma) - 0.5 * (v + 1.0) * std::log1p(z * z / v) - x;
    }
};

/// Fitted parameters of the heavy-tailed proposal r = r1(tau_h, tau_c) r2(Theta | tau_h, tau_c).
struct ProposalSpec {
    LogTParams tau_h_logt;
    LogTParams tau_c_logt;
    int nu_r = 4;
    double delta = 1e-4;
    double scale_inflation = 1.5;

    void validate() const {
        tau_h_logt.validate();
        tau_c_logt.validate();
        if (nu_r < 1) throw DomainError("nu_r must be >= 1");
        if (!(delta > 0.0)) throw DomainError("delta must be positive");
        if (!(scale_inflation >= 1.0)) throw DomainError("scale_inflation must be >= 1");
    }
};

struct ProposalConfig {
    int nu_h = 4;
    int nu_c = 4;
    int nu_r = 4;
    double scale_inflation = 1.5;
    /// Q~ = Q + delta I; zero selects 1e-4 times the mean diagonal of Q.
    double delta = 0.0;
    /// Search box for (log tau_h, log tau_c).
    double log_tau_min = -12.0;
    double log_tau_max = 14.0;
    std::size_t grid_points = 7;
    std::size_t starts = 3;
    /// Step of the central second differences on the log scale.
    double curvature_step = 1e-2;
};

/// Matches the two log-t marginals to a log density of (tau_h, tau_c).
///
/// The log-scale profile is log_density(e^x, e^y) + x + y (the density of
/// (log tau_h, log tau_c)). Its joint mode is found by Nelder-Mead started from the
/// best points of a coarse grid; along each axis through the mode the curvature k is
/// estimated by central second differences, and the log-t gets location = mode,
/// scale = scale_inflation / sqrt(-k). The returned spec carries delta = config.delta.
inline ProposalSpec fit_proposal(const std::function<double(double, double)>& log_density,
                                 const ProposalConfig& config) {
    const double lo = config.log_tau_min, hi = config.log_tau_max;
    auto profile = [&](double x, double y) {
        if (x < lo || x > hi || y < lo || y > hi) return -std::numeric_limits<double>::infinity();
        double v;
        try {
            v = log_density(std::exp(x), std::exp(y));
        } catch (const Error&) {
            return -std::numeric_limits<double>::infinity();
        }
        return std::isfinite(v) ? v + x + y : -std::numeric_limits<double>::infinity();
    };

    const std::size_t g = std::max<std::size_t>(config.grid_points, 2);
    std::vector<std::pair<double, std::vector<double>>> grid;
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j) {
            // interior grid: keep starts away from the box edge
            const double x = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(g);
            const double y = lo + (hi - lo) * (static_cast<double>(j) + 0.5) / static_cast<double>(g);
            grid.push_back({profile(x, y), {x, y}});
        }
    std::sort(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (!std::isfinite(grid.front().first)) throw DomainError("log density is not finite anywhere on the search grid");

    optim::Result best;
    const auto f = [&](std::span<const double> p) { return profile(p[0], p[1]); };
    for (std::size_t s = 0; s < std::min(config.starts, grid.size()); ++s) {
        optim::NelderMeadOptions opt;
        opt.initial_step = 0.25 * (hi - lo) / static_cast<double>(g);
        auto r = optim::nelder_mead_maximize(f, grid[s].second, opt);
        // restart once from the optimum to shake off a collapsed simplex
        opt.initial_step = 0.05;
        r = optim::nelder_mead_maximize(f, r.x, opt);
        if (r.value > best.value) best = r;
    }
    const double mx = best.x[0], my = best.x[1];
    const double h = config.curvature_step;
    if (mx - lo < 2 * h || hi - mx < 2 * h || my - lo < 2 * h || hi - my < 2 * h) throw BoundaryError(mx, my);

    const double f0 = profile(mx, my);
    const double kx = (profile(mx + h, my) - 2.0 * f0 + profile(mx - h, my)) / (h * h);
    const double ky = (profile(mx, my + h) - 2.0 * f0 + profile(mx, my - h)) / (h * h);
    if (!(kx < 0.0)) throw CurvatureError(0, kx);
    if (!(ky < 0.0)) throw CurvatureError(1, ky);

    ProposalSpec spec;
    spec.tau_h_logt = {mx, config.scale_inflation / std::sqrt(-kx), config.nu_h};
    spec.tau_c_logt = {my, config.scale_inflation / std::sqrt(-ky), config.nu_c};
    spec.nu_r = config.nu_r;
    spec.delta = config.delta > 0.0 ? config.delta : 1e-4;
    spec.scale_inflation = config.scale_inflation;
    spec.validate();
    return spec;
}

/// Fits the proposal to log s1 of a dataset, with Q~ = Q + delta I.
inline ProposalSpec fit_proposal(const ApproximationContext& ctx, const Hyperparameters& hyper,
                                 const PrecisionGraphMatrix& q, ProposalConfig config) {
    if (!(config.delta > 0.0)) config.delta = default_delta(q);
    const auto q_tilde = q.shifted(config.delta);
    return fit_proposal([&](double th, double tc) { return log_s1(th, tc, ctx, hyper, q_tilde, q); }, config);
}

/// Product of the two log-t densities.
inline double log_r1(double tau_h, double tau_c, const ProposalSpec& spec) {
    if (!(tau_h > 0.0) || !(tau_c > 0.0)) return -std::numeric_limits<double>::infinity();
    return spec.tau_h_logt.log_density(tau_h) + spec.tau_c_logt.log_density(tau_c);
}

/// Multivariate-t log density in dimension 2N with location mu_N, shape matrix C^-1
/// and nu_r degrees of freedom, given the factored conditional Gaussian.
inline double log_r2_from_quadratic(double quad, const ConditionalGaussian& cond, int nu_r) {
    const double d = static_cast<double>(cond.dimension());
    const double v = static_cast<double>(nu_r);
    return 0.5 * cond.log_det() + std::lgamma(0.5 * (v + d)) - 0.5 * d * std::log(v * std::numbers::pi) -
           std::lgamma(0.5 * v) - 0.5 * (v + d) * std::log1p(quad / v);
}

inline double log_r2(std::span<const double> theta, const ConditionalGaussian& cond, int nu_r) {
    return log_r2_from_quadratic(cond.quadratic_form(theta), cond, nu_r);
}

inline double log_r2(std::span<const double> theta, double tau_h, double tau_c, const ProposalSpec& spec,
                     const ApproximationContext& ctx, const PrecisionGraphMatrix& q_tilde) {
    return log_r2(theta, conditional_gaussian_params(tau_h, tau_c, ctx, q_tilde), spec.nu_r);
}

/// One draw from r, with the two log density pieces evaluated at it.
struct ProposalDraw {
    double tau_h = 0.0;
    double tau_c = 0.0;
    std::vector<double> theta;  // (theta_1..theta_N, phi_1..phi_N)
    double log_r1 = 0.0;
    double log_r2 = 0.0;

    double log_r() const noexcept { return log_r1 + log_r2; }
    /// Flat layout (tau_h, tau_c, theta, phi).
    std::vector<double> flat() const {
        std::vector<double> x;
        x.reserve(theta.size() + 2);
        x.push_back(tau_h);
        x.push_back(tau_c);
        x.insert(x.end(), theta.begin(), theta.end());
        return x;
    }
};

/// Two-step draw: tau_h, tau_c from the log-t marginals, then
/// Theta = mu_N + z / sqrt(g / nu_r) with z ~ N(0, C^-1) and g ~ chi-square(nu_r).
inline ProposalDraw sample_from_r(const ProposalSpec& spec, const ApproximationContext& ctx,
                                  const PrecisionGraphMatrix& q_tilde, Engine& rng) {
    std::student_t_distribution<double> th(static_cast<double>(spec.tau_h_logt.nu));
    std::student_t_distribution<double> tc(static_cast<double>(spec.tau_c_logt.nu));
    ProposalDraw out;
    for (;;) {
        out.tau_h = std::exp(spec.tau_h_logt.mu + spec.tau_h_logt.sigma * th(rng));
        out.tau_c = std::exp(spec.tau_c_logt.mu + spec.tau_c_logt.sigma * tc(rng));
        // t tails can leave the range of double; such draws have r-probability ~0
        if (out.tau_h > 0.0 && out.tau_c > 0.0 && std::isfinite(out.tau_h) && std::isfinite(out.tau_c)) break;
    }
    const auto cond = conditional_gaussian_params(out.tau_h, out.tau_c, ctx, q_tilde);
    auto [z, eps2] = cond.sample_centered(rng);
    std::chi_squared_distribution<double> chi(static_cast<double>(spec.nu_r));
    const double g = chi(rng);
    const double scale = std::sqrt(static_cast<double>(spec.nu_r) / g);
    const auto mu = cond.mean();
    out.theta.resize(mu.size());
    for (std::size_t k = 0; k < mu.size(); ++k) out.theta[k] = mu[k] + scale * z[k];
    out.log_r1 = log_r1(out.tau_h, out.tau_c, spec);
    out.log_r2 = log_r2_from_quadratic(scale * scale * eps2, cond, spec.nu_r);
    return out;
}

/// Human-readable key = value block.
inline std::string to_text(const ProposalSpec& spec) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "tau_h.mu = " << spec.tau_h_logt.mu << "\n"
       << "tau_h.sigma = " << spec.tau_h_logt.sigma << "\n"
       << "tau_h.nu = " << spec.tau_h_logt.nu << "\n"
       << "tau_c.mu = " << spec.tau_c_logt.mu << "\n"
       << "tau_c.sigma = " << spec.tau_c_logt.sigma << "\n"
       << "tau_c.nu = " << spec.tau_c_logt.nu << "\n"
       << "nu_r = " << spec.nu_r << "\n"
       << "delta = " << spec.delta << "\n"
       << "scale_inflation = " << spec.scale_inflation << "\n";
    return os.str();
}

/// Parses the block written by to_text (unknown keys and comment lines are ignored).
inline ProposalSpec proposal_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("proposal block is missing '" + key + "'");
        return it->second;
    };
    ProposalSpec spec;
    spec.tau_h_logt = {std::stod(get("tau_h.mu")), std::stod(get("tau_h.sigma")), std::stoi(get("tau_h.nu"))};
    spec.tau_c_logt = {std::stod(get("tau_c.mu")), std::stod(get("tau_c.sigma")), std::stoi(get("tau_c.nu"))};
    spec.nu_r = std::stoi(get("nu_r"));
    spec.delta = std::stod(get("delta"));
    spec.scale_inflation = std::stod(get("scale_inflation"));
    spec.validate();
    return spec;
}

} // namespace bymcmc
