#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace bymcmc::optim {

struct Result {
    std::vector<double> x;
    double value = -std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

struct NelderMeadOptions {
    double initial_step = 0.5;
    double f_tolerance = 1e-12;
    double x_tolerance = 1e-9;
    std::size_t max_evaluations = 20000;
};

/// Derivative-free maximization by the Nelder-Mead simplex method.
/// Non-finite objective values are treated as -inf (the point is infeasible).
inline Result nelder_mead_maximize(const std::function<double(std::span<const double>)>& f, std::vector<double> x0,
                                   const NelderMeadOptions& opt = {}) {
    const std::size_t d = x0.size();
    Result res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    };
    std::vector<std::vector<double>> simplex(d + 1, x0);
    std::vector<double> values(d + 1);
    for (std::size_t k = 0; k < d; ++k) simplex[k + 1][k] += opt.initial_step;
    for (std::size_t k = 0; k <= d; ++k) values[k] = eval(simplex[k]);

    std::vector<std::size_t> idx(d + 1);
    while (res.evaluations < opt.max_evaluations) {
        ++res.iterations;
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
        const std::size_t best = idx.front(), worst = idx.back(), second = idx[d > 0 ? d - 1 : 0];

        double spread = 0.0;
        for (std::size_t k = 0; k <= d; ++k)
            for (std::size_t j = 0; j < d; ++j) spread = std::max(spread, std::abs(simplex[k][j] - simplex[best][j]));
        if (std::isfinite(values[worst]) && std::abs(values[best] - values[worst]) <= opt.f_tolerance &&
            spread <= opt.x_tolerance) {
            res.converged = true;
            break;
        }
        if (spread <= opt.x_tolerance * 1e-3) {
            res.converged = true;
            break;
        }

        std::vector<double> centroid(d, 0.0);
        for (std::size_t k = 0; k <= d; ++k)
            if (k != worst)
                for (std::size_t j = 0; j < d; ++j) centroid[j] += simplex[k][j] / static_cast<double>(d);
        auto along = [&](double t) {
            std::vector<double> x(d);
            for (std::size_t j = 0; j < d; ++j) x[j] = centroid[j] + t * (simplex[worst][j] - centroid[j]);
            return x;
        };
        auto reflected = along(-1.0);
        const double fr = eval(reflected);
        if (fr > values[best]) {
            auto expanded = along(-2.0);
            const double fe = eval(expanded);
            if (fe > fr) {
                simplex[worst] = std::move(expanded);
                values[worst] = fe;
            } else {
                simplex[worst] = std::move(reflected);
                values[worst] = fr;
            }
            continue;
        }
        if (fr > values[second]) {
            simplex[worst] = std::move(reflected);
            values[worst] = fr;
            continue;
        }
        const bool outside = fr > values[worst];
        auto contracted = along(outside ? -0.5 : 0.5);
        const double fc = eval(contracted);
        if (fc > std::max(fr, values[worst]) || (fc >= values[worst] && !outside)) {
            simplex[worst] = std::move(contracted);
            values[worst] = fc;
            continue;
        }
        for (std::size_t k = 0; k <= d; ++k) {
            if (k == best) continue;
            for (std::size_t j = 0; j < d; ++j) simplex[k][j] = simplex[best][j] + 0.5 * (simplex[k][j] - simplex[best][j]);
            values[k] = eval(simplex[k]);
        }
    }
    const auto best = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    res.x = simplex[best];
    res.value = values[best];
    return res;
}

/// Objective returning f(x) and writing its gradient.
using ValueAndGradient = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
    std::size_t memory = 8;
    std::size_t max_iterations = 2000;
    double gradient_tolerance = 1e-8;
    double f_tolerance = 1e-12;
    /// Iterates leaving this ball, or values above max_value, stop the search as divergent.
    double divergence_radius = 1e6;
    double max_value = 1e8;
};

struct LbfgsResult : Result {
    bool diverged = false;
};

/// Limited-memory BFGS maximization with a backtracking Armijo line search that also
/// expands the step while the objective keeps increasing.
inline LbfgsResult lbfgs_maximize(const ValueAndGradient& fg, std::vector<double> x, const LbfgsOptions& opt = {}) {
    const std::size_t d = x.size();
    LbfgsResult res;
    std::vector<double> g(d), g_new(d), dir(d), x_new(d);
    auto eval = [&](std::span<const double> at, std::span<double> grad) {
        ++res.evaluations;
        const double v = fg(at, grad);
        return std::isfinite(v) ? v : (v > 0 ? v : -std::numeric_limits<double>::infinity());
    };
    double f = eval(x, g);
    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    auto dot = [](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
        return s;
    };
    auto norm = [&](std::span<const double> a) { return std::sqrt(dot(a, a)); };

    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        if (!std::isfinite(f)) break;
        if (norm(g) <= opt.gradient_tolerance * std::max(1.0, norm(x))) {
            res.converged = true;
            break;
        }
        // two-loop recursion on the ascent problem (minimizing -f)
        for (std::size_t k = 0; k < d; ++k) dir[k] = g[k];
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * dot(s_hist[k], dir);
            for (std::size_t j = 0; j < d; ++j) dir[j] -= alpha[k] * y_hist[k][j];
        }
        if (!s_hist.empty()) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (auto& v : dir) v *= gamma;
        } else {
            const double gn = norm(g);
            for (auto& v : dir) v /= std::max(gn, 1.0);
        }
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * dot(y_hist[k], dir);
            for (std::size_t j = 0; j < d; ++j) dir[j] += s_hist[k][j] * (alpha[k] - beta);
        }
        double slope = dot(g, dir);
        if (!(slope > 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            const double gn = norm(g);
            for (std::size_t k = 0; k < d; ++k) dir[k] = g[k] / std::max(gn, 1.0);
            slope = dot(g, dir);
        }

        double step = 1.0;
        double f_new = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int tries = 0; tries < 60; ++tries) {
            for (std::size_t k = 0; k < d; ++k) x_new[k] = x[k] + step * dir[k];
            f_new = eval(x_new, g_new);
            if (f_new >= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.converged = true;  // no ascent possible along a valid direction
            break;
        }
        // keep stretching while the gain continues; catches unbounded directions
        if (step == 1.0 && s_hist.empty()) {
            std::vector<double> x_try(d), g_try(d);
            for (int tries = 0; tries < 20; ++tries) {
                for (std::size_t k = 0; k < d; ++k) x_try[k] = x[k] + 2.0 * step * dir[k];
                const double f_try = eval(x_try, g_try);
                if (!(f_try > f_new)) break;
                step *= 2.0;
                x_new = x_try;
                g_new = g_try;
                f_new = f_try;
            }
        }

        std::vector<double> s(d), y(d);
        for (std::size_t k = 0; k < d; ++k) {
            s[k] = x_new[k] - x[k];
            y[k] = g[k] - g_new[k];  // gradient of -f
        }
        const double sy = dot(s, y);
        const double f_old = f;
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (norm(x) > opt.divergence_radius || f > opt.max_value) {
            res.diverged = true;
            break;
        }
        if (sy > 1e-12 * norm(s) * norm(y)) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        if (std::abs(f - f_old) <= opt.f_tolerance * std::max(1.0, std::abs(f))) {
            res.converged = true;
            ++res.iterations;
            break;
        }
    }
    res.x = std::move(x);
    res.value = f;
    return res;
}

/// Central-difference gradient of f at x (step h scaled by max(1, |x_k|)).
inline void numerical_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                               std::span<double> grad, double h = 1e-5) {
    std::vector<double> xp(x.begin(), x.end());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + step;
        const double fp = f(xp);
        xp[k] = x[k] - step;
        const double fm = f(xp);
        xp[k] = x[k];
        grad[k] = (fp - fm) / (2.0 * step);
    }
}

} // namespace bymcmc::optim
