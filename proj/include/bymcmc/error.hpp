#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bymcmc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument value (nonpositive precision, bad dimension, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Problems found while validating or loading a dataset.
class DatasetError : public Error {
public:
    enum class Kind {
        unknown_region,
        duplicate_edge,
        self_loop,
        nonpositive_expected,
        noninteger_count,
        negative_count,
        duplicate_region,
        malformed_row,
        io
    };

    DatasetError(Kind kind, std::string subject, const std::string& message)
        : Error(message), kind_(kind), subject_(std::move(subject)) {}

    Kind kind() const noexcept { return kind_; }
    /// The offending region id, edge or file name.
    const std::string& subject() const noexcept { return subject_; }

private:
    Kind kind_;
    std::string subject_;
};

/// The region adjacency graph has more than one connected component.
class DisconnectedGraphError : public Error {
public:
    explicit DisconnectedGraphError(std::vector<std::vector<std::size_t>> components)
        : Error(describe(components)), components_(std::move(components)) {}

    const std::vector<std::vector<std::size_t>>& components() const noexcept { return components_; }

private:
    static std::string describe(const std::vector<std::vector<std::size_t>>& components) {
        std::ostringstream os;
        os << "adjacency graph is disconnected (" << components.size() << " components):";
        for (const auto& c : components) {
            os << " {";
            for (std::size_t k = 0; k < c.size(); ++k) {
                if (k > 4) {
                    os << ", ... (" << c.size() << " nodes)";
                    break;
                }
                os << (k ? ", " : "") << c[k];
            }
            os << "}";
        }
        return os.str();
    }

    std::vector<std::vector<std::size_t>> components_;
};

/// exp(theta_i + phi_i) overflowed while evaluating the Poisson likelihood.
class OverflowError : public Error {
public:
    explicit OverflowError(std::size_t region)
        : Error("exp(theta + phi) overflows in region " + std::to_string(region)), region_(region) {}

    std::size_t region() const noexcept { return region_; }

private:
    std::size_t region_;
};

/// Cholesky factorization met a nonpositive pivot.
class NotPositiveDefiniteError : public Error {
public:
    explicit NotPositiveDefiniteError(std::size_t pivot, std::string context = {})
        : Error(context.empty() ? "matrix is not positive definite at pivot " + std::to_string(pivot)
                                : "matrix is not positive definite at pivot " + std::to_string(pivot) + " (" +
                                      context + ")"),
          pivot_(pivot) {}

    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

/// Cholesky failure of C(tau_h, tau_c); carries the precision values.
class IndefiniteCError : public NotPositiveDefiniteError {
public:
    IndefiniteCError(std::size_t pivot, double tau_h, double tau_c)
        : NotPositiveDefiniteError(pivot, "C(tau_h=" + std::to_string(tau_h) + ", tau_c=" + std::to_string(tau_c) + ")"),
          tau_h_(tau_h), tau_c_(tau_c) {}

    double tau_h() const noexcept { return tau_h_; }
    double tau_c() const noexcept { return tau_c_; }

private:
    double tau_h_;
    double tau_c_;
};

/// Singular dense system.
class SingularSystemError : public Error {
public:
    using Error::Error;
};

/// Mode search stopped on the edge of the search box.
class BoundaryError : public Error {
public:
    BoundaryError(double log_tau_h, double log_tau_c)
        : Error("mode search reached the search box boundary at (log tau_h, log tau_c) = (" +
                std::to_string(log_tau_h) + ", " + std::to_string(log_tau_c) + "); widen the box"),
          log_tau_h_(log_tau_h), log_tau_c_(log_tau_c) {}

    double log_tau_h() const noexcept { return log_tau_h_; }
    double log_tau_c() const noexcept { return log_tau_c_; }

private:
    double log_tau_h_;
    double log_tau_c_;
};

/// Profile curvature at the mode is not negative.
class CurvatureError : public Error {
public:
    CurvatureError(std::size_t axis, double curvature)
        : Error("log-scale profile along axis " + std::to_string(axis) +
                " is not locally concave (second difference " + std::to_string(curvature) + ")"),
          axis_(axis), curvature_(curvature) {}

    std::size_t axis() const noexcept { return axis_; }
    double curvature() const noexcept { return curvature_; }

private:
    std::size_t axis_;
    double curvature_;
};

/// log pi - log r is unbounded: the proposal does not envelope the target.
class EnvelopeViolationError : public Error {
public:
    EnvelopeViolationError(std::vector<double> witness, double log_ratio)
        : Error("envelope violated: log ratio " + std::to_string(log_ratio) + " keeps growing at a point of norm " +
                std::to_string(norm(witness))),
          witness_(std::move(witness)), log_ratio_(log_ratio) {}

    const std::vector<double>& witness() const noexcept { return witness_; }
    double log_ratio() const noexcept { return log_ratio_; }

private:
    static double norm(const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return std::sqrt(s);
    }

    std::vector<double> witness_;
    double log_ratio_;
};

/// Malformed configuration or command line.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace bymcmc
