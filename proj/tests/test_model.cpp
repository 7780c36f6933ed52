#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace bymcmc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

/// Term-by-term log posterior written out with dense algebra.
double reference_log_posterior(const ModelState& s, const SpatialDataset& d, const Hyperparameters& h) {
    const std::size_t n = d.n_regions();
    const Eigen::MatrixXd q = testsupport::dense_laplacian(d.adjacency);
    Eigen::VectorXd phi(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) phi(static_cast<Eigen::Index>(i)) = s.phi[i];
    double like = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = s.theta[i] + s.phi[i];
        like += w * static_cast<double>(d.counts[i]) - d.expected[i] * std::exp(w);
        tt += s.theta[i] * s.theta[i];
    }
    const double m = static_cast<double>(n) - 1.0;
    return like - 0.5 * s.tau_h * tt - 0.5 * s.tau_c * phi.dot(q * phi) +
           (0.5 * static_cast<double>(n) + h.alpha_h - 1.0) * std::log(s.tau_h) +
           (0.5 * m + h.alpha_c - 1.0) * std::log(s.tau_c) - s.tau_h / h.beta_h - s.tau_c / h.beta_c;
}

ModelState random_state(std::size_t n, Engine& rng) {
    std::normal_distribution<double> z;
    ModelState s;
    for (std::size_t i = 0; i < n; ++i) {
        s.theta.push_back(0.5 * z(rng));
        s.phi.push_back(0.5 * z(rng));
    }
    s.tau_h = std::exp(z(rng));
    s.tau_c = std::exp(z(rng));
    return s;
}

} // namespace

TEST_CASE("precision matrix of a two-node path", "[model]") {
    const auto q = build_precision_matrix(Graph::path(2));
    CHECK(q(0, 0) == 1.0);
    CHECK(q(1, 1) == 1.0);
    CHECK(q(0, 1) == -1.0);
    CHECK(q(1, 0) == -1.0);
    CHECK(q.rank_deficiency() == 1);
}

TEST_CASE("precision matrix of a triangle", "[model]") {
    Graph g(3);
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    g.add_edge(0, 2);
    const auto q = build_precision_matrix(g);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(q(i, j) == (i == j ? 2.0 : -1.0));
}

TEST_CASE("precision matrix of a 2x2 rook lattice", "[model]") {
    const auto q = build_precision_matrix(Graph::lattice(2, 2));
    for (std::size_t i = 0; i < 4; ++i) CHECK(q(i, i) == 2.0);
    // 1-based pairs (1,2), (1,3), (2,4), (3,4) are neighbours; (1,4), (2,3) are not
    CHECK(q(0, 1) == -1.0);
    CHECK(q(0, 2) == -1.0);
    CHECK(q(1, 3) == -1.0);
    CHECK(q(2, 3) == -1.0);
    CHECK(q(0, 3) == 0.0);
    CHECK(q(1, 2) == 0.0);
}

TEST_CASE("disconnected graphs are rejected with their components", "[model]") {
    Graph g(4);
    g.add_edge(0, 1);
    g.add_edge(2, 3);
    try {
        build_precision_matrix(g);
        FAIL("expected DisconnectedGraphError");
    } catch (const DisconnectedGraphError& e) {
        CHECK(e.components().size() == 2);
    }
    auto d = testsupport::make_dataset(g, {1, 2, 3, 4}, {1, 1, 1, 1});
    CHECK_THROWS_AS(validate(d), DisconnectedGraphError);
}

TEST_CASE("precision matrix rows sum to zero and the spectrum is nonnegative", "[model][property]") {
    Engine rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rep % 12;
        const auto g = testsupport::random_connected_graph(n, n, rng);
        const auto q = build_precision_matrix(g);
        for (std::size_t i = 0; i < n; ++i) CHECK(q.row_sum(i) == 0);
        const auto ev = q.eigenvalues();
        CHECK(ev.front() > -1e-10);
        CHECK(q.nonzero_eigenvalues().size() == n - 1);
        CHECK((q.dense() - testsupport::dense_laplacian(g)).norm() == 0.0);
    }
}

TEST_CASE("single-region log posterior", "[model]") {
    const auto d = testsupport::make_dataset(Graph(1), {0}, {1.0});
    const Hyperparameters h{1.0, 1.0, 1.0, 1.0};
    const auto q = build_precision_matrix(d.adjacency);
    const ModelState s{{0.0}, {0.0}, 1.0, 1.0};
    CHECK_THAT(log_unnormalized_posterior(s, d, h, q), WithinAbs(-3.0, 1e-14));
}

TEST_CASE("two-region path log posterior at the origin", "[model]") {
    const auto d = testsupport::make_dataset(Graph::path(2), {3, 2}, {1.0, 1.0});
    const Hyperparameters h{1.0, 1.0, 1.0, 1.0};
    const auto q = build_precision_matrix(d.adjacency);
    const ModelState s{{0.0, 0.0}, {0.0, 0.0}, 2.0, 2.0};
    // likelihood -E1 - E2 = -2; log terms (N/2) log 2 + (M/2) log 2; prior terms -tau/beta = -2 each
    const double expected = -2.0 + 1.0 * std::log(2.0) + 0.5 * std::log(2.0) - 2.0 - 2.0;
    CHECK_THAT(log_unnormalized_posterior(s, d, h, q), WithinAbs(expected, 1e-14));
    CHECK_THAT(expected, WithinAbs(-6.0 + 1.5 * std::log(2.0), 1e-14));
}

TEST_CASE("shifting theta against phi changes only the Gaussian terms", "[model]") {
    Engine rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        const auto d = testsupport::random_dataset(5, rng);
        const Hyperparameters h;
        const auto q = build_precision_matrix(d.adjacency);
        const auto s = random_state(5, rng);
        auto t = s;
        std::normal_distribution<double> z;
        for (std::size_t i = 0; i < 5; ++i) {
            const double c = z(rng);
            t.theta[i] += c;
            t.phi[i] -= c;
        }
        auto gauss = [&](const ModelState& m) {
            double tt = 0.0;
            for (double v : m.theta) tt += v * v;
            return -0.5 * m.tau_h * tt - 0.5 * m.tau_c * q.quadratic_form(m.phi);
        };
        const double diff = log_unnormalized_posterior(t, d, h, q) - log_unnormalized_posterior(s, d, h, q);
        CHECK_THAT(diff, WithinAbs(gauss(t) - gauss(s), 1e-10));
    }
}

TEST_CASE("log posterior matches term-by-term evaluation, including theta/phi swaps", "[model][property]") {
    Engine rng(5);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 1 + rep % 5;
        const auto d = n == 1 ? testsupport::make_dataset(Graph(1), {4}, {2.5}) : testsupport::random_dataset(n, rng);
        const Hyperparameters h{1.5, 20.0, 2.0, 50.0};
        const auto q = build_precision_matrix(d.adjacency);
        const auto s = random_state(n, rng);
        ModelState sw = s;
        std::swap(sw.theta, sw.phi);
        for (const auto& m : {s, sw}) {
            const double ref = reference_log_posterior(m, d, h);
            CHECK_THAT(log_unnormalized_posterior(m, d, h, q), WithinAbs(ref, 1e-10 * (1.0 + std::abs(ref))));
            const PosteriorDensity post(d, h, q);
            CHECK_THAT(post(m.to_flat()), WithinAbs(ref, 1e-10 * (1.0 + std::abs(ref))));
        }
    }
}

TEST_CASE("log posterior decreases without bound along rays in theta", "[model][property]") {
    Engine rng(8);
    const auto d = testsupport::random_dataset(6, rng);
    const Hyperparameters h;
    const auto q = build_precision_matrix(d.adjacency);
    for (int rep = 0; rep < 5; ++rep) {
        auto s = random_state(6, rng);
        std::vector<double> dir(6);
        std::normal_distribution<double> z;
        for (auto& v : dir) v = z(rng);
        const double start = log_unnormalized_posterior(s, d, h, q);
        const auto base = s.theta;
        // concave along the ray: once the value falls it keeps falling
        std::vector<double> vals;
        for (double t : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
            for (std::size_t i = 0; i < 6; ++i) s.theta[i] = base[i] + t * dir[i];
            try {
                vals.push_back(log_unnormalized_posterior(s, d, h, q));
            } catch (const OverflowError&) {
                break;
            }
        }
        REQUIRE(vals.size() >= 3);
        bool falling = false;
        for (std::size_t k = 1; k < vals.size(); ++k) {
            if (vals[k] < vals[k - 1]) falling = true;
            else CHECK_FALSE(falling);
        }
        CHECK(vals.back() < start);
        const double prev = vals.back();
        CHECK(prev < -100.0);
    }
}

TEST_CASE("overflow of exp(theta + phi) is a structured error", "[model]") {
    const auto d = testsupport::make_dataset(Graph::path(2), {3, 2}, {1.0, 1.0});
    const auto q = build_precision_matrix(d.adjacency);
    const ModelState s{{800.0, 0.0}, {0.0, 0.0}, 1.0, 1.0};
    try {
        log_unnormalized_posterior(s, d, Hyperparameters{}, q);
        FAIL("expected OverflowError");
    } catch (const OverflowError& e) {
        CHECK(e.region() == 0);
    }
    const PosteriorDensity post(d, Hyperparameters{}, q);
    CHECK(post(s.to_flat()) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("zero counts are used as is by the exact posterior", "[model]") {
    const auto d = testsupport::make_dataset(Graph::path(2), {0, 0}, {2.0, 3.0});
    const auto q = build_precision_matrix(d.adjacency);
    const Hyperparameters h{1.0, 1.0, 1.0, 1.0};
    const ModelState s{{0.1, 0.2}, {0.0, 0.0}, 1.0, 1.0};
    const double expected = -2.0 * std::exp(0.1) - 3.0 * std::exp(0.2) - 0.5 * (0.01 + 0.04) - 2.0;
    CHECK_THAT(log_unnormalized_posterior(s, d, h, q), WithinAbs(expected, 1e-12));
}

TEST_CASE("gradient on the log precision scale matches finite differences", "[model]") {
    Engine rng(21);
    const auto d = testsupport::random_dataset(7, rng);
    const PosteriorDensity post(d, Hyperparameters{}, build_precision_matrix(d.adjacency));
    const auto s = random_state(7, rng).to_flat();
    std::vector<double> g(s.size());
    post.gradient_log_scale(s, g);
    auto f = [&](std::vector<double> z) {
        z[0] = std::exp(z[0]);
        z[1] = std::exp(z[1]);
        return post(z);
    };
    std::vector<double> z = s;
    z[0] = std::log(z[0]);
    z[1] = std::log(z[1]);
    for (std::size_t k = 0; k < z.size(); ++k) {
        auto zp = z, zm = z;
        zp[k] += 1e-6;
        zm[k] -= 1e-6;
        CHECK_THAT(g[k], WithinAbs((f(zp) - f(zm)) / 2e-6, 1e-5 * (1.0 + std::abs(g[k]))));
    }
}

TEST_CASE("hyperparameter validation", "[model]") {
    CHECK_NOTHROW(Hyperparameters{}.validate());
    CHECK_THROWS_AS((Hyperparameters{0.5, 1.0, 1.0, 1.0}.validate()), DomainError);
    CHECK_THROWS_AS((Hyperparameters{1.0, -1.0, 1.0, 1.0}.validate()), DomainError);
    CHECK_THROWS_AS((Hyperparameters{1.0, 1.0, 0.0, 1.0}.validate()), DomainError);
}

TEST_CASE("dataset validation catches each invariant", "[model]") {
    auto d = testsupport::make_dataset(Graph::path(3), {1, 2, 3}, {1.0, 1.0, 1.0});
    CHECK_NOTHROW(validate(d));
    auto bad = d;
    bad.expected[1] = 0.0;
    CHECK_THROWS_AS(validate(bad), DatasetError);
    bad = d;
    bad.counts[2] = -1;
    CHECK_THROWS_AS(validate(bad), DatasetError);
}

TEST_CASE("flat state layout round-trips", "[model]") {
    const ModelState s{{1.0, 2.0}, {3.0, 4.0}, 5.0, 6.0};
    const auto x = s.to_flat();
    CHECK(x == std::vector<double>{5.0, 6.0, 1.0, 2.0, 3.0, 4.0});
    const auto r = ModelState::from_flat(x);
    CHECK(r.theta == s.theta);
    CHECK(r.phi == s.phi);
    CHECK(r.tau_h == 5.0);
    CHECK(r.tau_c == 6.0);
}
