#include <catch_amalgamated.hpp>

#include "support.hpp"

#include <bymcmc/run.hpp>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace bymcmc;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("bymcmc_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string without_wall_times(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line))
        if (line.find("wall_time") == std::string::npos) out += line + "\n";
    return out;
}

DatasetError::Kind load_error(const std::string& counts, const std::string& adjacency) {
    const auto dir = scratch("bad");
    write_file(dir / "c.csv", counts);
    write_file(dir / "a.csv", adjacency);
    try {
        load_dataset(dir / "c.csv", dir / "a.csv");
    } catch (const DatasetError& e) {
        return e.kind();
    }
    FAIL("expected a DatasetError");
    return DatasetError::Kind::io;
}

/// Small synthetic run that both samplers finish in seconds.
RunConfig small_config(const fs::path& out) {
    RunConfig c;
    apply_config_text(c, "synthesize = 2x5\n"
                         "synth_base_E = 100000\n"
                         "synth_tau_h = 10\n"
                         "synth_tau_c = 5\n"
                         "seed = 11\n"
                         "eps_random_effects = 0.05\n"
                         "eps_precision = 20\n"
                         "min_iterations = 200\n"
                         "check_start = 200\n"
                         "rejection_budget = 2000000\n"
                         "imh_budget = 200000\n");
    c.out_dir = out;
    return c;
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("BYMCMC_CLI");
    REQUIRE(cli != nullptr);
    const int status = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("two-region dataset loads", "[io]") {
    const auto dir = scratch("two");
    write_file(dir / "counts.csv", "region_id,Y,E\nA,3,2.5\nB,5,4.0\n");
    write_file(dir / "adj.csv", "A,B\n");
    const auto d = load_dataset(dir / "counts.csv", dir / "adj.csv");
    CHECK(d.region_ids == std::vector<std::string>{"A", "B"});
    CHECK(d.counts == std::vector<std::int64_t>{3, 5});
    CHECK(d.expected == std::vector<double>{2.5, 4.0});
    CHECK(d.adjacency.adjacent(0, 1));
    CHECK(d.adjacency.degree(0) == 1);
}

TEST_CASE("malformed datasets are rejected with the offending item", "[io]") {
    const std::string counts = "region_id,Y,E\nA,3,2.5\nB,5,4.0\nC,1,1.0\n";
    CHECK(load_error(counts, "A,B\nB,Z\n") == DatasetError::Kind::unknown_region);
    CHECK(load_error(counts, "A,B\nB,C\nB,A\n") == DatasetError::Kind::duplicate_edge);
    CHECK(load_error(counts, "A,A\n") == DatasetError::Kind::self_loop);
    CHECK(load_error("region_id,Y,E\nA,3,0\nB,5,4\n", "A,B\n") == DatasetError::Kind::nonpositive_expected);
    CHECK(load_error("region_id,Y,E\nA,3,-1\nB,5,4\n", "A,B\n") == DatasetError::Kind::nonpositive_expected);
    CHECK(load_error("region_id,Y,E\nA,2.5,1\nB,5,4\n", "A,B\n") == DatasetError::Kind::noninteger_count);
    CHECK(load_error("region_id,Y,E\nA,-2,1\nB,5,4\n", "A,B\n") == DatasetError::Kind::negative_count);
    CHECK(load_error("region_id,Y,E\nA,2,1\nA,5,4\n", "A,B\n") == DatasetError::Kind::duplicate_region);
    try {
        const auto dir = scratch("unknown");
        write_file(dir / "c.csv", counts);
        write_file(dir / "a.csv", "A,B\nB,Z\n");
        load_dataset(dir / "c.csv", dir / "a.csv");
    } catch (const DatasetError& e) {
        CHECK(e.subject() == "Z");
    }
}

TEST_CASE("a disconnected adjacency is rejected before sampling", "[io]") {
    const auto dir = scratch("disc");
    write_file(dir / "c.csv", "region_id,Y,E\nA,3,2.5\nB,5,4.0\nC,1,1.0\nD,2,2.0\n");
    write_file(dir / "a.csv", "A,B\nC,D\n");
    CHECK_THROWS_AS(load_dataset(dir / "c.csv", dir / "a.csv"), DisconnectedGraphError);
}

TEST_CASE("87-region dataset survives a write and read", "[io]") {
    const auto dir = scratch("roundtrip");
    const auto syn = synthesize_dataset(3, 29, 10.0, 5.0, 40.0, 5);
    write_dataset(syn.data, dir / "counts.csv", dir / "adj.csv");
    const auto back = load_dataset(dir / "counts.csv", dir / "adj.csv");
    CHECK(back.region_ids == syn.data.region_ids);
    CHECK(back.counts == syn.data.counts);
    CHECK(back.expected == syn.data.expected);
    CHECK(back.adjacency.edges() == syn.data.adjacency.edges());
}

TEST_CASE("synthetic data", "[io]") {
    SECTION("a fixed seed reproduces the dataset") {
        const auto a = synthesize_dataset(3, 4, 10.0, 5.0, 40.0, 77);
        const auto b = synthesize_dataset(3, 4, 10.0, 5.0, 40.0, 77);
        const auto c = synthesize_dataset(3, 4, 10.0, 5.0, 40.0, 78);
        CHECK(a.data.counts == b.data.counts);
        CHECK(a.data.expected == b.data.expected);
        CHECK(a.truth.theta == b.truth.theta);
        CHECK(a.data.counts != c.data.counts);
    }
    SECTION("huge precisions give relative risks near 1") {
        const double e = 10000.0;
        const auto s = synthesize_dataset(4, 5, 1e8, 1e8, e, 3);
        for (std::size_t i = 0; i < 20; ++i) {
            const double rr = static_cast<double>(s.data.counts[i]) / s.data.expected[i];
            CHECK_THAT(rr, WithinAbs(1.0, 5.0 / std::sqrt(0.5 * e)));
        }
    }
    SECTION("the spatial effect sums to zero") {
        const auto s = synthesize_dataset(3, 29, 10.0, 5.0, 40.0, 1);
        double sum = 0.0;
        for (double v : s.truth.phi) sum += v;
        CHECK(std::abs(sum) < 1e-10);
    }
}

TEST_CASE("configuration text", "[config]") {
    RunConfig c;
    apply_config_text(c, "# comment\n"
                         "seed = 5   # trailing comment\n"
                         "sampler = imh\n"
                         "alpha_h = 2\n"
                         "beta_c = 50\n"
                         "nu_r = 6\n"
                         "threshold_mode = mcse\n"
                         "monitor = theta[1] + phi[1] @ 0.02\n"
                         "monitor = tau_h @ 1\n"
                         "\n");
    CHECK(c.seed == 5u);
    CHECK(c.sampler == SamplerChoice::imh);
    CHECK(c.hyper.alpha_h == 2.0);
    CHECK(c.hyper.beta_c == 50.0);
    CHECK(c.proposal.nu_r == 6);
    CHECK(c.threshold_mode == ThresholdMode::mcse);
    CHECK(c.monitors.size() == 2);
    CHECK_THROWS_AS(apply_config_text(c, "no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "seed = abc\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "seed 5\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "sampler = gibbs\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "synthesize = 3by29\n"), ConfigError);

    RunConfig d;
    apply_setting(d, "synthesize", "3x29");
    REQUIRE(d.synthesize);
    CHECK(d.synthesize->rows == 3);
    CHECK(d.synthesize->cols == 29);
    CHECK_THROWS_AS(d.validate(), ConfigError);  // no seed
    d.seed = 1;
    CHECK_NOTHROW(d.validate());
    d.hyper.alpha_h = 0.5;
    CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("monitor expressions", "[config]") {
    const auto q = parse_monitor("theta[3] + phi[3] @ 0.01", 5);
    CHECK(q.epsilon == 0.01);
    REQUIRE(q.terms.size() == 2);
    CHECK(q.terms[0] == std::pair<std::size_t, double>{4, 1.0});
    CHECK(q.terms[1] == std::pair<std::size_t, double>{2 + 5 + 2, 1.0});
    const auto r = parse_monitor("2*tau_h - 0.5*tau_c @ 3", 5);
    REQUIRE(r.terms.size() == 2);
    CHECK(r.terms[0] == std::pair<std::size_t, double>{0, 2.0});
    CHECK(r.terms[1] == std::pair<std::size_t, double>{1, -0.5});
    const std::vector<double> x{4, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(r(x) == 7.0);
    CHECK_THROWS_AS(parse_monitor("theta[6] @ 0.1", 5), ConfigError);
    CHECK_THROWS_AS(parse_monitor("theta[0] @ 0.1", 5), ConfigError);
    CHECK_THROWS_AS(parse_monitor("beta @ 0.1", 5), ConfigError);
    CHECK_THROWS_AS(parse_monitor("theta[1]", 5), ConfigError);
}

TEST_CASE("config hash follows the settings and the data", "[config]") {
    const auto data = synthesize_dataset(2, 3, 10.0, 5.0, 40.0, 1).data;
    RunConfig c;
    c.seed = 3;
    const auto h = config_hash(c, data);
    CHECK(h.size() == 16);
    RunConfig w = c;
    w.workers = 4;
    w.out_dir = "elsewhere";
    CHECK(config_hash(w, data) == h);
    RunConfig s = c;
    s.seed = 4;
    CHECK(config_hash(s, data) != h);
    RunConfig p = c;
    p.hyper.beta_h = 99.0;
    CHECK(config_hash(p, data) != h);
    auto d2 = data;
    d2.counts[0] += 1;
    CHECK(config_hash(c, d2) != h);
}

TEST_CASE("a full run writes every artifact and is reproducible", "[run]") {
    const auto a = scratch("run_a");
    const auto b = scratch("run_b");
    const auto ra = run(small_config(a));
    auto cb = small_config(b);
    cb.workers = 3;
    const auto rb = run(cb);
    CHECK(ra.exit_code == 0);
    CHECK(rb.exit_code == 0);
    CHECK(ra.config_hash == rb.config_hash);

    for (const char* f : {"counts.csv", "adjacency.csv", "truth.txt", "proposal.txt", "envelope.txt",
                          "samples_rejection.bin", "samples_imh.bin", "summary_rejection.txt", "summary_imh.txt",
                          "metadata.txt"}) {
        INFO(f);
        REQUIRE(fs::exists(a / f));
        if (std::string(f) == "metadata.txt")
            CHECK(without_wall_times(slurp(a / f)) == without_wall_times(slurp(b / f)));
        else
            CHECK(slurp(a / f) == slurp(b / f));
    }
    for (const char* f : {"truth.txt", "proposal.txt", "envelope.txt", "summary_imh.txt", "metadata.txt"}) {
        INFO(f);
        CHECK_THAT(slurp(a / f), ContainsSubstring("config_hash = " + ra.config_hash));
        CHECK_THAT(slurp(a / f), ContainsSubstring("seed = 11"));
        const bool timed = slurp(a / f).find("wall_time") != std::string::npos;
        CHECK((!timed || std::string(f) == "metadata.txt"));
    }

    const auto samples = read_samples(a / "samples_imh.bin");
    CHECK(samples.header.sampler == "imh");
    CHECK(samples.header.n_regions == 10);
    CHECK(samples.header.config_hash == ra.config_hash);
    REQUIRE(samples.records() == ra.imh->draws.size());
    for (std::size_t k = 0; k < samples.records(); k += 97) {
        const auto rec = samples.record(k);
        const auto row = ra.imh->draws[k];
        CHECK(std::equal(rec.begin(), rec.end(), row.begin(), row.end()));
    }
    const auto md = read_key_values(a / "metadata.txt");
    CHECK(md.at("exit_code") == "0");
    CHECK(md.at("rejection.status") == "stopped");
    CHECK(md.at("imh.status") == "stopped");
    CHECK(md.count("imh.wall_time_seconds") == 1);
}

TEST_CASE("a run that cannot meet its thresholds exits with status 2", "[run]") {
    const auto dir = scratch("tight");
    auto c = small_config(dir);
    c.sampler = SamplerChoice::imh;
    c.eps_random_effects = 1e-6;
    c.imh_budget = 3000;
    const auto r = run(c);
    CHECK(r.exit_code == 2);
    const auto md = read_key_values(dir / "metadata.txt");
    CHECK(md.at("imh.status") == "not_converged");
    CHECK(md.at("converged") == "false");
    CHECK(md.count("rejection.status") == 0);
    CHECK(fs::exists(dir / "envelope.txt"));
}

TEST_CASE("command line tool", "[cli]") {
    const auto dir = scratch("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("--synthesize 2x5 --out " + (dir / "noseed").string()) == 1);
    CHECK(run_cli("--synthesize 2x5 --seed 1 --sampler gibbs --out " + (dir / "x").string()) != 0);
    CHECK(run_cli("--counts " + (dir / "missing.csv").string() + " --adjacency " + (dir / "missing.csv").string() +
                  " --seed 1 --out " + (dir / "x").string()) == 1);

    CHECK(run_cli("--synthesize 2x5 --seed 4 --data-only --out " + (dir / "data").string()) == 0);
    REQUIRE(fs::exists(dir / "data" / "counts.csv"));
    REQUIRE(fs::exists(dir / "data" / "truth.txt"));

    write_file(dir / "run.cfg", "eps_random_effects = 1\n"
                                "eps_precision = 1000\n"
                                "min_iterations = 200\n"
                                "check_start = 200\n"
                                "rejection_budget = 50000000\n"
                                "sampler = both\n"
                                "seed = 9\n");
    const std::string files = " --counts " + (dir / "data" / "counts.csv").string() + " --adjacency " +
                              (dir / "data" / "adjacency.csv").string();
    CHECK(run_cli("--config " + (dir / "run.cfg").string() + files + " --sampler imh -q --out " +
                  (dir / "out").string()) == 0);
    const auto md = read_key_values(dir / "out" / "metadata.txt");
    CHECK(md.at("sampler") == "imh");
    CHECK(md.at("seed") == "9");
    CHECK(md.at("exit_code") == "0");
    CHECK_FALSE(fs::exists(dir / "out" / "samples_rejection.bin"));

    write_file(dir / "bad.cfg", "colour = blue\n");
    CHECK(run_cli("--config " + (dir / "bad.cfg").string() + files + " --seed 1 --out " + (dir / "y").string()) == 1);
}
