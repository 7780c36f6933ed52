#pragma once

#include "error.hpp"
#include "gaussian_approx.hpp"
#include "heavy_tail_proposal.hpp"
#include "io.hpp"
#include "mc_output.hpp"
#include "model.hpp"
#include "random.hpp"
#include "samplers.hpp"
#include "spatial_model.hpp"

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace bymcmc {

enum class SamplerChoice { rejection, imh, both };

inline std::string to_string(SamplerChoice s) {
    switch (s) {
    case SamplerChoice::rejection: return "rejection";
    case SamplerChoice::imh: return "imh";
    case SamplerChoice::both: return "both";
    }
    return "both";
}

inline SamplerChoice parse_sampler_choice(const std::string& s) {
    if (s == "rejection") return SamplerChoice::rejection;
    if (s == "imh") return SamplerChoice::imh;
    if (s == "both") return SamplerChoice::both;
    throw ConfigError("sampler must be rejection, imh or both, got '" + s + "'");
}

/// Lattice dataset simulated in place of data files.
struct SynthesisSettings {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double tau_h = 10.0;
    double tau_c = 5.0;
    double base_E = 40.0;
    /// Defaults to the run seed.
    std::optional<std::uint64_t> seed;
};

/// Parses "RxC" (also accepts 'X' and the multiplication sign).
inline std::pair<std::size_t, std::size_t> parse_lattice(const std::string& text) {
    std::string s = text;
    for (const std::string sep : {"\xC3\x97", "X"}) {
        for (auto p = s.find(sep); p != std::string::npos; p = s.find(sep)) s.replace(p, sep.size(), "x");
    }
    const auto x = s.find('x');
    std::size_t r = 0, c = 0;
    if (x == std::string::npos) throw ConfigError("lattice must look like 3x29, got '" + text + "'");
    const auto a = s.substr(0, x), b = s.substr(x + 1);
    const auto ra = std::from_chars(a.data(), a.data() + a.size(), r);
    const auto rb = std::from_chars(b.data(), b.data() + b.size(), c);
    if (ra.ec != std::errc() || ra.ptr != a.data() + a.size() || rb.ec != std::errc() ||
        rb.ptr != b.data() + b.size() || r < 2 || c < 2)
        throw ConfigError("lattice must look like 3x29 with both sides >= 2, got '" + text + "'");
    return {r, c};
}

struct RunConfig {
    std::filesystem::path counts_path;
    std::filesystem::path adjacency_path;
    std::optional<SynthesisSettings> synthesize;

    Hyperparameters hyper;
    ProposalConfig proposal;
    SamplerChoice sampler = SamplerChoice::both;

    EnvelopeBound::Method bound_method = EnvelopeBound::Method::optimized;
    double safety_margin = 0.5;
    /// Draws from r used as extra starting points of the bound search.
    std::size_t bound_starts = 8;
    std::size_t empirical_draws = 100'000;

    double eps_random_effects = 0.01;
    double eps_precision = 2.0;
    double confidence = 0.95;
    std::size_t min_iterations = 1000;
    std::size_t check_start = 1000;
    ThresholdMode threshold_mode = ThresholdMode::half_width;
    /// Monitor all 2N + 2 coordinates with the two group thresholds.
    bool monitor_defaults = true;
    /// Extra functionals, "expression @ epsilon".
    std::vector<std::string> monitors;

    std::optional<std::uint64_t> seed;
    std::filesystem::path out_dir = "bymcmc_out";
    std::size_t rejection_budget = 10'000'000;
    std::size_t imh_budget = 10'000'000;
    std::size_t batch_size = 256;
    std::size_t workers = 1;

    void validate() const {
        if (!seed) throw ConfigError("a seed is required");
        if (!synthesize) {
            if (counts_path.empty() || adjacency_path.empty())
                throw ConfigError("counts and adjacency files are required unless a lattice is synthesized");
            for (const auto& p : {counts_path, adjacency_path})
                if (!std::filesystem::exists(p)) throw ConfigError("file does not exist: " + p.string());
        }
        if (!(eps_random_effects > 0.0) || !(eps_precision > 0.0)) throw ConfigError("thresholds must be positive");
        if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
        if (min_iterations < 100) throw ConfigError("min_iterations must be at least 100");
        if (check_start == 0 || batch_size == 0) throw ConfigError("check_start and batch_size must be positive");
        if (!(safety_margin >= 0.0)) throw ConfigError("safety_margin must be non-negative");
        if (!monitor_defaults && monitors.empty()) throw ConfigError("nothing to monitor");
        try {
            hyper.validate();
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw ConfigError("bad value for " + key + ": '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad value for " + key + ": '" + v + "'");
}

inline SynthesisSettings& synthesis(RunConfig& c) {
    if (!c.synthesize) c.synthesize = SynthesisSettings{};
    return *c.synthesize;
}

} // namespace detail

/// Applies one key = value setting. Unknown keys are errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
    using detail::parse_number;
    if (key == "counts") c.counts_path = v;
    else if (key == "adjacency") c.adjacency_path = v;
    else if (key == "sampler") c.sampler = parse_sampler_choice(v);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "out") c.out_dir = v;
    else if (key == "alpha_h") c.hyper.alpha_h = parse_number<double>(key, v);
    else if (key == "beta_h") c.hyper.beta_h = parse_number<double>(key, v);
    else if (key == "alpha_c") c.hyper.alpha_c = parse_number<double>(key, v);
    else if (key == "beta_c") c.hyper.beta_c = parse_number<double>(key, v);
    else if (key == "nu_h") c.proposal.nu_h = parse_number<int>(key, v);
    else if (key == "nu_c") c.proposal.nu_c = parse_number<int>(key, v);
    else if (key == "nu_r") c.proposal.nu_r = parse_number<int>(key, v);
    else if (key == "delta") c.proposal.delta = parse_number<double>(key, v);
    else if (key == "scale_inflation") c.proposal.scale_inflation = parse_number<double>(key, v);
    else if (key == "bound_method") {
        if (v == "optimized") c.bound_method = EnvelopeBound::Method::optimized;
        else if (v == "empirical_sup") c.bound_method = EnvelopeBound::Method::empirical_sup;
        else throw ConfigError("bound_method must be optimized or empirical_sup");
    } else if (key == "safety_margin") c.safety_margin = parse_number<double>(key, v);
    else if (key == "bound_starts") c.bound_starts = parse_number<std::size_t>(key, v);
    else if (key == "empirical_draws") c.empirical_draws = parse_number<std::size_t>(key, v);
    else if (key == "eps_random_effects") c.eps_random_effects = parse_number<double>(key, v);
    else if (key == "eps_precision") c.eps_precision = parse_number<double>(key, v);
    else if (key == "confidence") c.confidence = parse_number<double>(key, v);
    else if (key == "min_iterations") c.min_iterations = parse_number<std::size_t>(key, v);
    else if (key == "check_start") c.check_start = parse_number<std::size_t>(key, v);
    else if (key == "threshold_mode") {
        if (v == "half_width") c.threshold_mode = ThresholdMode::half_width;
        else if (v == "mcse") c.threshold_mode = ThresholdMode::mcse;
        else throw ConfigError("threshold_mode must be half_width or mcse");
    } else if (key == "monitor_defaults") c.monitor_defaults = detail::parse_bool(key, v);
    else if (key == "monitor") c.monitors.push_back(v);
    else if (key == "rejection_budget") c.rejection_budget = parse_number<std::size_t>(key, v);
    else if (key == "imh_budget") c.imh_budget = parse_number<std::size_t>(key, v);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, v);
    else if (key == "workers") c.workers = parse_number<std::size_t>(key, v);
    else if (key == "synthesize") {
        auto [r, k] = parse_lattice(v);
        detail::synthesis(c).rows = r;
        detail::synthesis(c).cols = k;
    } else if (key == "synth_tau_h") detail::synthesis(c).tau_h = parse_number<double>(key, v);
    else if (key == "synth_tau_c") detail::synthesis(c).tau_c = parse_number<double>(key, v);
    else if (key == "synth_base_E") detail::synthesis(c).base_E = parse_number<double>(key, v);
    else if (key == "synth_seed") detail::synthesis(c).seed = parse_number<std::uint64_t>(key, v);
    else throw ConfigError("unknown configuration key '" + key + "'");
}

/// Reads flat `key = value` lines; '#' starts a comment. `monitor` may repeat.
inline void apply_config_text(RunConfig& c, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
        apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config_text(c, ss.str());
}

/// Parses a linear functional of the flat state such as "theta[3] + phi[3]" or
/// "2*tau_h - 0.5*tau_c". Indices are 1-based.
inline MonitoredQuantity parse_monitor(const std::string& spec, std::size_t n_regions) {
    const auto at = spec.rfind('@');
    if (at == std::string::npos) throw ConfigError("monitor needs '@ epsilon': '" + spec + "'");
    std::string expr;
    for (char ch : spec.substr(0, at))
        if (ch != ' ' && ch != '\t') expr += ch;
    MonitoredQuantity q;
    q.name = expr;
    q.epsilon = detail::parse_number<double>("monitor epsilon", detail::trim(spec.substr(at + 1)));
    if (expr.empty()) throw ConfigError("empty monitor expression");
    std::size_t p = 0;
    while (p < expr.size()) {
        double sign = 1.0;
        if (expr[p] == '+' || expr[p] == '-') {
            sign = expr[p] == '-' ? -1.0 : 1.0;
            ++p;
        } else if (p != 0) {
            throw ConfigError("bad monitor expression '" + expr + "'");
        }
        auto end = expr.find_first_of("+-", p);
        // exponents such as 1e-3 belong to the coefficient
        while (end != std::string::npos && end > p && (expr[end - 1] == 'e' || expr[end - 1] == 'E') &&
               expr.find('*', p) != std::string::npos && end < expr.find('*', p))
            end = expr.find_first_of("+-", end + 1);
        std::string term = expr.substr(p, end == std::string::npos ? std::string::npos : end - p);
        p = end == std::string::npos ? expr.size() : end;
        double coef = 1.0;
        if (const auto star = term.find('*'); star != std::string::npos) {
            coef = detail::parse_number<double>("monitor coefficient", term.substr(0, star));
            term = term.substr(star + 1);
        }
        std::size_t index = 0;
        if (term == "tau_h") index = 0;
        else if (term == "tau_c") index = 1;
        else {
            const bool is_theta = term.rfind("theta[", 0) == 0, is_phi = term.rfind("phi[", 0) == 0;
            if ((!is_theta && !is_phi) || term.back() != ']') throw ConfigError("unknown monitor term '" + term + "'");
            const auto open = term.find('[');
            const auto i = detail::parse_number<std::size_t>("monitor index", term.substr(open + 1, term.size() - open - 2));
            if (i < 1 || i > n_regions) throw ConfigError("monitor index out of range in '" + term + "'");
            index = 2 + (is_phi ? n_regions : 0) + (i - 1);
        }
        q.terms.push_back({index, sign * coef});
    }
    return q;
}

inline StoppingRule make_stopping_rule(const RunConfig& c, std::size_t n_regions) {
    StoppingRule rule;
    if (c.monitor_defaults) rule.quantities = default_quantities(n_regions, c.eps_precision, c.eps_random_effects);
    for (const auto& m : c.monitors) rule.quantities.push_back(parse_monitor(m, n_regions));
    rule.confidence = c.confidence;
    rule.min_iterations = c.min_iterations;
    rule.check_start = c.check_start;
    rule.mode = c.threshold_mode;
    return rule;
}

// ---------------------------------------------------------------------------
// Config hash

/// 64-bit FNV-1a.
class Fnv1a {
public:
    void add(std::string_view s) {
        for (unsigned char ch : s) {
            h_ ^= ch;
            h_ *= 0x100000001b3ULL;
        }
    }
    void add(double v) { add(std::to_string(std::bit_cast<std::uint64_t>(v))); }
    std::uint64_t value() const noexcept { return h_; }
    std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h_;
        return os.str();
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Every setting that can change the output, one `key = value` per line. File
/// paths, the output directory and the worker count are left out: the data enter
/// the hash through their contents, and results do not depend on workers.
inline std::string canonical_text(const RunConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "sampler = " << to_string(c.sampler) << "\n";
    os << "seed = " << c.seed.value_or(0) << "\n";
    os << "alpha_h = " << c.hyper.alpha_h << "\nbeta_h = " << c.hyper.beta_h << "\nalpha_c = " << c.hyper.alpha_c
       << "\nbeta_c = " << c.hyper.beta_c << "\n";
    os << "nu_h = " << c.proposal.nu_h << "\nnu_c = " << c.proposal.nu_c << "\nnu_r = " << c.proposal.nu_r
       << "\ndelta = " << c.proposal.delta << "\nscale_inflation = " << c.proposal.scale_inflation << "\n";
    os << "bound_method = " << (c.bound_method == EnvelopeBound::Method::optimized ? "optimized" : "empirical_sup")
       << "\nsafety_margin = " << c.safety_margin << "\nbound_starts = " << c.bound_starts
       << "\nempirical_draws = " << c.empirical_draws << "\n";
    os << "eps_random_effects = " << c.eps_random_effects << "\neps_precision = " << c.eps_precision
       << "\nconfidence = " << c.confidence << "\nmin_iterations = " << c.min_iterations
       << "\ncheck_start = " << c.check_start
       << "\nthreshold_mode = " << (c.threshold_mode == ThresholdMode::half_width ? "half_width" : "mcse")
       << "\nmonitor_defaults = " << (c.monitor_defaults ? "true" : "false") << "\n";
    for (const auto& m : c.monitors) os << "monitor = " << m << "\n";
    os << "rejection_budget = " << c.rejection_budget << "\nimh_budget = " << c.imh_budget
       << "\nbatch_size = " << c.batch_size << "\n";
    if (c.synthesize) {
        const auto& s = *c.synthesize;
        os << "synthesize = " << s.rows << "x" << s.cols << "\nsynth_tau_h = " << s.tau_h
           << "\nsynth_tau_c = " << s.tau_c << "\nsynth_base_E = " << s.base_E
           << "\nsynth_seed = " << s.seed.value_or(c.seed.value_or(0)) << "\n";
    }
    return os.str();
}

inline void hash_dataset(Fnv1a& h, const SpatialDataset& d) {
    for (std::size_t i = 0; i < d.n_regions(); ++i) {
        h.add(d.region_ids[i]);
        h.add(std::to_string(d.counts[i]));
        h.add(d.expected[i]);
    }
    for (auto [a, b] : d.adjacency.edges()) h.add(std::to_string(a) + "-" + std::to_string(b));
}

inline std::string config_hash(const RunConfig& c, const SpatialDataset& data) {
    Fnv1a h;
    h.add(canonical_text(c));
    hash_dataset(h, data);
    return h.hex();
}

// ---------------------------------------------------------------------------
// Driver

/// Sub-stream indices of the run seed.
inline constexpr std::uint64_t bound_stream = 101;
inline constexpr std::uint64_t rejection_stream = 201;
inline constexpr std::uint64_t imh_stream = 202;

struct RunResult {
    int exit_code = 2;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t n_regions = 0;
    ProposalSpec proposal;
    std::optional<EnvelopeBound> bound;
    double bound_wall_time = 0.0;
    std::optional<SamplerRun> rejection;
    std::optional<SamplerRun> imh;

    bool converged() const {
        const bool r = !rejection || rejection->status == RunStatus::stopped;
        const bool i = !imh || imh->status == RunStatus::stopped;
        return r && i;
    }
};

/// Loads the data files, or simulates the lattice described by the config.
inline SpatialDataset load_or_synthesize(const RunConfig& c, std::optional<SyntheticTruth>* truth = nullptr) {
    if (c.synthesize) {
        const auto& s = *c.synthesize;
        auto syn = synthesize_dataset(s.rows, s.cols, s.tau_h, s.tau_c, s.base_E, s.seed.value_or(c.seed.value_or(0)));
        if (truth) *truth = syn.truth;
        return std::move(syn.data);
    }
    return load_dataset(c.counts_path, c.adjacency_path);
}

namespace detail {

inline std::string artifact_header(const std::string& title, const std::string& hash, std::uint64_t seed) {
    std::ostringstream os;
    os << "# " << title << "\n# config_hash = " << hash << "\n# seed = " << seed << "\n";
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

inline std::string bound_report(const EnvelopeBound& b, double safety_margin) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << "method = " << (b.method == EnvelopeBound::Method::optimized ? "optimized" : "empirical_sup") << "\n";
    os << "exact = " << (b.method == EnvelopeBound::Method::optimized ? "true" : "false") << "\n";
    os << "log_B = " << b.log_B << "\n";
    os << "max_log_ratio = " << b.max_log_ratio << "\n";
    os << "safety_margin = " << (b.method == EnvelopeBound::Method::optimized ? safety_margin : 0.0) << "\n";
    if (b.argmax.size() >= 2) os << "argmax_tau_h = " << b.argmax[0] << "\nargmax_tau_c = " << b.argmax[1] << "\n";
    os << "# trace: one row per start (optimized) or per new running maximum (empirical_sup)\n";
    os << std::left << std::setw(6) << "row" << std::right << std::setw(20) << "start_log_ratio" << std::setw(20)
       << "log_ratio" << std::setw(12) << "iterations" << std::setw(20) << "tau_h" << std::setw(20) << "tau_c"
       << "\n";
    for (std::size_t k = 0; k < b.trace.size(); ++k) {
        const auto& t = b.trace[k];
        os << std::left << std::setw(6) << k << std::right << std::setw(20) << t.start_log_ratio << std::setw(20)
           << t.log_ratio << std::setw(12) << t.iterations << std::setw(20) << (t.point.size() > 0 ? t.point[0] : 0.0)
           << std::setw(20) << (t.point.size() > 1 ? t.point[1] : 0.0) << "\n";
    }
    return os.str();
}

inline std::string run_block(const std::string& name, const SamplerRun& r) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << name << ".status = " << (r.status == RunStatus::stopped ? "stopped" : "not_converged") << "\n";
    os << name << ".rng_seed = " << r.rng_seed << "\n";
    os << name << ".draws = " << r.draws.size() << "\n";
    os << name << ".n_proposed = " << r.n_proposed << "\n";
    os << name << ".n_accepted = " << r.n_accepted << "\n";
    os << name << ".acceptance_rate = " << r.acceptance_rate() << "\n";
    if (name == "rejection") os << name << ".n_bound_exceeded = " << r.n_bound_exceeded << "\n";
    return os.str();
}

} // namespace detail

/// Runs the whole workflow and writes the artifacts into config.out_dir:
/// proposal.txt, envelope.txt, samples_<sampler>.bin, summary_<sampler>.txt and
/// metadata.txt. Only metadata.txt carries wall-clock times. Exit code 0 means every
/// selected sampler stopped by the rule; 2 means a budget ran out first.
inline RunResult run(const RunConfig& config, std::ostream* log = nullptr) {
    config.validate();
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };
    std::optional<SyntheticTruth> truth;
    const SpatialDataset data = load_or_synthesize(config, &truth);
    validate(data);

    RunResult result;
    result.seed = *config.seed;
    result.config_hash = config_hash(config, data);
    result.n_regions = data.n_regions();
    const auto& hash = result.config_hash;
    const auto seed = result.seed;
    std::filesystem::create_directories(config.out_dir);
    const auto dir = config.out_dir;
    if (truth) {
        write_dataset(data, dir / "counts.csv", dir / "adjacency.csv");
        detail::write_text(dir / "truth.txt", detail::artifact_header("synthetic truth", hash, seed) + to_text(*truth));
    }
    say("regions: " + std::to_string(data.n_regions()) + ", config hash " + hash);

    const auto q = build_precision_matrix(data.adjacency);
    const auto ctx = compute_mu_hat(data);
    result.proposal = fit_proposal(ctx, config.hyper, q, config.proposal);
    detail::write_text(dir / "proposal.txt",
                       detail::artifact_header("proposal", hash, seed) + to_text(result.proposal));
    say("proposal fitted");

    const SpatialProposalSource source(PosteriorDensity(data, config.hyper, q), ctx, result.proposal);
    const StoppingRule rule = make_stopping_rule(config, data.n_regions());
    rule.validate();

    {
        const auto t0 = std::chrono::steady_clock::now();
        Engine rng = make_engine(seed, bound_stream);
        if (config.bound_method == EnvelopeBound::Method::optimized) {
            BoundConfig bc;
            bc.safety_margin = config.safety_margin;
            result.bound = source.optimize_bound(config.bound_starts, rng, bc);
        } else {
            result.bound = empirical_sup_bound(source, config.empirical_draws, rng);
        }
        result.bound_wall_time = detail::seconds_since(t0);
        detail::write_text(dir / "envelope.txt", detail::artifact_header("envelope bound", hash, seed) +
                                                     detail::bound_report(*result.bound, config.safety_margin));
        std::ostringstream os;
        os << "log_B = " << result.bound->log_B;
        say(os.str());
    }

    auto run_one = [&](const std::string& name, std::size_t budget, auto&& sampler) {
        SamplesWriter writer(dir / ("samples_" + name + ".bin"), {name, data.n_regions(), seed, hash});
        SamplerOptions opt;
        opt.budget = budget;
        opt.batch_size = config.batch_size;
        opt.workers = config.workers;
        opt.sink = [&writer](std::span<const double> x) { writer.write(x); };
        SamplerRun r = sampler(opt);
        writer.flush();
        std::string report = detail::artifact_header(name + " summary", hash, seed);
        report += "# status = " + std::string(r.status == RunStatus::stopped ? "stopped" : "not_converged") + "\n";
        report += r.summary ? to_report(*r.summary) : std::string("# no summary: too few draws\n");
        detail::write_text(dir / ("summary_" + name + ".txt"), report);
        std::ostringstream os;
        os << name << ": " << (r.status == RunStatus::stopped ? "stopped" : "budget exhausted") << " after "
           << r.draws.size() << " draws, acceptance " << r.acceptance_rate() << ", " << r.wall_time << " s";
        say(os.str());
        return r;
    };

    if (config.sampler != SamplerChoice::imh) {
        result.rejection = run_one("rejection", config.rejection_budget, [&](const SamplerOptions& o) {
            return rejection_sample(source, *result.bound, rule, derive_seed(seed, rejection_stream), o);
        });
    }
    if (config.sampler != SamplerChoice::rejection) {
        result.imh = run_one("imh", config.imh_budget, [&](const SamplerOptions& o) {
            return independence_mh(source, rule, derive_seed(seed, imh_stream), o);
        });
    }

    result.exit_code = result.converged() ? 0 : 2;
    std::ostringstream md;
    md << detail::artifact_header("run metadata", hash, seed);
    md << std::setprecision(12);
    md << "seed = " << seed << "\nconfig_hash = " << hash << "\nn_regions = " << data.n_regions()
       << "\nsampler = " << to_string(config.sampler) << "\n";
    md << "bound.log_B = " << result.bound->log_B << "\nbound.wall_time_seconds = " << result.bound_wall_time << "\n";
    if (result.rejection)
        md << detail::run_block("rejection", *result.rejection)
           << "rejection.wall_time_seconds = " << result.rejection->wall_time << "\n";
    if (result.imh)
        md << detail::run_block("imh", *result.imh) << "imh.wall_time_seconds = " << result.imh->wall_time << "\n";
    md << "converged = " << (result.converged() ? "true" : "false") << "\nexit_code = " << result.exit_code << "\n";
    detail::write_text(dir / "metadata.txt", md.str());
    return result;
}

/// Reads `key = value` lines of a report, skipping '#' comments.
inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 3));
    }
    return kv;
}

} // namespace bymcmc
