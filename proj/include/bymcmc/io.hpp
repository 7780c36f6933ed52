#pragma once

#include "band_linalg.hpp"
#include "error.hpp"
#include "model.hpp"
#include "random.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace bymcmc {

namespace detail {

inline std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(a, b - a + 1));
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Non-empty, non-comment lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> data_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError(DatasetError::Kind::io, path.string(), "cannot open " + path.string());
    std::vector<std::pair<std::size_t, std::string>> out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        out.emplace_back(no, std::move(t));
    }
    return out;
}

inline bool parse_double(const std::string& s, double& v) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    return ec == std::errc{} && p == end;
}

} // namespace detail

/// Reads a counts file (header line, then `region_id,Y,E` rows) and an adjacency
/// file (`region_id_a,region_id_b` rows, one undirected edge each). Lines starting
/// with '#' are ignored. Regions get contiguous indices in counts-file order.
inline SpatialDataset load_dataset(const std::filesystem::path& counts_path,
                                   const std::filesystem::path& adjacency_path) {
    using Kind = DatasetError::Kind;
    SpatialDataset data;
    std::unordered_map<std::string, std::size_t> index;

    const auto rows = detail::data_lines(counts_path);
    if (rows.empty()) throw DatasetError(Kind::malformed_row, counts_path.string(), "counts file has no header");
    auto where = [](const std::filesystem::path& p, std::size_t no) { return p.string() + ":" + std::to_string(no); };
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [no, line] = rows[r];
        const auto f = detail::split_csv(line);
        if (f.size() != 3 || f[0].empty())
            throw DatasetError(Kind::malformed_row, where(counts_path, no), "expected region_id,Y,E at " + where(counts_path, no));
        const std::string& id = f[0];
        if (index.count(id)) throw DatasetError(Kind::duplicate_region, id, "region '" + id + "' appears twice");
        double y = 0.0, e = 0.0;
        if (!detail::parse_double(f[1], y) || !std::isfinite(y))
            throw DatasetError(Kind::noninteger_count, id, "count of region '" + id + "' is not an integer: " + f[1]);
        if (y < 0.0) throw DatasetError(Kind::negative_count, id, "count of region '" + id + "' is negative");
        if (y != std::floor(y) || y > 9.0e15)
            throw DatasetError(Kind::noninteger_count, id, "count of region '" + id + "' is not an integer: " + f[1]);
        if (!detail::parse_double(f[2], e) || !std::isfinite(e))
            throw DatasetError(Kind::malformed_row, where(counts_path, no), "expected count of region '" + id + "' is not a number");
        if (!(e > 0.0))
            throw DatasetError(Kind::nonpositive_expected, id, "expected count of region '" + id + "' must be positive");
        index.emplace(id, data.region_ids.size());
        data.region_ids.push_back(id);
        data.counts.push_back(static_cast<std::int64_t>(y));
        data.expected.push_back(e);
    }
    if (data.counts.empty()) throw DatasetError(Kind::malformed_row, counts_path.string(), "counts file has no regions");

    data.adjacency = Graph(data.counts.size());
    for (const auto& [no, line] : detail::data_lines(adjacency_path)) {
        const auto f = detail::split_csv(line);
        if (f.size() != 2)
            throw DatasetError(Kind::malformed_row, where(adjacency_path, no), "expected region_id_a,region_id_b at " + where(adjacency_path, no));
        std::size_t ends[2];
        for (int k = 0; k < 2; ++k) {
            auto it = index.find(f[k]);
            if (it == index.end())
                throw DatasetError(Kind::unknown_region, f[k], "adjacency refers to unknown region '" + f[k] + "'");
            ends[k] = it->second;
        }
        const std::string edge = f[0] + "," + f[1];
        if (ends[0] == ends[1]) throw DatasetError(Kind::self_loop, edge, "region '" + f[0] + "' is listed as its own neighbour");
        if (!data.adjacency.add_edge(ends[0], ends[1]))
            throw DatasetError(Kind::duplicate_edge, edge, "edge " + edge + " is listed more than once");
    }
    validate(data);
    return data;
}

/// Writes the two files read by load_dataset; numbers use 17 significant digits.
inline void write_dataset(const SpatialDataset& data, const std::filesystem::path& counts_path,
                          const std::filesystem::path& adjacency_path) {
    auto id = [&](std::size_t i) { return data.region_ids.empty() ? std::to_string(i + 1) : data.region_ids[i]; };
    std::ofstream c(counts_path);
    if (!c) throw DatasetError(DatasetError::Kind::io, counts_path.string(), "cannot write " + counts_path.string());
    c << "region_id,Y,E\n" << std::setprecision(17);
    for (std::size_t i = 0; i < data.n_regions(); ++i) c << id(i) << ',' << data.counts[i] << ',' << data.expected[i] << '\n';
    std::ofstream a(adjacency_path);
    if (!a) throw DatasetError(DatasetError::Kind::io, adjacency_path.string(), "cannot write " + adjacency_path.string());
    a << "# region_id_a,region_id_b\n";
    for (auto [i, j] : data.adjacency.edges()) a << id(i) << ',' << id(j) << '\n';
}

/// Parameter values used to simulate a dataset.
struct SyntheticTruth {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double tau_h = 0.0;
    double tau_c = 0.0;
    double base_E = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> theta;
    std::vector<double> phi;
};

struct SyntheticDataset {
    SpatialDataset data;
    SyntheticTruth truth;
};

/// Simulates a BYM dataset on a rows x cols rook lattice.
///
/// phi is drawn from N(0, (tau_c Q~)^-1) with Q~ = Q + delta I and then centred to
/// sum to zero; theta_i ~ N(0, 1/tau_h); E_i = base_E * U(0.5, 1.5);
/// Y_i ~ Poisson(E_i exp(theta_i + phi_i)).
inline SyntheticDataset synthesize_dataset(std::size_t rows, std::size_t cols, double true_tau_h, double true_tau_c,
                                           double base_E, std::uint64_t seed) {
    if (rows < 2 || cols < 2) throw DomainError("lattice dimensions must be at least 2");
    if (!(true_tau_h > 0.0) || !(true_tau_c > 0.0) || !(base_E > 0.0))
        throw DomainError("precisions and base_E must be positive");
    const std::size_t n = rows * cols;
    SyntheticDataset out;
    auto& d = out.data;
    d.adjacency = Graph::lattice(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) d.region_ids.push_back("r" + std::to_string(r + 1) + "c" + std::to_string(c + 1));

    const auto q = build_precision_matrix(d.adjacency);
    const double delta = 1e-4 * q.mean_degree();
    const auto perm = rcm_ordering(d.adjacency);
    BandMatrix a(n, bandwidth(d.adjacency, perm));
    for (std::size_t i = 0; i < n; ++i) a.add(perm.position(i), perm.position(i), true_tau_c * (q.diagonal(i) + delta));
    for (auto [i, j] : q.edges()) a.add(perm.position(i), perm.position(j), -true_tau_c);
    Engine phi_rng = make_engine(seed, 1);
    const auto z = sample_gaussian(band_cholesky(std::move(a)), phi_rng);
    std::vector<double> phi(n);
    perm.unapply(z, phi);
    double mean = 0.0;
    for (double v : phi) mean += v / static_cast<double>(n);
    for (double& v : phi) v -= mean;

    Engine rng = make_engine(seed, 2);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(true_tau_h));
    std::uniform_real_distribution<double> unif(0.5, 1.5);
    std::vector<double> theta(n);
    for (std::size_t i = 0; i < n; ++i) {
        theta[i] = normal(rng);
        d.expected.push_back(base_E * unif(rng));
        std::poisson_distribution<std::int64_t> pois(d.expected[i] * std::exp(theta[i] + phi[i]));
        d.counts.push_back(pois(rng));
    }
    validate(d);
    out.truth = {rows, cols, true_tau_h, true_tau_c, base_E, seed, std::move(theta), std::move(phi)};
    return out;
}

inline std::string to_text(const SyntheticTruth& t) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "rows = " << t.rows << "\ncols = " << t.cols << "\ntau_h = " << t.tau_h << "\ntau_c = " << t.tau_c
       << "\nbase_E = " << t.base_E << "\nseed = " << t.seed << "\n";
    for (std::size_t i = 0; i < t.theta.size(); ++i) os << "theta[" << i + 1 << "] = " << t.theta[i] << "\n";
    for (std::size_t i = 0; i < t.phi.size(); ++i) os << "phi[" << i + 1 << "] = " << t.phi[i] << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Samples file: text header terminated by an `end_header` line, then one record
// per draw of 2N + 2 little-endian 64-bit floats (tau_h, tau_c, theta, phi).

struct SamplesHeader {
    std::string sampler;
    std::size_t n_regions = 0;
    std::uint64_t seed = 0;
    std::string config_hash;

    std::size_t record_size() const noexcept { return 2 * n_regions + 2; }
};

class SamplesWriter {
public:
    SamplesWriter(const std::filesystem::path& path, const SamplesHeader& header)
        : out_(path, std::ios::binary | std::ios::trunc), dim_(header.record_size()) {
        if (!out_) throw Error("cannot write samples file " + path.string());
        out_ << "bymcmc samples v1\n"
             << "sampler = " << header.sampler << "\n"
             << "n_regions = " << header.n_regions << "\n"
             << "record_size = " << dim_ << "\n"
             << "seed = " << header.seed << "\n"
             << "config_hash = " << header.config_hash << "\n"
             << "columns = tau_h tau_c theta[1.." << header.n_regions << "] phi[1.." << header.n_regions << "]\n"
             << "encoding = float64 little-endian\n"
             << "end_header\n";
        buffer_.reserve(8 * dim_ * 1024);
    }

    SamplesWriter(const SamplesWriter&) = delete;
    SamplesWriter& operator=(const SamplesWriter&) = delete;
    ~SamplesWriter() {
        try {
            flush();
        } catch (...) {
        }
    }

    void write(std::span<const double> x) {
        if (x.size() != dim_) throw DomainError("samples record has the wrong length");
        for (double v : x) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) buffer_.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
        ++records_;
        if (buffer_.size() >= 8 * dim_ * 1024) flush();
    }

    void flush() {
        out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        buffer_.clear();
        out_.flush();
        if (!out_) throw Error("failed writing samples file");
    }

    std::size_t records() const noexcept { return records_; }

private:
    std::ofstream out_;
    std::size_t dim_;
    std::vector<char> buffer_;
    std::size_t records_ = 0;
};

struct SamplesFile {
    SamplesHeader header;
    std::vector<double> values;  // row-major, header.record_size() per record

    std::size_t records() const noexcept {
        return header.record_size() ? values.size() / header.record_size() : 0;
    }
    std::span<const double> record(std::size_t k) const {
        return std::span<const double>(values).subspan(k * header.record_size(), header.record_size());
    }
};

inline SamplesFile read_samples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open samples file " + path.string());
    SamplesFile f;
    std::string line;
    std::map<std::string, std::string> kv;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end_header") {
            ended = true;
            break;
        }
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    if (!ended) throw Error("samples file " + path.string() + " has no end_header line");
    try {
        f.header.sampler = kv.at("sampler");
        f.header.n_regions = std::stoull(kv.at("n_regions"));
        f.header.seed = std::stoull(kv.at("seed"));
        f.header.config_hash = kv.at("config_hash");
    } catch (const std::exception&) {
        throw Error("samples file " + path.string() + " has an incomplete header");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t rec = 8 * f.header.record_size();
    if (bytes.size() % rec != 0) throw Error("samples file " + path.string() + " ends with a partial record");
    f.values.resize(bytes.size() / 8);
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * k + b])) << (8 * b);
        f.values[k] = std::bit_cast<double>(bits);
    }
    return f;
}

} // namespace bymcmc
