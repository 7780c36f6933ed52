#include <CLI11.hpp>

#include "bymcmc.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Posterior sampling for BYM Poisson spatial count models"};
    std::string counts, adjacency, config_path, sampler, out, lattice;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 0;
    bool data_only = false, quiet = false;
    app.add_option("--counts", counts, "CSV with header and rows region_id,Y,E");
    app.add_option("--adjacency", adjacency, "CSV rows region_id_a,region_id_b, one edge each");
    app.add_option("--config", config_path, "flat key = value settings file")->check(CLI::ExistingFile);
    app.add_option("--sampler", sampler, "rejection, imh or both")->check(CLI::IsMember({"rejection", "imh", "both"}));
    app.add_option("--seed", seed, "random seed (required here or in the config)");
    app.add_option("--out", out, "output directory");
    app.add_option("--synthesize", lattice, "simulate an RxC lattice dataset instead of reading files");
    app.add_option("--workers", workers, "threads generating proposals (results do not depend on it)");
    app.add_flag("--data-only", data_only, "with --synthesize: write the dataset and truth, then exit");
    app.add_flag("-q,--quiet", quiet, "no progress lines on stderr");
    CLI11_PARSE(app, argc, argv);

    try {
        bymcmc::RunConfig config;
        if (!config_path.empty()) bymcmc::apply_config_file(config, config_path);
        if (!counts.empty()) config.counts_path = counts;
        if (!adjacency.empty()) config.adjacency_path = adjacency;
        if (!sampler.empty()) config.sampler = bymcmc::parse_sampler_choice(sampler);
        if (seed) config.seed = *seed;
        if (!out.empty()) config.out_dir = out;
        if (!lattice.empty()) bymcmc::apply_setting(config, "synthesize", lattice);
        if (workers > 0) config.workers = workers;

        if (data_only) {
            if (!config.synthesize) throw bymcmc::ConfigError("--data-only needs --synthesize");
            if (!config.seed) throw bymcmc::ConfigError("a seed is required");
            std::optional<bymcmc::SyntheticTruth> truth;
            const auto data = bymcmc::load_or_synthesize(config, &truth);
            std::filesystem::create_directories(config.out_dir);
            bymcmc::write_dataset(data, config.out_dir / "counts.csv", config.out_dir / "adjacency.csv");
            std::ofstream(config.out_dir / "truth.txt") << bymcmc::to_text(*truth);
            return 0;
        }

        const auto result = bymcmc::run(config, quiet ? nullptr : &std::cerr);
        if (!quiet && result.exit_code != 0) std::cerr << "not converged: a budget ran out before the stopping rule\n";
        return result.exit_code;
    } catch (const bymcmc::EnvelopeViolationError& e) {
        std::cerr << "envelope violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
