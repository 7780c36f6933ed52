// Calibration smoke test: over 20 simulated lattices the central 95% posterior
// interval of tau_h from the independence chain should contain the simulating
// value in at least 15 cases.

#include "support.hpp"

#include <iostream>

using namespace bymcmc;

int main() {
    constexpr int datasets = 20;
    constexpr int needed = 15;
    constexpr double true_tau_h = 10.0, true_tau_c = 5.0, base_E = 40.0;
    constexpr std::size_t iterations = 50'000;

    int bracketed = 0;
    for (int k = 0; k < datasets; ++k) {
        const auto seed = static_cast<std::uint64_t>(100 + k);
        const auto src = testsupport::lattice_source(2, 5, true_tau_h, true_tau_c, base_E, seed);
        SamplerOptions opt;
        opt.budget = iterations;
        const auto run = independence_mh(src, std::nullopt, derive_seed(seed, imh_stream), opt);
        auto tau = run.draws.column(0);
        std::sort(tau.begin(), tau.end());
        const double lo = tau[static_cast<std::size_t>(0.025 * static_cast<double>(tau.size()))];
        const double hi = tau[static_cast<std::size_t>(0.975 * static_cast<double>(tau.size()))];
        double mean = 0.0;
        for (double v : tau) mean += v / static_cast<double>(tau.size());
        const bool hit = lo <= true_tau_h && true_tau_h <= hi;
        bracketed += hit;
        std::cout << "dataset " << k + 1 << ": posterior mean " << mean << ", 95% interval [" << lo << ", " << hi
                  << "], acceptance " << run.acceptance_rate() << (hit ? "" : "  (misses)") << "\n";
    }
    std::cout << "tau_h = " << true_tau_h << " inside the interval for " << bracketed << "/" << datasets
              << " datasets (need " << needed << ")\n";
    return bracketed >= needed ? 0 : 1;
}
