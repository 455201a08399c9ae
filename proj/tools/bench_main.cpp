// Benchmark: OpenMP-parallel epoch solves against the serial reference on a
// generated ladder case, with a bitwise equality check between the two.

#include <CLI11.hpp>
#include <chrono>
#include <cstring>
#include <iostream>

#include "gridtear/casegen.hpp"
#include "gridtear/harness.hpp"

using namespace gridtear;

namespace {

double now_seconds() {
    using Clock = std::chrono::steady_clock;
    static const auto t0 = Clock::now();
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool same_bits(const std::vector<Estimate>& a, const std::vector<Estimate>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t s = 0; s < a.size(); ++s) {
        const auto& va = a[s].voltages[0];
        const auto& vb = b[s].voltages[0];
        if (va.size() != vb.size()) return false;
        if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(ComplexPair)) != 0) return false;
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial-vs-OpenMP epoch benchmark"};
    int t_nodes = 400;
    int feeders = 8;
    int feeder_buses = 30;
    double sigma = 0.01;
    std::uint64_t seed = 7;
    int repeats = 1;
    app.add_option("--t-nodes", t_nodes, "transmission chain length");
    app.add_option("--feeders", feeders, "number of feeders");
    app.add_option("--feeder-buses", feeder_buses, "buses per feeder");
    app.add_option("--sigma", sigma, "measurement noise");
    app.add_option("--seed", seed, "PRNG seed");
    app.add_option("--repeats", repeats, "timing repetitions");
    CLI11_PARSE(app, argc, argv);

    try {
        const CombinedCase c = make_ladder(t_nodes, feeders, feeder_buses);
        std::cout << "ladder: " << c.subnetworks.size() << " sub-networks, " << c.state_dim()
                  << " voltage states\n";
        const auto pf = combined_power_flow(c);
        MeasurementGenOptions gen;
        gen.sigma = sigma;
        gen.seed = seed;
        const CombinedCase measured = generate_measurements(c, pf, gen);

        RunConfig serial_cfg;
        serial_cfg.parallel = false;
        RunConfig parallel_cfg;
        parallel_cfg.parallel = true;

        RunResult serial_run, parallel_run;
        double t_serial = 0.0, t_parallel = 0.0;
        for (int r = 0; r < repeats; ++r) {
            double t0 = now_seconds();
            serial_run = run_acse(measured, serial_cfg);
            t_serial += now_seconds() - t0;
            t0 = now_seconds();
            parallel_run = run_acse(measured, parallel_cfg);
            t_parallel += now_seconds() - t0;
        }
        t_serial /= repeats;
        t_parallel /= repeats;

        std::cout << "serial reference: " << t_serial << " s (" << serial_run.epochs
                  << " epochs)\n";
        std::cout << "openmp parallel:  " << t_parallel << " s (" << parallel_run.epochs
                  << " epochs)\n";
        std::cout << "speedup: " << (t_parallel > 0 ? t_serial / t_parallel : 0.0) << "x\n";
        const bool identical = same_bits(serial_run.estimates, parallel_run.estimates);
        std::cout << "results bitwise identical: " << (identical ? "yes" : "NO") << "\n";
        return identical ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
