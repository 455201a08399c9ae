#pragma once

#include <string>
#include <vector>

#include "gridtear/estcore.hpp"
#include "gridtear/transport.hpp"

namespace gridtear {

struct RunConfig {
    EstMode mode = EstMode::Wlav;
    SolverConfig solver;
    int max_epochs = 100;
    double eps_epoch = 1e-6;  ///< infinity-norm on external-variable change
    double dual_relax = 0.5;  ///< under-relaxation of the dual exchange
    bool parallel = true;     ///< OpenMP over workers within an epoch
    bool warm_start = true;   ///< reuse each worker's previous X across epochs
    double warm_eps0 = 1e-3;  ///< barrier restart for warm-started epochs
    TransportMode transport = TransportMode::InProcess;
    std::string socket_address = "127.0.0.1:0";
    int monolithic_cap = 5000;  ///< state-dimension limit for solve_monolithic
    bool log_transcript = false;  ///< capture every transported line
};

struct WorkerReport {
    std::string net;
    int iterations = 0;
    double kkt = 0.0;
    double seconds = 0.0;
};

struct EpochReport {
    int epoch = 0;
    std::vector<WorkerReport> workers;
    double port_delta = 0.0;  ///< inf-norm change of external variables
    double seconds = 0.0;
};

struct RunResult {
    std::vector<Estimate> estimates;  ///< one per sub-network, case order
    std::vector<EpochReport> reports;
    std::vector<CouplingPort> ports;
    std::vector<DecompositionRatio> ratios;
    std::vector<std::string> warnings;
    bool converged = false;
    int epochs = 0;
    double total_objective = 0.0;
    std::vector<std::string> transcript;  ///< transported lines (log_transcript)
};

/// End-to-end distributed solve: one worker per sub-network, concurrent
/// sub-problem solves per epoch, boundary exchange through the supervisory
/// barrier, termination on external-variable convergence. Throws
/// ConvergenceError naming the offending sub-network when a sub-problem
/// fails, and returns converged=false with full reports when max_epochs runs
/// out.
RunResult run_acse(const CombinedCase& c, const RunConfig& cfg);

/// Undecomposed oracle: all sub-networks plus exact coupling equations in one
/// problem, solved centrally. Per-net estimates are split out of the single
/// solve. Throws ValidationError above the dimension cap.
RunResult solve_monolithic(const CombinedCase& c, const RunConfig& cfg);

/// Flat ports for epoch 1, one per coupling.
std::vector<CouplingPort> init_ports(const CombinedCase& c);

}  // namespace gridtear
