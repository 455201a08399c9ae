#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridtear/measmodel.hpp"
#include "gridtear/runtime.hpp"

namespace gridtear {

enum class RunMode { Wlav, Wls, Both };

struct ExperimentConfig {
    std::string case_path;  ///< ground-truth circuit with loads
    RunMode mode = RunMode::Both;
    double sigma = 0.01;         ///< per-unit measurement noise std
    int bad_count = 0;           ///< corrupted scalars across the whole case
    double bad_magnitude = 0.5;  ///< per-unit deviation added to each
    std::uint64_t seed = 1;
    double flow_fraction = 0.25;
    TInjectionDevices t_injections = TInjectionDevices::Both;
    RunConfig run;
    std::string out_dir;  ///< empty: no report files
};

struct ModeScore {
    EstMode mode = EstMode::Wlav;
    double rmse = 0.0;
    double objective = 0.0;
    int epochs = 0;
    bool converged = false;
    double seconds = 0.0;
    RunResult run;
};

struct LocalizationScore {
    int injected = 0;
    int hits = 0;         ///< corrupted device-phases found in the top-k residuals
    double hit_rate = 0.0;
    std::vector<std::string> top_labels;
};

struct ScoreReport {
    std::optional<ModeScore> wlav;
    std::optional<ModeScore> wls;
    std::vector<BadDataRecord> corrupted;
    LocalizationScore localization;
    Eigen::VectorXd x_true;
    CombinedCase measured_case;
    PowerFlowResult truth;
};

/// RMSE = sqrt(||x_est - x_true||_2^2 / dim(x)); dimensions must agree.
double rmse(const Eigen::VectorXd& x_est, const Eigen::VectorXd& x_true);

/// Fixed state ordering over the voltage states of all sub-networks: nets in
/// case order, nodes in declaration order, phases in order, re before im.
Eigen::VectorXd state_vector(const CombinedCase& c, const std::vector<Eigen::VectorXcd>& v);
Eigen::VectorXd state_vector_est(const CombinedCase& c, const std::vector<Estimate>& ests);

/// Gaussian-noise pipeline: power flow, synthetic measurements, both
/// estimators, RMSE per mode. Requires bad_count == 0.
ScoreReport run_experiment1(const ExperimentConfig& cfg);

/// Bad-data pipeline: experiment 1 plus gross-error injection, WLAV/WLS RMSE
/// ordering and top-k residual localization. Requires bad_count > 0.
ScoreReport run_experiment2(const ExperimentConfig& cfg);

struct LadderRung {
    int t_nodes = 50;
    int feeders = 2;
    int feeder_buses = 12;
};

struct TimingRow {
    int states = 0;
    int epochs = 0;
    double seconds = 0.0;
    double largest_worker_seconds = 0.0;  ///< cumulative solve time, slowest worker
    std::string largest_net;
    double worker_fraction = 0.0;  ///< largest worker share of summed epoch time
};

/// Scalability ladder: generated chains of sub-networks of growing size,
/// WLAV runs timed per rung; writes exp3.csv (states,epochs,seconds) and
/// exp3_workers.csv when out_dir is set.
std::vector<TimingRow> run_experiment3(const ExperimentConfig& cfg,
                                       const std::vector<LadderRung>& ladder);

/// score.json + residuals.csv + voltages.csv (+ timing.json; wall times kept
/// out of score.json so reports stay byte-deterministic under fixed seeds).
void emit_report(const ScoreReport& report, const std::string& dir);

}  // namespace gridtear
