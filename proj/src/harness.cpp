#include "gridtear/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "gridtear/casegen.hpp"

namespace gridtear {

namespace {

using Clock = std::chrono::steady_clock;
using ordered_json = nlohmann::ordered_json;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Shortest round-trip decimal form, deterministic across runs.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

double rmse(const Eigen::VectorXd& x_est, const Eigen::VectorXd& x_true) {
    if (x_est.size() != x_true.size()) {
        throw ValidationError("RMSE: dimension mismatch (" + std::to_string(x_est.size()) +
                              " vs " + std::to_string(x_true.size()) + ")");
    }
    if (x_est.size() == 0) return 0.0;
    return std::sqrt((x_est - x_true).squaredNorm() / static_cast<double>(x_est.size()));
}

Eigen::VectorXd state_vector(const CombinedCase& c, const std::vector<Eigen::VectorXcd>& v) {
    Eigen::VectorXd x(c.state_dim());
    int k = 0;
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        for (int i = 0; i < c.subnetworks[s].dim(); ++i) {
            x[k++] = v[s][i].real();
            x[k++] = v[s][i].imag();
        }
    }
    return x;
}

Eigen::VectorXd state_vector_est(const CombinedCase& c, const std::vector<Estimate>& ests) {
    Eigen::VectorXd x(c.state_dim());
    int k = 0;
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        const auto& vs = ests[s].voltages[0];
        for (int i = 0; i < c.subnetworks[s].dim(); ++i) {
            x[k++] = vs[static_cast<std::size_t>(i)].re;
            x[k++] = vs[static_cast<std::size_t>(i)].im;
        }
    }
    return x;
}

namespace {

ModeScore run_one_mode(const CombinedCase& measured, EstMode mode, const ExperimentConfig& cfg,
                       const Eigen::VectorXd& x_true) {
    ModeScore score;
    score.mode = mode;
    RunConfig rc = cfg.run;
    rc.mode = mode;
    const auto t0 = Clock::now();
    score.run = run_acse(measured, rc);
    score.seconds = seconds_since(t0);
    if (!score.run.converged) {
        throw ConvergenceError(std::string("experiment: ") +
                               (mode == EstMode::Wlav ? "WLAV" : "WLS") +
                               " run did not converge within max epochs");
    }
    score.converged = true;
    score.epochs = score.run.epochs;
    score.objective = score.run.total_objective;
    score.rmse = rmse(state_vector_est(measured, score.run.estimates), x_true);
    return score;
}

ScoreReport run_pipeline(const ExperimentConfig& cfg, bool with_bad_data) {
    CombinedCase base = parse_case(cfg.case_path);
    const PowerFlowResult truth = combined_power_flow(base);

    MeasurementGenOptions gen;
    gen.sigma = cfg.sigma;
    gen.seed = cfg.seed;
    gen.flow_fraction = cfg.flow_fraction;
    gen.t_injections = cfg.t_injections;
    CombinedCase measured = generate_measurements(base, truth, gen);

    ScoreReport report;
    report.truth = truth;
    report.x_true = state_vector(base, truth.voltages);

    if (with_bad_data) {
        auto [corrupted, records] =
            inject_bad_data(measured, cfg.bad_count, cfg.bad_magnitude, cfg.seed ^ 0xbadda7aULL);
        measured = std::move(corrupted);
        report.corrupted = std::move(records);
    }
    report.measured_case = measured;

    if (cfg.mode != RunMode::Wls) {
        report.wlav = run_one_mode(measured, EstMode::Wlav, cfg, report.x_true);
    }
    if (cfg.mode != RunMode::Wlav) {
        report.wls = run_one_mode(measured, EstMode::Wls, cfg, report.x_true);
    }

    // Localization: the k largest WLAV residual rows, mapped to device-phases.
    // Residual entries carry view-local net indices, so tag them with the
    // estimate's position in the case instead.
    if (with_bad_data && report.wlav.has_value()) {
        std::vector<std::pair<int, const ResidualEntry*>> entries;
        const auto& ests = report.wlav->run.estimates;
        for (std::size_t s = 0; s < ests.size(); ++s) {
            for (const auto& r : ests[s].residuals) entries.emplace_back(static_cast<int>(s), &r);
        }
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::abs(a.second->eta) > std::abs(b.second->eta);
        });
        const std::size_t k = std::min(entries.size(), report.corrupted.size());
        std::set<std::tuple<int, int, int>> flagged;
        for (std::size_t i = 0; i < k; ++i) {
            flagged.insert({entries[i].first, entries[i].second->device, entries[i].second->phase});
            report.localization.top_labels.push_back(
                entries[i].second->label + " phase " + std::to_string(entries[i].second->phase));
        }
        report.localization.injected = static_cast<int>(report.corrupted.size());
        for (const auto& rec : report.corrupted) {
            if (flagged.count({rec.net, rec.device, rec.phase}) != 0u) {
                ++report.localization.hits;
            }
        }
        report.localization.hit_rate =
            report.localization.injected == 0
                ? 1.0
                : static_cast<double>(report.localization.hits) / report.localization.injected;
    }

    if (!cfg.out_dir.empty()) emit_report(report, cfg.out_dir);
    return report;
}

}  // namespace

ScoreReport run_experiment1(const ExperimentConfig& cfg) {
    if (cfg.bad_count != 0) throw ValidationError("experiment 1 requires bad_count == 0");
    return run_pipeline(cfg, false);
}

ScoreReport run_experiment2(const ExperimentConfig& cfg) {
    if (cfg.bad_count <= 0) throw ValidationError("experiment 2 requires bad_count > 0");
    return run_pipeline(cfg, true);
}

std::vector<TimingRow> run_experiment3(const ExperimentConfig& cfg,
                                       const std::vector<LadderRung>& ladder) {
    std::vector<TimingRow> rows;
    for (const auto& rung : ladder) {
        CombinedCase c = make_ladder(rung.t_nodes, rung.feeders, rung.feeder_buses);
        const PowerFlowResult truth = combined_power_flow(c);
        MeasurementGenOptions gen;
        gen.sigma = cfg.sigma;
        gen.seed = cfg.seed;
        gen.flow_fraction = cfg.flow_fraction;
        CombinedCase measured = generate_measurements(c, truth, gen);

        RunConfig rc = cfg.run;
        rc.mode = EstMode::Wlav;
        const auto t0 = Clock::now();
        RunResult run = run_acse(measured, rc);
        TimingRow row;
        row.seconds = seconds_since(t0);
        row.states = c.state_dim();
        row.epochs = run.epochs;
        if (!run.converged) throw ConvergenceError("scalability rung did not converge");

        // Cumulative per-worker solve time across epochs.
        std::vector<double> worker_total(c.subnetworks.size(), 0.0);
        double all_workers = 0.0;
        for (const auto& rep : run.reports) {
            for (std::size_t wi = 0; wi < rep.workers.size(); ++wi) {
                worker_total[wi] += rep.workers[wi].seconds;
                all_workers += rep.workers[wi].seconds;
            }
        }
        const auto it = std::max_element(worker_total.begin(), worker_total.end());
        row.largest_worker_seconds = *it;
        row.largest_net =
            c.subnetworks[static_cast<std::size_t>(it - worker_total.begin())].id;
        row.worker_fraction = all_workers > 0.0 ? *it / all_workers : 1.0;
        rows.push_back(std::move(row));
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream csv(cfg.out_dir + "/exp3.csv");
        csv << "states,epochs,seconds\n";
        for (const auto& r : rows) {
            csv << r.states << ',' << r.epochs << ',' << fmt(r.seconds) << '\n';
        }
        std::ofstream wcsv(cfg.out_dir + "/exp3_workers.csv");
        wcsv << "states,largest_net,largest_worker_seconds,worker_fraction\n";
        for (const auto& r : rows) {
            wcsv << r.states << ',' << r.largest_net << ',' << fmt(r.largest_worker_seconds)
                 << ',' << fmt(r.worker_fraction) << '\n';
        }
    }
    return rows;
}

void emit_report(const ScoreReport& report, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());

    const auto& c = report.measured_case;

    // score.json: everything deterministic under a fixed seed.
    ordered_json score;
    auto mode_json = [&](const ModeScore& m) {
        ordered_json j;
        j["mode"] = m.mode == EstMode::Wlav ? "wlav" : "wls";
        j["rmse"] = m.rmse;
        j["objective"] = m.objective;
        j["epochs"] = m.epochs;
        j["converged"] = m.converged;
        double max_cc = 0.0;
        for (const auto& e : m.run.estimates) max_cc = std::max(max_cc, e.max_eta_product);
        j["max_eta_product"] = max_cc;
        return j;
    };
    if (report.wlav.has_value()) score["wlav"] = mode_json(*report.wlav);
    if (report.wls.has_value()) score["wls"] = mode_json(*report.wls);
    {
        ordered_json loc;
        loc["injected"] = report.localization.injected;
        loc["hits"] = report.localization.hits;
        loc["hit_rate"] = report.localization.hit_rate;
        loc["top"] = report.localization.top_labels;
        score["localization"] = std::move(loc);
        ordered_json bad = ordered_json::array();
        for (const auto& rec : report.corrupted) {
            const auto& dev =
                c.subnetworks[static_cast<std::size_t>(rec.net)].devices[static_cast<std::size_t>(rec.device)];
            bad.push_back(ordered_json{{"net", c.subnetworks[static_cast<std::size_t>(rec.net)].id},
                                       {"device", rec.device},
                                       {"type", device_type_name(dev)},
                                       {"scalar", device_scalar_label(dev, rec.scalar)},
                                       {"applied", rec.applied}});
        }
        score["bad_data"] = std::move(bad);
    }
    {
        std::ofstream out(dir + "/score.json");
        out << score.dump(2) << '\n';
    }
    {
        ordered_json timing;
        if (report.wlav.has_value()) timing["wlav_seconds"] = report.wlav->seconds;
        if (report.wls.has_value()) timing["wls_seconds"] = report.wls->seconds;
        std::ofstream out(dir + "/timing.json");
        out << timing.dump(2) << '\n';
    }

    // residuals.csv over the WLAV run when present, else WLS.
    const ModeScore* prim =
        report.wlav.has_value() ? &*report.wlav : (report.wls.has_value() ? &*report.wls : nullptr);
    if (prim != nullptr) {
        std::set<std::tuple<int, int, int>> corrupted;
        for (const auto& rec : report.corrupted) {
            corrupted.insert({rec.net, rec.device, rec.phase});
        }
        std::ofstream csv(dir + "/residuals.csv");
        csv << "index,device,phase,eta,abs_eta,corrupted\n";
        int index = 0;
        for (std::size_t s = 0; s < prim->run.estimates.size(); ++s) {
            for (const auto& r : prim->run.estimates[s].residuals) {
                const bool hit = corrupted.count({static_cast<int>(s), r.device, r.phase}) != 0u;
                csv << index++ << ',' << c.subnetworks[s].id << '/' << r.label << (r.imag ? "~im" : "~re")
                    << ',' << r.phase << ',' << fmt(r.eta) << ',' << fmt(r.eta_abs) << ','
                    << (hit ? 1 : 0) << '\n';
            }
        }
    }

    // voltages.csv: truth and per-mode estimates, every node and phase.
    {
        std::ofstream csv(dir + "/voltages.csv");
        csv << "node,phase,true_re,true_im,wlav_re,wlav_im,wls_re,wls_im\n";
        for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
            const auto& sub = c.subnetworks[s];
            for (int node = 0; node < sub.node_count(); ++node) {
                for (int ph = 0; ph < sub.phases(); ++ph) {
                    const int k = sub.yidx(node, ph);
                    csv << sub.id << '/' << sub.nodes[static_cast<std::size_t>(node)].id << ','
                        << phase_name(sub.domain, ph) << ','
                        << fmt(report.truth.voltages[s][k].real()) << ','
                        << fmt(report.truth.voltages[s][k].imag());
                    for (const auto* m : {report.wlav.has_value() ? &*report.wlav : nullptr,
                                          report.wls.has_value() ? &*report.wls : nullptr}) {
                        if (m == nullptr) {
                            csv << ",,";
                        } else {
                            const auto& v = m->run.estimates[s].voltages[0][static_cast<std::size_t>(k)];
                            csv << ',' << fmt(v.re) << ',' << fmt(v.im);
                        }
                    }
                    csv << '\n';
                }
            }
        }
    }
}

}  // namespace gridtear
