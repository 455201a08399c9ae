// gridtear: distributed WLAV/WLS state estimation for combined
// transmission-and-distribution cases.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "gridtear/harness.hpp"

namespace {

using namespace gridtear;
using ordered_json = nlohmann::ordered_json;

ordered_json cpx(const ComplexPair& c) { return ordered_json{{"re", c.re}, {"im", c.im}}; }

ordered_json estimate_json(const CombinedCase& c, const RunResult& run) {
    ordered_json root;
    root["converged"] = run.converged;
    root["epochs"] = run.epochs;
    root["objective"] = run.total_objective;
    auto nets = ordered_json::array();
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        const auto& sub = c.subnetworks[s];
        const auto& est = run.estimates[s];
        ordered_json jn;
        jn["net"] = sub.id;
        jn["objective"] = est.objective;
        jn["iterations"] = est.iterations;
        jn["converged"] = est.converged;
        auto volts = ordered_json::array();
        for (int node = 0; node < sub.node_count(); ++node) {
            ordered_json jv;
            jv["node"] = sub.nodes[static_cast<std::size_t>(node)].id;
            auto per_phase = ordered_json::array();
            for (int ph = 0; ph < sub.phases(); ++ph) {
                per_phase.push_back(cpx(est.voltages[0][static_cast<std::size_t>(sub.yidx(node, ph))]));
            }
            jv["V"] = std::move(per_phase);
            volts.push_back(std::move(jv));
        }
        jn["voltages"] = std::move(volts);
        auto resid = ordered_json::array();
        for (const auto& r : est.residuals) {
            resid.push_back(ordered_json{{"label", r.label},
                                         {"phase", r.phase},
                                         {"component", r.imag ? "im" : "re"},
                                         {"eta", r.eta},
                                         {"abs", r.eta_abs}});
        }
        jn["residuals"] = std::move(resid);
        nets.push_back(std::move(jn));
    }
    root["subnetworks"] = std::move(nets);
    return root;
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir + "/" + name);
    if (!out) throw std::runtime_error("cannot write " + dir + "/" + name);
    out << text;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConvergenceError& e) {
        std::cerr << "non-convergence: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed combined T&D WLAV/WLS state estimation"};
    app.require_subcommand(1);

    std::string case_path;
    std::string mode = "both";
    double sigma = 0.01;
    int bad_count = 0;
    double bad_mag = 0.5;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string transport_name = "in_process";
    std::string address = "127.0.0.1:0";
    double flow_fraction = 0.25;
    std::string t_devices = "both";
    bool monolithic = false;
    bool serial = false;
    std::string ladder_spec = "40:2:10,80:4:12,160:8:12";

    auto add_common = [&](CLI::App* cmd, bool needs_case) {
        if (needs_case) cmd->add_option("--case", case_path, "JSON case file")->required();
        cmd->add_option("--seed", seed, "PRNG seed");
        cmd->add_option("--out", out_dir, "output directory");
    };
    auto add_est_flags = [&](CLI::App* cmd) {
        cmd->add_option("--mode", mode, "wlav | wls | both");
        cmd->add_option("--transport", transport_name, "in_process | socket");
        cmd->add_option("--address", address, "socket listen address (host:port)");
        cmd->add_flag("--monolithic", monolithic, "solve centrally instead of distributed");
        cmd->add_flag("--serial", serial, "run workers on a single thread");
    };
    auto add_measure_flags = [&](CLI::App* cmd) {
        cmd->add_option("--sigma", sigma, "measurement noise std, per-unit");
        cmd->add_option("--flow-fraction", flow_fraction, "fraction of T branches with flow meters");
        cmd->add_option("--t-devices", t_devices, "rms | phasor | both at T injection nodes");
    };

    auto* validate = app.add_subcommand("validate", "parse and validate a case");
    add_common(validate, true);

    auto* powerflow = app.add_subcommand("powerflow", "combined T&D power flow");
    add_common(powerflow, true);

    auto* measure = app.add_subcommand("measure", "emit synthetic measurements for a case");
    add_common(measure, true);
    add_measure_flags(measure);
    measure->add_option("--bad-count", bad_count, "gross errors to inject");
    measure->add_option("--bad-mag", bad_mag, "gross error magnitude, per-unit");

    auto* estimate = app.add_subcommand("estimate", "estimate states from a measured case");
    add_common(estimate, true);
    add_est_flags(estimate);

    auto* exp1 = app.add_subcommand("exp1", "Gaussian-noise experiment (WLAV vs WLS)");
    add_common(exp1, true);
    add_measure_flags(exp1);
    add_est_flags(exp1);

    auto* exp2 = app.add_subcommand("exp2", "bad-data experiment (WLAV vs WLS)");
    add_common(exp2, true);
    add_measure_flags(exp2);
    add_est_flags(exp2);
    exp2->add_option("--bad-count", bad_count, "gross errors to inject")->default_val(3);
    exp2->add_option("--bad-mag", bad_mag, "gross error magnitude, per-unit");

    auto* exp3 = app.add_subcommand("exp3", "scalability ladder timing");
    add_common(exp3, false);
    add_measure_flags(exp3);
    exp3->add_option("--ladder", ladder_spec, "comma list of t_nodes:feeders:feeder_buses");

    CLI11_PARSE(app, argc, argv);

    auto make_expcfg = [&]() {
        ExperimentConfig cfg;
        cfg.case_path = case_path;
        cfg.mode = mode == "wlav" ? RunMode::Wlav : mode == "wls" ? RunMode::Wls : RunMode::Both;
        cfg.sigma = sigma;
        cfg.bad_count = bad_count;
        cfg.bad_magnitude = bad_mag;
        cfg.seed = seed;
        cfg.flow_fraction = flow_fraction;
        cfg.t_injections = t_devices == "rms"      ? TInjectionDevices::Rms
                           : t_devices == "phasor" ? TInjectionDevices::Phasor
                                                   : TInjectionDevices::Both;
        cfg.out_dir = out_dir;
        cfg.run.parallel = !serial;
        cfg.run.transport =
            transport_name == "socket" ? TransportMode::Socket : TransportMode::InProcess;
        cfg.run.socket_address = address;
        return cfg;
    };

    if (validate->parsed()) {
        return guarded([&] {
            const CombinedCase c = parse_case(case_path);
            std::cout << "case ok: " << c.subnetworks.size() << " sub-network(s), "
                      << c.couplings.size() << " coupling(s)\n";
            for (const auto& r : decomposition_ratio(c)) {
                std::cout << "  " << r.net << ": internal states " << r.internal_states
                          << ", external " << r.external_states;
                if (r.ratio.has_value()) {
                    std::cout << ", ratio " << *r.ratio << (*r.ratio < 10.0 ? "  [warn: < 10]" : "");
                }
                std::cout << "\n";
            }
            bool any_devices = false;
            for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
                if (c.subnetworks[s].devices.empty()) continue;
                any_devices = true;
                const auto ports = init_ports(c);
                try {
                    auto p = assemble_subproblem(c, static_cast<int>(s), EstMode::Wlav, ports);
                    std::cout << "  " << c.subnetworks[s].id << ": observable (" << p.n_rows()
                              << " rows, " << p.n_core() << " unknowns)\n";
                } catch (const ValidationError& e) {
                    std::cout << "  " << c.subnetworks[s].id << ": " << e.what() << "\n";
                }
            }
            if (!any_devices) {
                std::cout << "  (no measurement devices; observability not checked)\n";
            }
            return 0;
        });
    }

    if (powerflow->parsed()) {
        return guarded([&] {
            const CombinedCase c = parse_case(case_path);
            const auto pf = combined_power_flow(c);
            std::cout << "power flow converged in " << pf.epochs << " epoch(s), KCL residual "
                      << kcl_residual_inf(c, pf) << "\n";
            ordered_json root;
            auto nets = ordered_json::array();
            for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
                const auto& sub = c.subnetworks[s];
                ordered_json jn;
                jn["net"] = sub.id;
                auto volts = ordered_json::array();
                for (int node = 0; node < sub.node_count(); ++node) {
                    ordered_json jv;
                    jv["node"] = sub.nodes[static_cast<std::size_t>(node)].id;
                    auto arr = ordered_json::array();
                    for (int ph = 0; ph < sub.phases(); ++ph) {
                        arr.push_back(cpx(ComplexPair(pf.voltages[s][sub.yidx(node, ph)])));
                    }
                    jv["V"] = std::move(arr);
                    volts.push_back(std::move(jv));
                }
                jn["voltages"] = std::move(volts);
                nets.push_back(std::move(jn));
            }
            root["subnetworks"] = std::move(nets);
            write_file(out_dir, "powerflow.json", root.dump(2) + "\n");
            std::cout << "wrote " << out_dir << "/powerflow.json\n";
            return 0;
        });
    }

    if (measure->parsed()) {
        return guarded([&] {
            const CombinedCase c = parse_case(case_path);
            const auto pf = combined_power_flow(c);
            MeasurementGenOptions gen;
            gen.sigma = sigma;
            gen.seed = seed;
            gen.flow_fraction = flow_fraction;
            gen.t_injections = t_devices == "rms"      ? TInjectionDevices::Rms
                               : t_devices == "phasor" ? TInjectionDevices::Phasor
                                                       : TInjectionDevices::Both;
            CombinedCase measured = generate_measurements(c, pf, gen);
            if (bad_count > 0) {
                auto [corrupted, records] =
                    inject_bad_data(measured, bad_count, bad_mag, seed ^ 0xbadda7aULL);
                measured = std::move(corrupted);
                std::cout << "injected " << records.size() << " gross error(s)\n";
            }
            write_file(out_dir, "measured_case.json", case_to_json(measured));
            std::cout << "wrote " << out_dir << "/measured_case.json\n";
            return 0;
        });
    }

    if (estimate->parsed()) {
        return guarded([&] {
            const CombinedCase c = parse_case(case_path);
            auto cfg = make_expcfg();
            cfg.run.mode = mode == "wls" ? EstMode::Wls : EstMode::Wlav;
            const RunResult run =
                monolithic ? solve_monolithic(c, cfg.run) : run_acse(c, cfg.run);
            for (const auto& w : run.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << (run.converged ? "converged" : "NOT converged") << " in " << run.epochs
                      << " epoch(s), objective " << run.total_objective << "\n";
            write_file(out_dir, "estimate.json", estimate_json(c, run).dump(2) + "\n");
            std::cout << "wrote " << out_dir << "/estimate.json\n";
            return run.converged ? 0 : 2;
        });
    }

    if (exp1->parsed()) {
        return guarded([&] {
            auto cfg = make_expcfg();
            cfg.bad_count = 0;
            const auto report = run_experiment1(cfg);
            if (report.wlav.has_value()) {
                std::cout << "WLAV RMSE " << report.wlav->rmse << " (epochs "
                          << report.wlav->epochs << ")\n";
            }
            if (report.wls.has_value()) {
                std::cout << "WLS  RMSE " << report.wls->rmse << " (epochs " << report.wls->epochs
                          << ")\n";
            }
            std::cout << "reports in " << out_dir << "\n";
            return 0;
        });
    }

    if (exp2->parsed()) {
        return guarded([&] {
            auto cfg = make_expcfg();
            const auto report = run_experiment2(cfg);
            if (report.wlav.has_value()) std::cout << "WLAV RMSE " << report.wlav->rmse << "\n";
            if (report.wls.has_value()) std::cout << "WLS  RMSE " << report.wls->rmse << "\n";
            std::cout << "localization: " << report.localization.hits << "/"
                      << report.localization.injected << " corrupted device-phases in top-k\n";
            std::cout << "reports in " << out_dir << "\n";
            return 0;
        });
    }

    if (exp3->parsed()) {
        return guarded([&] {
            auto cfg = make_expcfg();
            std::vector<LadderRung> ladder;
            std::stringstream ss(ladder_spec);
            std::string item;
            while (std::getline(ss, item, ',')) {
                LadderRung rung;
                if (std::sscanf(item.c_str(), "%d:%d:%d", &rung.t_nodes, &rung.feeders,
                                &rung.feeder_buses) != 3) {
                    throw ValidationError("bad ladder entry '" + item + "'");
                }
                ladder.push_back(rung);
            }
            const auto rows = run_experiment3(cfg, ladder);
            std::cout << "states,epochs,seconds,largest_net,largest_worker_seconds\n";
            for (const auto& r : rows) {
                std::cout << r.states << ',' << r.epochs << ',' << r.seconds << ',' << r.largest_net
                          << ',' << r.largest_worker_seconds << "\n";
            }
            std::cout << "CSV in " << out_dir << "\n";
            return 0;
        });
    }
    return 1;
}
