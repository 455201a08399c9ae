#include "gridtear/runtime.hpp"

#include <chrono>
#include <iostream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gridtear {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Anneals the dual-exchange relaxation when the external variables stop
/// making progress. Degenerate WLAV instances can flip between optimal bases
/// as the mirrored duals move; freezing the mirrors restores the plain primal
/// iteration, which contracts on physical coupling alone. Clean runs never
/// trigger it, preserving exact monolithic equivalence.
struct DualAnnealer {
    double factor = 1.0;
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;

    double step(double delta) {
        if (delta < 0.8 * best) {
            best = delta;
            stall = 0;
        } else if (++stall >= 3) {
            factor *= 0.5;
            stall = 0;
        }
        return factor;
    }
};

struct Worker {
    int net = 0;
    std::string id;
    EstimationProblem problem;
    SolverState state;
    bool has_state = false;
    Estimate estimate;
    WorkerReport last_report;
};

/// Solve one worker's sub-problem against the current port values.
void worker_solve(Worker& w, const std::vector<CouplingPort>& ports, const RunConfig& cfg,
                  int epoch) {
    const auto t0 = Clock::now();
    w.problem.set_external(ports);
    SolverState warm;
    const SolverState* wp = nullptr;
    if (w.has_state && cfg.warm_start) {
        warm = warm_state(w.problem, w.state, cfg.warm_eps0);
        wp = &warm;
    }
    w.estimate = pdip_solve(w.problem, cfg.solver, wp, &w.state);
    w.has_state = true;
    w.last_report.net = w.id;
    w.last_report.iterations = w.estimate.iterations;
    w.last_report.kkt = w.estimate.kkt_history.empty() ? 0.0 : w.estimate.kkt_history.back();
    w.last_report.seconds = seconds_since(t0);
    if (!w.estimate.converged) {
        throw ConvergenceError("sub-problem '" + w.id + "' did not converge at epoch " +
                               std::to_string(epoch));
    }
}

/// Boundary-states-only message for the supervisory layer.
BoundaryMessage build_message(const Worker& w, int epoch) {
    BoundaryMessage m;
    m.epoch = epoch;
    m.net = w.id;
    for (const auto& pp : w.problem.ports) {
        PortReading r;
        r.port = pp.case_index;
        if (pp.t_side) {
            r.voltage.push_back({w.state.x[pp.poi_var_re], w.state.x[pp.poi_var_im]});
            r.lambda_ext = {w.state.lambda[pp.kcl_rows[0]], w.state.lambda[pp.kcl_rows[1]]};
        } else {
            for (int ph = 0; ph < 3; ++ph) {
                r.voltage.push_back({w.problem.ext_values[pp.ext0 + 2 * ph],
                                     w.problem.ext_values[pp.ext0 + 2 * ph + 1]});
                r.current.push_back(
                    {w.state.x[pp.jvar0 + 2 * ph], w.state.x[pp.jvar0 + 2 * ph + 1]});
            }
            // Gradient of this sub-problem's Lagrangian with respect to the
            // boundary-voltage values: the dual exchange of the Gauss step.
            const Eigen::VectorXd lext = w.problem.A_ext.transpose() * w.state.lambda;
            for (int k = 0; k < 6; ++k) r.lambda_ext.push_back(lext[pp.ext0 + k]);
        }
        m.ports.push_back(std::move(r));
    }
    return m;
}

nlohmann::ordered_json cpx_json(const ComplexPair& c) {
    return nlohmann::ordered_json{{"re", c.re}, {"im", c.im}};
}

ComplexPair cpx_of(const nlohmann::json& j) {
    return {j.at("re").get<double>(), j.at("im").get<double>()};
}

/// Supervisory barrier acknowledgment: the refreshed port values (+ done flag).
std::string ports_to_line(int epoch, const std::vector<CouplingPort>& ports, bool done) {
    nlohmann::ordered_json j;
    j["v"] = "v1";
    j["type"] = "ports";
    j["epoch"] = epoch;
    j["done"] = done;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : ports) {
        nlohmann::ordered_json pj;
        pj["v_poi"] = cpx_json(p.v_poi);
        pj["i_pos"] = cpx_json(p.i_pos);
        pj["lambda_t"] = cpx_json(p.lambda_t);
        auto vab = nlohmann::ordered_json::array();
        auto iab = nlohmann::ordered_json::array();
        auto lab = nlohmann::ordered_json::array();
        for (int ph = 0; ph < 3; ++ph) {
            vab.push_back(cpx_json(p.v_abc[static_cast<std::size_t>(ph)]));
            iab.push_back(cpx_json(p.i_abc[static_cast<std::size_t>(ph)]));
            lab.push_back(cpx_json(p.lambda_d[static_cast<std::size_t>(ph)]));
        }
        pj["v_abc"] = std::move(vab);
        pj["i_abc"] = std::move(iab);
        pj["lambda_d"] = std::move(lab);
        arr.push_back(std::move(pj));
    }
    j["ports"] = std::move(arr);
    return j.dump();
}

struct PortsUpdate {
    int epoch = 0;
    bool done = false;
};

PortsUpdate ports_from_line(const std::string& line, std::vector<CouplingPort>& ports) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError("malformed port update at byte " + std::to_string(e.byte) + ": " +
                            e.what());
    }
    try {
        if (j.at("type").get<std::string>() != "ports") {
            throw ProtocolError("expected a port update line");
        }
        const auto& arr = j.at("ports");
        if (arr.size() != ports.size()) throw ProtocolError("port update size mismatch");
        for (std::size_t i = 0; i < ports.size(); ++i) {
            auto& p = ports[i];
            p.v_poi = cpx_of(arr[i].at("v_poi"));
            p.i_pos = cpx_of(arr[i].at("i_pos"));
            p.lambda_t = cpx_of(arr[i].at("lambda_t"));
            for (int ph = 0; ph < 3; ++ph) {
                p.v_abc[static_cast<std::size_t>(ph)] = cpx_of(arr[i].at("v_abc")[static_cast<std::size_t>(ph)]);
                p.i_abc[static_cast<std::size_t>(ph)] = cpx_of(arr[i].at("i_abc")[static_cast<std::size_t>(ph)]);
                p.lambda_d[static_cast<std::size_t>(ph)] = cpx_of(arr[i].at("lambda_d")[static_cast<std::size_t>(ph)]);
            }
        }
        return {j.at("epoch").get<int>(), j.at("done").get<bool>()};
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("port update field error: ") + e.what());
    }
}

std::vector<std::string> boundary_node_ids(const CombinedCase& c) {
    std::vector<std::string> out;
    for (const auto& cp : c.couplings) {
        out.push_back(cp.t_node);
        out.push_back(cp.d_bus);
    }
    return out;
}

RunResult finalize_result(const CombinedCase& c, std::vector<Worker>& workers, RunResult res) {
    res.estimates.resize(c.subnetworks.size());
    res.total_objective = 0.0;
    for (auto& w : workers) {
        res.total_objective += w.estimate.objective;
        res.estimates[static_cast<std::size_t>(w.net)] = std::move(w.estimate);
    }
    return res;
}

}  // namespace

std::vector<CouplingPort> init_ports(const CombinedCase& c) {
    std::vector<CouplingPort> ports;
    ports.reserve(c.couplings.size());
    for (const auto& cp : c.couplings) {
        ports.push_back(make_port(cp.t_net, cp.t_node, cp.d_net, cp.d_bus));
    }
    return ports;
}

RunResult run_acse(const CombinedCase& c, const RunConfig& cfg) {
    RunResult res;
    res.ratios = decomposition_ratio(c);
    for (const auto& r : res.ratios) {
        if (r.ratio.has_value() && *r.ratio < 10.0) {
            res.warnings.push_back("sub-network '" + r.net + "' decomposition ratio " +
                                   std::to_string(*r.ratio) + " is below 10");
        }
    }

    std::vector<CouplingPort> ports = init_ports(c);
    const int nets = static_cast<int>(c.subnetworks.size());
    std::vector<Worker> workers(static_cast<std::size_t>(nets));
    std::vector<std::string> net_ids;
    for (int s = 0; s < nets; ++s) {
        workers[static_cast<std::size_t>(s)].net = s;
        workers[static_cast<std::size_t>(s)].id = c.subnetworks[static_cast<std::size_t>(s)].id;
        workers[static_cast<std::size_t>(s)].problem = assemble_subproblem(c, s, cfg.mode, ports);
        net_ids.push_back(c.subnetworks[static_cast<std::size_t>(s)].id);
    }
    const auto allowed = boundary_node_ids(c);

    // Socket mode moves the same epoch loop onto per-worker threads with the
    // supervisory barrier on TCP; in-process mode drives workers directly.
    if (cfg.transport == TransportMode::Socket) {
        SocketServer server(cfg.socket_address);
        const auto colon = cfg.socket_address.rfind(':');
        const std::string host = cfg.socket_address.substr(0, colon);

        std::mutex misc_mutex;
        std::vector<std::string> errors;
        std::vector<std::thread> threads;
        threads.reserve(workers.size());
        for (auto& w : workers) {
            threads.emplace_back([&, host]() {
                try {
                    auto chan = socket_connect(host, server.port());
                    std::vector<CouplingPort> local_ports = init_ports(c);
                    for (int epoch = 1;; ++epoch) {
                        worker_solve(w, local_ports, cfg, epoch);
                        const auto msg = build_message(w, epoch);
                        validate_boundary_message(msg, allowed);
                        chan->send_line(message_to_line(msg));
                        const auto upd = ports_from_line(chan->recv_line(), local_ports);
                        if (upd.epoch != epoch) {
                            throw ProtocolError("epoch barrier violated: expected ack for epoch " +
                                                std::to_string(epoch) + ", got " +
                                                std::to_string(upd.epoch));
                        }
                        if (upd.done) break;
                    }
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(misc_mutex);
                    errors.emplace_back(e.what());
                }
            });
        }

        std::vector<ChannelPtr> conns;
        bool converged = false;
        int epoch = 1;
        DualAnnealer annealer;
        std::exception_ptr sup_error;
        try {
            for (std::size_t i = 0; i < workers.size(); ++i) conns.push_back(server.accept_one());
            for (; epoch <= cfg.max_epochs; ++epoch) {
                const auto t0 = Clock::now();
                std::vector<BoundaryMessage> msgs;
                for (auto& conn : conns) {
                    const std::string line = conn->recv_line();
                    if (cfg.log_transcript) res.transcript.push_back(line);
                    auto m = message_from_line(line);
                    if (m.epoch != epoch) {
                        throw ProtocolError("worker '" + m.net + "' broke the epoch barrier");
                    }
                    msgs.push_back(std::move(m));
                }
                auto next = gauss_update(ports, msgs, net_ids,
                                         cfg.dual_relax * annealer.factor);
                const double delta = port_delta_inf(ports, next);
                annealer.step(delta);
                converged = c.couplings.empty() || delta <= cfg.eps_epoch;
                ports = std::move(next);

                EpochReport rep;
                rep.epoch = epoch;
                rep.port_delta = delta;
                for (auto& w : workers) rep.workers.push_back(w.last_report);
                rep.seconds = seconds_since(t0);
                res.reports.push_back(std::move(rep));

                const bool done = converged || epoch == cfg.max_epochs;
                const std::string ack = ports_to_line(epoch, ports, done);
                if (cfg.log_transcript) res.transcript.push_back(ack);
                for (auto& conn : conns) conn->send_line(ack);
                if (done) break;
            }
        } catch (...) {
            sup_error = std::current_exception();
        }
        // Releasing the connections unblocks any worker still waiting on an
        // acknowledgment, so every thread can be joined on all paths.
        conns.clear();
        for (auto& t : threads) {
            if (t.joinable()) t.join();
        }
        if (!errors.empty()) throw ConvergenceError(errors.front());
        if (sup_error) std::rethrow_exception(sup_error);

        res.converged = converged;
        res.epochs = std::min(epoch, cfg.max_epochs);
        res.ports = ports;
        return finalize_result(c, workers, std::move(res));
    }

    bool converged = false;
    int epoch = 1;
    DualAnnealer annealer;
    for (; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = Clock::now();
        std::vector<std::string> errors(static_cast<std::size_t>(nets));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
#endif
        for (int s = 0; s < nets; ++s) {
            try {
                worker_solve(workers[static_cast<std::size_t>(s)], ports, cfg, epoch);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(s)] = e.what();
            }
        }
        for (const auto& e : errors) {
            if (!e.empty()) throw ConvergenceError(e);
        }

        // The exchange serializes through the same v1 lines as socket mode.
        std::vector<BoundaryMessage> msgs;
        for (auto& w : workers) {
            auto msg = build_message(w, epoch);
            validate_boundary_message(msg, allowed);
            const std::string line = message_to_line(msg);
            if (cfg.log_transcript) res.transcript.push_back(line);
            msgs.push_back(message_from_line(line));
        }
        auto next = gauss_update(ports, msgs, net_ids, cfg.dual_relax * annealer.factor);
        const double delta = port_delta_inf(ports, next);
        annealer.step(delta);
        converged = c.couplings.empty() || delta <= cfg.eps_epoch;
        ports = std::move(next);

        EpochReport rep;
        rep.epoch = epoch;
        rep.port_delta = delta;
        for (auto& w : workers) rep.workers.push_back(w.last_report);
        rep.seconds = seconds_since(t0);
        res.reports.push_back(std::move(rep));
        if (converged) break;
    }

    res.converged = converged;
    res.epochs = std::min(epoch, cfg.max_epochs);
    res.ports = ports;
    return finalize_result(c, workers, std::move(res));
}

RunResult solve_monolithic(const CombinedCase& c, const RunConfig& cfg) {
    if (c.state_dim() > cfg.monolithic_cap) {
        throw ValidationError("monolithic solve refused: state dimension " +
                              std::to_string(c.state_dim()) + " exceeds the cap of " +
                              std::to_string(cfg.monolithic_cap));
    }
    const auto t0 = Clock::now();
    auto problem = assemble_monolithic(c, cfg.mode);
    SolverState state;
    Estimate est = pdip_solve(problem, cfg.solver, nullptr, &state);
    if (!est.converged) {
        throw ConvergenceError("monolithic solve did not converge in " +
                               std::to_string(est.iterations) + " iterations");
    }

    RunResult res;
    res.converged = true;
    res.epochs = 1;
    res.total_objective = est.objective;

    // Ports at the central solution, for idempotence checks and reporting.
    res.ports = init_ports(c);
    for (std::size_t ci = 0; ci < problem.ports.size(); ++ci) {
        const auto& pp = problem.ports[ci];
        auto& port = res.ports[static_cast<std::size_t>(pp.case_index)];
        port.v_poi = {state.x[pp.poi_var_re], state.x[pp.poi_var_im]};
        for (int ph = 0; ph < 3; ++ph) {
            port.i_abc[static_cast<std::size_t>(ph)] = {state.x[pp.jvar0 + 2 * ph],
                                                        state.x[pp.jvar0 + 2 * ph + 1]};
        }
        port.i_pos = positive_sequence_of(port.i_abc);
        port.v_abc = distribute_voltage(port.v_poi);
    }

    // Split the central solve into per-net estimates.
    res.estimates.assign(c.subnetworks.size(), Estimate{});
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        Estimate& e = res.estimates[s];
        e.mode = est.mode;
        e.converged = est.converged;
        e.iterations = est.iterations;
        e.kkt_history = est.kkt_history;
        e.voltages.push_back(est.voltages[s]);
        e.objective = 0.0;
    }
    for (const auto& r : est.residuals) {
        auto& e = res.estimates[static_cast<std::size_t>(r.net)];
        e.objective += r.weight * (est.mode == EstMode::Wlav ? r.eta_abs : r.eta * r.eta);
        e.max_eta_product = std::max(e.max_eta_product, est.max_eta_product);
        e.residuals.push_back(r);
    }

    EpochReport rep;
    rep.epoch = 1;
    rep.port_delta = 0.0;
    rep.seconds = seconds_since(t0);
    WorkerReport wr;
    wr.net = "monolithic";
    wr.iterations = est.iterations;
    wr.kkt = est.kkt_history.empty() ? 0.0 : est.kkt_history.back();
    wr.seconds = rep.seconds;
    rep.workers.push_back(wr);
    res.reports.push_back(std::move(rep));
    return res;
}

}  // namespace gridtear
