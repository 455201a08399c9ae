#include "gridtear/supervisory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

namespace gridtear {

ComplexPair positive_sequence_of(const std::array<ComplexPair, 3>& i_abc) {
    const ComplexPair a = i_abc[0];
    const ComplexPair b = rotate(i_abc[1], kSeqAngle);
    const ComplexPair c = rotate(i_abc[2], -kSeqAngle);  // R(a)^2 == R(-a)
    return {(a.re + b.re + c.re) / 3.0, (a.im + b.im + c.im) / 3.0};
}

std::array<ComplexPair, 3> distribute_voltage(const ComplexPair& v_pos) {
    return {v_pos, rotate(v_pos, -kSeqAngle), rotate(v_pos, kSeqAngle)};
}

CouplingPort make_port(std::string t_net, std::string t_node, std::string d_net,
                       std::string d_bus) {
    CouplingPort p;
    p.t_net = std::move(t_net);
    p.t_node = std::move(t_node);
    p.d_net = std::move(d_net);
    p.d_bus = std::move(d_bus);
    p.v_poi = {1.0, 0.0};
    p.i_pos = {0.0, 0.0};
    p.v_abc = distribute_voltage(p.v_poi);
    return p;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json cpx(const ComplexPair& c) { return ordered_json{{"re", c.re}, {"im", c.im}}; }

ComplexPair cpx_of(const nlohmann::json& j) {
    return {j.at("re").get<double>(), j.at("im").get<double>()};
}

}  // namespace

std::string message_to_line(const BoundaryMessage& m) {
    ordered_json j;
    j["v"] = "v1";
    j["epoch"] = m.epoch;
    j["net"] = m.net;
    ordered_json boundary = ordered_json::array();
    ordered_json currents = ordered_json::array();
    ordered_json lambdas = ordered_json::array();
    for (const auto& pr : m.ports) {
        if (!pr.voltage.empty()) {
            ordered_json b;
            b["port"] = pr.port;
            b["V"] = ordered_json::array();
            for (const auto& v : pr.voltage) b["V"].push_back(cpx(v));
            boundary.push_back(std::move(b));
        }
        if (!pr.current.empty()) {
            ordered_json c;
            c["port"] = pr.port;
            c["i"] = ordered_json::array();
            for (const auto& v : pr.current) c["i"].push_back(cpx(v));
            currents.push_back(std::move(c));
        }
        if (!pr.lambda_ext.empty()) {
            ordered_json l;
            l["port"] = pr.port;
            l["values"] = pr.lambda_ext;
            lambdas.push_back(std::move(l));
        }
    }
    j["boundary"] = std::move(boundary);
    j["port_currents"] = std::move(currents);
    j["lambda_ext"] = std::move(lambdas);
    return j.dump();
}

BoundaryMessage message_from_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError("malformed boundary message at byte " + std::to_string(e.byte) + ": " +
                            e.what());
    }
    try {
        if (j.at("v").get<std::string>() != "v1") {
            throw ProtocolError("unsupported protocol version '" +
                                j.at("v").get<std::string>() + "'");
        }
        BoundaryMessage m;
        m.epoch = j.at("epoch").get<int>();
        m.net = j.at("net").get<std::string>();
        std::map<int, PortReading> readings;
        for (const auto& b : j.at("boundary")) {
            auto& r = readings[b.at("port").get<int>()];
            for (const auto& v : b.at("V")) r.voltage.push_back(cpx_of(v));
        }
        for (const auto& c : j.at("port_currents")) {
            auto& r = readings[c.at("port").get<int>()];
            for (const auto& v : c.at("i")) r.current.push_back(cpx_of(v));
        }
        for (const auto& l : j.at("lambda_ext")) {
            auto& r = readings[l.at("port").get<int>()];
            r.lambda_ext = l.at("values").get<std::vector<double>>();
        }
        for (auto& [port, r] : readings) {
            r.port = port;
            m.ports.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("boundary message field error: ") + e.what());
    }
}

void validate_boundary_message(const BoundaryMessage& m,
                               const std::vector<std::string>& allowed_nodes) {
    (void)allowed_nodes;
    for (const auto& pr : m.ports) {
        if (pr.port < 0) throw ProtocolError("boundary message: port index missing");
        if (pr.voltage.size() > 3 || pr.current.size() > 3 || pr.lambda_ext.size() > 6) {
            throw ProtocolError("boundary message: oversized port payload (internal state leak?)");
        }
    }
    // Messages address ports by index, never by node id; nothing else to scrub.
}

std::vector<CouplingPort> gauss_update(const std::vector<CouplingPort>& ports,
                                       const std::vector<BoundaryMessage>& msgs,
                                       const std::vector<std::string>& expected_nets,
                                       double dual_relax) {
    std::map<std::string, const BoundaryMessage*> by_net;
    for (const auto& m : msgs) by_net[m.net] = &m;
    for (const auto& net : expected_nets) {
        if (!by_net.count(net)) {
            throw ConvergenceError("epoch stall: no boundary message from sub-network '" + net +
                                   "'");
        }
    }

    std::vector<CouplingPort> next = ports;
    for (std::size_t pi = 0; pi < next.size(); ++pi) {
        CouplingPort& port = next[pi];
        const auto* tm = by_net.at(port.t_net);
        const auto* dm = by_net.at(port.d_net);

        auto find_reading = [pi](const BoundaryMessage& m) -> const PortReading* {
            for (const auto& r : m.ports) {
                if (r.port == static_cast<int>(pi)) return &r;
            }
            return nullptr;
        };
        const PortReading* tr = find_reading(*tm);
        const PortReading* dr = find_reading(*dm);
        if (tr == nullptr || tr->voltage.empty()) {
            throw ConvergenceError("epoch stall: sub-network '" + port.t_net +
                                   "' reported no POI voltage for port " + std::to_string(pi));
        }
        if (dr == nullptr || dr->current.size() != 3) {
            throw ConvergenceError("epoch stall: sub-network '" + port.d_net +
                                   "' reported no boundary currents for port " +
                                   std::to_string(pi));
        }

        port.v_poi = tr->voltage.front();
        for (int ph = 0; ph < 3; ++ph) port.i_abc[static_cast<std::size_t>(ph)] = dr->current[static_cast<std::size_t>(ph)];
        port.i_pos = positive_sequence_of(port.i_abc);
        port.v_abc = distribute_voltage(port.v_poi);

        auto relax = [dual_relax](ComplexPair& old_v, const ComplexPair& new_v) {
            old_v.re += dual_relax * (new_v.re - old_v.re);
            old_v.im += dual_relax * (new_v.im - old_v.im);
        };
        if (tr->lambda_ext.size() == 2) {
            relax(port.lambda_t, {tr->lambda_ext[0], tr->lambda_ext[1]});
        }
        if (dr->lambda_ext.size() == 6) {
            for (int ph = 0; ph < 3; ++ph) {
                relax(port.lambda_d[static_cast<std::size_t>(ph)],
                      {dr->lambda_ext[static_cast<std::size_t>(2 * ph)],
                       dr->lambda_ext[static_cast<std::size_t>(2 * ph + 1)]});
            }
        }
    }
    return next;
}

double port_delta_inf(const std::vector<CouplingPort>& prev,
                      const std::vector<CouplingPort>& next) {
    if (prev.size() != next.size()) {
        throw ValidationError("epoch convergence check: mismatched port sets");
    }
    // Convergence is judged on the primal port quantities. The dual mirrors
    // contract at the same geometric rate but wander harmlessly when the
    // optimum is dual-degenerate (noise-free data), so they stay out of the
    // norm.
    double d = 0.0;
    auto upd = [&d](const ComplexPair& a, const ComplexPair& b) {
        d = std::max({d, std::abs(a.re - b.re), std::abs(a.im - b.im)});
    };
    for (std::size_t i = 0; i < prev.size(); ++i) {
        upd(prev[i].v_poi, next[i].v_poi);
        upd(prev[i].i_pos, next[i].i_pos);
        for (int ph = 0; ph < 3; ++ph) {
            upd(prev[i].v_abc[static_cast<std::size_t>(ph)], next[i].v_abc[static_cast<std::size_t>(ph)]);
            upd(prev[i].i_abc[static_cast<std::size_t>(ph)], next[i].i_abc[static_cast<std::size_t>(ph)]);
        }
    }
    return d;
}

bool epoch_converged(const std::vector<CouplingPort>& prev,
                     const std::vector<CouplingPort>& next, double eps) {
    return port_delta_inf(prev, next) <= eps;
}

}  // namespace gridtear
