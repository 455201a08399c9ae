#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "gridtear/netmodel.hpp"

// JSON case schema. Complex numbers are {"re":f,"im":f}; three-phase
// admittance blocks are row-major arrays of 9 complex values (nested
// [[..3..],[..3..],[..3..]] also accepted on input).

namespace gridtear {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ParseError("case schema violation at " + where + ": " + what);
}

const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) fail(where, std::string("missing field '") + key + "'");
    return j.at(key);
}

std::string need_string(const json& j, const char* key, const std::string& where) {
    const auto& v = need(j, key, where);
    if (!v.is_string()) fail(where + "." + key, "expected string");
    return v.get<std::string>();
}

double need_number(const json& j, const std::string& where) {
    if (!j.is_number()) fail(where, "expected number");
    return j.get<double>();
}

ComplexPair parse_complex(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where, "expected complex object {re, im}");
    return {need_number(need(j, "re", where), where + ".re"),
            need_number(need(j, "im", where), where + ".im")};
}

std::vector<ComplexPair> parse_complex_list(const json& j, const std::string& where) {
    std::vector<ComplexPair> out;
    if (j.is_object()) {
        out.push_back(parse_complex(j, where));
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            out.push_back(parse_complex(j[i], where + "[" + std::to_string(i) + "]"));
        }
    } else {
        fail(where, "expected complex object or array of complex");
    }
    return out;
}

Eigen::MatrixXcd parse_phase_matrix(const json& j, int phases, const std::string& where) {
    Eigen::MatrixXcd m(phases, phases);
    if (phases == 1) {
        const auto c = parse_complex(j, where);
        m(0, 0) = c.to_complex();
        return m;
    }
    if (!j.is_array()) fail(where, "expected 3x3 admittance block");
    if (j.size() == 9) {
        for (int k = 0; k < 9; ++k) {
            m(k / 3, k % 3) =
                parse_complex(j[static_cast<std::size_t>(k)], where + "[" + std::to_string(k) + "]").to_complex();
        }
        return m;
    }
    if (j.size() == 3) {
        for (int r = 0; r < 3; ++r) {
            const auto& row = j[static_cast<std::size_t>(r)];
            if (!row.is_array() || row.size() != 3) fail(where, "expected 3 rows of 3 complex");
            for (int c = 0; c < 3; ++c) {
                m(r, c) = parse_complex(row[static_cast<std::size_t>(c)],
                                        where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]")
                              .to_complex();
            }
        }
        return m;
    }
    fail(where, "expected 9 (row-major) or 3x3 complex entries");
}

std::vector<double> parse_number_list(const json& j, const std::string& where) {
    std::vector<double> out;
    if (j.is_number()) {
        out.push_back(j.get<double>());
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            out.push_back(need_number(j[i], where + "[" + std::to_string(i) + "]"));
        }
    } else {
        fail(where, "expected number or array of numbers");
    }
    return out;
}

MeasurementDevice parse_device(const json& j, const std::string& where) {
    const std::string type = need_string(j, "type", where);
    const double w = need_number(need(j, "w", where), where + ".w");
    if (type == "PhasorInjection") {
        PhasorInjection d;
        d.node = need_string(j, "node", where);
        d.current = parse_complex_list(need(j, "current", where), where + ".current");
        d.voltage = parse_complex_list(need(j, "voltage", where), where + ".voltage");
        d.weight = w;
        return d;
    }
    if (type == "RmsPowerInjection") {
        RmsPowerInjection d;
        d.node = need_string(j, "node", where);
        d.p = parse_number_list(need(j, "p", where), where + ".p");
        d.q = parse_number_list(need(j, "q", where), where + ".q");
        d.vm = parse_number_list(need(j, "vm", where), where + ".vm");
        d.weight = w;
        return d;
    }
    if (type == "RmsFlow") {
        RmsFlow d;
        d.from = need_string(j, "from", where);
        d.to = need_string(j, "to", where);
        d.p = parse_number_list(need(j, "p", where), where + ".p");
        d.q = parse_number_list(need(j, "q", where), where + ".q");
        d.vm = parse_number_list(need(j, "vm", where), where + ".vm");
        d.weight = w;
        return d;
    }
    if (type == "PhasorFlow") {
        PhasorFlow d;
        d.from = need_string(j, "from", where);
        d.to = need_string(j, "to", where);
        d.current = parse_complex_list(need(j, "current", where), where + ".current");
        d.weight = w;
        return d;
    }
    fail(where + ".type", "unknown device type '" + type + "'");
}

NodeKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "slack") return NodeKind::Slack;
    if (s == "injection") return NodeKind::Injection;
    if (s == "zero_injection") return NodeKind::ZeroInjection;
    if (s == "boundary") return NodeKind::Boundary;
    fail(where, "unknown node kind '" + s + "'");
}

const char* kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::Slack: return "slack";
        case NodeKind::Injection: return "injection";
        case NodeKind::ZeroInjection: return "zero_injection";
        default: return "boundary";
    }
}

ordered_json complex_json(const ComplexPair& c) {
    return ordered_json{{"re", c.re}, {"im", c.im}};
}

ordered_json complex_list_json(const std::vector<ComplexPair>& v) {
    if (v.size() == 1) return complex_json(v[0]);
    ordered_json a = ordered_json::array();
    for (const auto& c : v) a.push_back(complex_json(c));
    return a;
}

ordered_json matrix_json(const Eigen::MatrixXcd& m) {
    if (m.rows() == 1) return complex_json(ComplexPair(m(0, 0)));
    ordered_json a = ordered_json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) a.push_back(complex_json(ComplexPair(m(r, c))));
    }
    return a;
}

ordered_json numbers_json(const std::vector<double>& v) {
    if (v.size() == 1) return v[0];
    return ordered_json(v);
}

}  // namespace

CombinedCase parse_case_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }

    CombinedCase out;
    const auto& nets = need(root, "subnetworks", "$");
    if (!nets.is_array() || nets.empty()) fail("$.subnetworks", "expected non-empty array");

    for (std::size_t si = 0; si < nets.size(); ++si) {
        const std::string swhere = "$.subnetworks[" + std::to_string(si) + "]";
        const auto& jn = nets[si];
        SubNetwork sub;
        sub.id = need_string(jn, "id", swhere);
        const std::string dom = need_string(jn, "domain", swhere);
        if (dom == "positive_sequence") {
            sub.domain = PhaseDomain::PositiveSequence;
        } else if (dom == "three_phase") {
            sub.domain = PhaseDomain::ThreePhase;
        } else {
            fail(swhere + ".domain", "expected 'positive_sequence' or 'three_phase'");
        }
        const int p = sub.phases();

        const auto& jnodes = need(jn, "nodes", swhere);
        if (!jnodes.is_array()) fail(swhere + ".nodes", "expected array");
        for (std::size_t ni = 0; ni < jnodes.size(); ++ni) {
            const std::string nwhere = swhere + ".nodes[" + std::to_string(ni) + "]";
            const auto& jnode = jnodes[ni];
            Node nd;
            nd.id = need_string(jnode, "id", nwhere);
            nd.kind = parse_kind(need_string(jnode, "kind", nwhere), nwhere + ".kind");
            if (jnode.contains("load")) {
                nd.load = parse_complex_list(jnode.at("load"), nwhere + ".load");
                if (static_cast<int>(nd.load.size()) != p) {
                    fail(nwhere + ".load", "entry count does not match the phase domain");
                }
            }
            if (jnode.contains("voltage")) {
                nd.voltage = parse_complex_list(jnode.at("voltage"), nwhere + ".voltage");
                if (static_cast<int>(nd.voltage.size()) != p) {
                    fail(nwhere + ".voltage", "entry count does not match the phase domain");
                }
            }
            sub.nodes.push_back(std::move(nd));
        }

        if (jn.contains("branches")) {
            const auto& jbr = jn.at("branches");
            if (!jbr.is_array()) fail(swhere + ".branches", "expected array");
            for (std::size_t bi = 0; bi < jbr.size(); ++bi) {
                const std::string bwhere = swhere + ".branches[" + std::to_string(bi) + "]";
                const auto& jb = jbr[bi];
                Branch br;
                br.from = need_string(jb, "from", bwhere);
                br.to = need_string(jb, "to", bwhere);
                br.series = parse_phase_matrix(need(jb, "series", bwhere), p, bwhere + ".series");
                if (jb.contains("shunt")) {
                    const auto& js = jb.at("shunt");
                    if (!js.is_object()) fail(bwhere + ".shunt", "expected object {from, to}");
                    if (js.contains("from")) {
                        br.shunt_from = parse_phase_matrix(js.at("from"), p, bwhere + ".shunt.from");
                    }
                    if (js.contains("to")) {
                        br.shunt_to = parse_phase_matrix(js.at("to"), p, bwhere + ".shunt.to");
                    }
                }
                sub.branches.push_back(std::move(br));
            }
        }

        if (jn.contains("devices")) {
            const auto& jdev = jn.at("devices");
            if (!jdev.is_array()) fail(swhere + ".devices", "expected array");
            for (std::size_t di = 0; di < jdev.size(); ++di) {
                sub.devices.push_back(
                    parse_device(jdev[di], swhere + ".devices[" + std::to_string(di) + "]"));
            }
        }
        out.subnetworks.push_back(std::move(sub));
    }

    if (root.contains("couplings")) {
        const auto& jc = root.at("couplings");
        if (!jc.is_array()) fail("$.couplings", "expected array");
        for (std::size_t ci = 0; ci < jc.size(); ++ci) {
            const std::string cwhere = "$.couplings[" + std::to_string(ci) + "]";
            Coupling cp;
            cp.t_net = need_string(jc[ci], "t_net", cwhere);
            cp.t_node = need_string(jc[ci], "t_node", cwhere);
            cp.d_net = need_string(jc[ci], "d_net", cwhere);
            cp.d_bus = need_string(jc[ci], "d_bus", cwhere);
            out.couplings.push_back(std::move(cp));
        }
    }

    validate_case(out);
    for (auto& sub : out.subnetworks) sub.finalize();
    return out;
}

CombinedCase parse_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open case file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_case_text(ss.str(), path);
}

std::string case_to_json(const CombinedCase& c) {
    ordered_json root;
    root["subnetworks"] = ordered_json::array();
    for (const auto& sub : c.subnetworks) {
        ordered_json jn;
        jn["id"] = sub.id;
        jn["domain"] =
            sub.domain == PhaseDomain::PositiveSequence ? "positive_sequence" : "three_phase";
        jn["nodes"] = ordered_json::array();
        for (const auto& nd : sub.nodes) {
            ordered_json jnode;
            jnode["id"] = nd.id;
            jnode["kind"] = kind_name(nd.kind);
            if (!nd.load.empty()) jnode["load"] = complex_list_json(nd.load);
            if (!nd.voltage.empty()) jnode["voltage"] = complex_list_json(nd.voltage);
            jn["nodes"].push_back(std::move(jnode));
        }
        jn["branches"] = ordered_json::array();
        for (const auto& br : sub.branches) {
            ordered_json jb;
            jb["from"] = br.from;
            jb["to"] = br.to;
            jb["series"] = matrix_json(br.series);
            if (br.shunt_from.size() > 0 || br.shunt_to.size() > 0) {
                ordered_json js;
                if (br.shunt_from.size() > 0) js["from"] = matrix_json(br.shunt_from);
                if (br.shunt_to.size() > 0) js["to"] = matrix_json(br.shunt_to);
                jb["shunt"] = std::move(js);
            }
            jn["branches"].push_back(std::move(jb));
        }
        jn["devices"] = ordered_json::array();
        for (const auto& dev : sub.devices) {
            ordered_json jd;
            jd["type"] = device_type_name(dev);
            std::visit(
                [&](const auto& d) {
                    using T = std::decay_t<decltype(d)>;
                    if constexpr (std::is_same_v<T, PhasorInjection>) {
                        jd["node"] = d.node;
                        jd["current"] = complex_list_json(d.current);
                        jd["voltage"] = complex_list_json(d.voltage);
                    } else if constexpr (std::is_same_v<T, RmsPowerInjection>) {
                        jd["node"] = d.node;
                        jd["p"] = numbers_json(d.p);
                        jd["q"] = numbers_json(d.q);
                        jd["vm"] = numbers_json(d.vm);
                    } else if constexpr (std::is_same_v<T, RmsFlow>) {
                        jd["from"] = d.from;
                        jd["to"] = d.to;
                        jd["p"] = numbers_json(d.p);
                        jd["q"] = numbers_json(d.q);
                        jd["vm"] = numbers_json(d.vm);
                    } else if constexpr (std::is_same_v<T, PhasorFlow>) {
                        jd["from"] = d.from;
                        jd["to"] = d.to;
                        jd["current"] = complex_list_json(d.current);
                    }
                },
                dev);
            jd["w"] = device_weight(dev);
            jn["devices"].push_back(std::move(jd));
        }
        root["subnetworks"].push_back(std::move(jn));
    }
    root["couplings"] = ordered_json::array();
    for (const auto& cp : c.couplings) {
        root["couplings"].push_back(ordered_json{
            {"t_net", cp.t_net}, {"t_node", cp.t_node}, {"d_net", cp.d_net}, {"d_bus", cp.d_bus}});
    }
    return root.dump(2) + "\n";
}

}  // namespace gridtear
