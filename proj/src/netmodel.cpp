#include "gridtear/netmodel.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "gridtear/supervisory.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gridtear {

int SubNetwork::node_index(const std::string& node_id) const {
    auto it = index_.find(node_id);
    if (it == index_.end()) {
        throw ValidationError("sub-network '" + id + "': unknown node '" + node_id + "'");
    }
    return it->second;
}

bool SubNetwork::has_node(const std::string& node_id) const {
    return index_.count(node_id) != 0;
}

int SubNetwork::branch_index(const std::string& from, const std::string& to) const {
    for (std::size_t i = 0; i < branches.size(); ++i) {
        if ((branches[i].from == from && branches[i].to == to) ||
            (branches[i].from == to && branches[i].to == from)) {
            return static_cast<int>(i);
        }
    }
    throw ValidationError("sub-network '" + id + "': no branch between '" + from + "' and '" +
                          to + "'");
}

void SubNetwork::finalize() {
    index_.clear();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!index_.emplace(nodes[i].id, static_cast<int>(i)).second) {
            throw ValidationError("sub-network '" + id + "': duplicate node id '" + nodes[i].id +
                                  "'");
        }
    }
    y_ = assemble_admittance(*this);
}

void SubNetwork::finalize_with_admittance(SparseComplex y) {
    index_.clear();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        index_.emplace(nodes[i].id, static_cast<int>(i));
    }
    if (y.rows() != dim() || y.cols() != dim()) {
        throw ValidationError("sub-network '" + id + "': admittance dimension mismatch");
    }
    y_ = std::move(y);
}

int CombinedCase::net_index(const std::string& net_id) const {
    for (std::size_t i = 0; i < subnetworks.size(); ++i) {
        if (subnetworks[i].id == net_id) return static_cast<int>(i);
    }
    throw ValidationError("unknown sub-network '" + net_id + "'");
}

std::vector<int> CombinedCase::ports_of(int net) const {
    std::vector<int> out;
    const std::string& id = subnetworks[static_cast<std::size_t>(net)].id;
    for (std::size_t i = 0; i < couplings.size(); ++i) {
        if (couplings[i].t_net == id || couplings[i].d_net == id) out.push_back(static_cast<int>(i));
    }
    return out;
}

int CombinedCase::state_dim() const {
    int n = 0;
    for (const auto& s : subnetworks) n += 2 * s.dim();
    return n;
}

SparseComplex assemble_admittance(const SubNetwork& sub) {
    const int p = sub.phases();
    const int n = sub.dim();
    std::vector<Eigen::Triplet<Complex>> trips;
    trips.reserve(sub.branches.size() * static_cast<std::size_t>(4 * p * p) + 8);

    std::vector<bool> touched(static_cast<std::size_t>(sub.node_count()), false);

    // Local index lookup; finalize() may not have run yet.
    std::map<std::string, int> idx;
    for (std::size_t i = 0; i < sub.nodes.size(); ++i) idx[sub.nodes[i].id] = static_cast<int>(i);

    auto at = [&](const std::string& node_id) {
        auto it = idx.find(node_id);
        if (it == idx.end()) {
            throw ValidationError("sub-network '" + sub.id + "': branch references unknown node '" +
                                  node_id + "'");
        }
        return it->second;
    };

    for (const auto& br : sub.branches) {
        const int f = at(br.from), t = at(br.to);
        touched[static_cast<std::size_t>(f)] = true;
        touched[static_cast<std::size_t>(t)] = true;
        for (int a = 0; a < p; ++a) {
            for (int b = 0; b < p; ++b) {
                const Complex s = br.series(a, b);
                if (s != Complex{0.0, 0.0}) {
                    trips.emplace_back(f * p + a, f * p + b, s);
                    trips.emplace_back(t * p + a, t * p + b, s);
                    trips.emplace_back(f * p + a, t * p + b, -s);
                    trips.emplace_back(t * p + a, f * p + b, -s);
                }
                if (br.shunt_from.size() > 0 && br.shunt_from(a, b) != Complex{0.0, 0.0}) {
                    trips.emplace_back(f * p + a, f * p + b, br.shunt_from(a, b));
                }
                if (br.shunt_to.size() > 0 && br.shunt_to(a, b) != Complex{0.0, 0.0}) {
                    trips.emplace_back(t * p + a, t * p + b, br.shunt_to(a, b));
                }
            }
        }
    }

    for (std::size_t i = 0; i < touched.size(); ++i) {
        if (!touched[i]) {
            throw NumericError("sub-network '" + sub.id + "': node '" + sub.nodes[i].id +
                               "' is isolated (zero admittance row)");
        }
    }

    SparseComplex y(n, n);
    y.setFromTriplets(trips.begin(), trips.end());
    y.makeCompressed();
    return y;
}

std::vector<DecompositionRatio> decomposition_ratio(const CombinedCase& c) {
    std::vector<DecompositionRatio> out;
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        const auto& sub = c.subnetworks[s];
        const auto ports = c.ports_of(static_cast<int>(s));
        DecompositionRatio r;
        r.net = sub.id;
        const bool is_t = sub.domain == PhaseDomain::PositiveSequence;
        int owned_nodes = sub.node_count();
        if (!is_t) owned_nodes -= static_cast<int>(ports.size());  // boundary buses are external
        r.internal_states = 2 * sub.phases() * owned_nodes;
        r.external_states = static_cast<int>(ports.size()) * (is_t ? 2 : 6);
        if (r.external_states > 0) {
            r.ratio = static_cast<double>(r.internal_states) / r.external_states;
        } else if (c.subnetworks.size() > 1) {
            throw ValidationError("sub-network '" + sub.id +
                                  "' has no coupling in a multi-network case");
        }
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

void validate_phase_matrix(const Eigen::MatrixXcd& m, int phases, const std::string& what) {
    if (m.rows() != phases || m.cols() != phases) {
        throw ValidationError(what + ": expected " + std::to_string(phases) + "x" +
                              std::to_string(phases) +
                              " admittance block (mixed phase domain?)");
    }
    if (phases == 3) {
        for (int a = 0; a < 3; ++a) {
            for (int b = a + 1; b < 3; ++b) {
                if (std::abs(m(a, b) - m(b, a)) > 1e-9) {
                    throw ValidationError(what + ": three-phase series admittance not symmetric");
                }
            }
        }
    }
    if (!m.allFinite()) throw ValidationError(what + ": non-finite admittance entry");
}

}  // namespace

void validate_case(const CombinedCase& c) {
    if (c.subnetworks.empty()) throw ValidationError("case has no sub-networks");

    std::set<std::string> net_ids;
    for (const auto& sub : c.subnetworks) {
        if (!net_ids.insert(sub.id).second) {
            throw ValidationError("duplicate sub-network id '" + sub.id + "'");
        }
    }

    for (const auto& sub : c.subnetworks) {
        const int p = sub.phases();
        const std::string where = "sub-network '" + sub.id + "'";
        if (sub.nodes.empty()) throw ValidationError(where + " has no nodes");

        std::set<std::string> node_ids;
        for (const auto& nd : sub.nodes) {
            if (!node_ids.insert(nd.id).second) {
                throw ValidationError(where + ": duplicate node id '" + nd.id + "'");
            }
            if (!nd.load.empty() && static_cast<int>(nd.load.size()) != p) {
                throw ValidationError(where + ", node '" + nd.id +
                                      "': load entries do not match phase domain");
            }
            if (!nd.voltage.empty() && static_cast<int>(nd.voltage.size()) != p) {
                throw ValidationError(where + ", node '" + nd.id +
                                      "': voltage entries do not match phase domain");
            }
        }
        for (std::size_t bi = 0; bi < sub.branches.size(); ++bi) {
            const auto& br = sub.branches[bi];
            const std::string bwhere =
                where + ", branch " + std::to_string(bi) + " (" + br.from + "-" + br.to + ")";
            if (!node_ids.count(br.from)) {
                throw ValidationError(bwhere + ": unknown node '" + br.from + "'");
            }
            if (!node_ids.count(br.to)) {
                throw ValidationError(bwhere + ": unknown node '" + br.to + "'");
            }
            if (br.from == br.to) throw ValidationError(bwhere + ": self-loop");
            validate_phase_matrix(br.series, p, bwhere + " series");
            if (br.series.cwiseAbs().maxCoeff() == 0.0) {
                throw ValidationError(bwhere + ": zero series admittance");
            }
            if (br.shunt_from.size() > 0) validate_phase_matrix(br.shunt_from, p, bwhere + " shunt.from");
            if (br.shunt_to.size() > 0) validate_phase_matrix(br.shunt_to, p, bwhere + " shunt.to");
        }

        int slacks = 0;
        for (const auto& nd : sub.nodes) {
            if (nd.kind == NodeKind::Slack) ++slacks;
        }
        const bool has_port = [&] {
            for (const auto& cp : c.couplings) {
                if (cp.t_net == sub.id || cp.d_net == sub.id) return true;
            }
            return false;
        }();
        if (sub.domain == PhaseDomain::PositiveSequence) {
            if (slacks != 1) {
                throw ValidationError(where + ": positive-sequence networks need exactly one slack");
            }
        } else if (has_port ? slacks != 0 : slacks != 1) {
            throw ValidationError(where + (has_port
                                               ? ": coupled three-phase feeders must not have a slack"
                                               : ": standalone three-phase networks need one slack"));
        }

        for (const auto& dev : sub.devices) {
            const std::string dwhere = where + ", device " + device_type_name(dev);
            if (device_weight(dev) <= 0.0) throw ValidationError(dwhere + ": weight must be > 0");
            auto need_node = [&](const std::string& nid) {
                if (!node_ids.count(nid)) {
                    throw ValidationError(dwhere + ": unknown node '" + nid + "'");
                }
            };
            std::visit(
                [&](const auto& d) {
                    using T = std::decay_t<decltype(d)>;
                    if constexpr (std::is_same_v<T, PhasorInjection>) {
                        need_node(d.node);
                        if (static_cast<int>(d.current.size()) != p ||
                            static_cast<int>(d.voltage.size()) != p) {
                            throw ValidationError(dwhere + ": payload does not match phase domain");
                        }
                    } else if constexpr (std::is_same_v<T, RmsPowerInjection>) {
                        need_node(d.node);
                        if (static_cast<int>(d.p.size()) != p || static_cast<int>(d.q.size()) != p ||
                            static_cast<int>(d.vm.size()) != p) {
                            throw ValidationError(dwhere + ": payload does not match phase domain");
                        }
                        for (double v : d.vm) {
                            if (v <= 0.0) throw ValidationError(dwhere + ": |V| must be > 0");
                        }
                    } else if constexpr (std::is_same_v<T, RmsFlow>) {
                        need_node(d.from);
                        need_node(d.to);
                        if (static_cast<int>(d.p.size()) != p || static_cast<int>(d.q.size()) != p ||
                            static_cast<int>(d.vm.size()) != p) {
                            throw ValidationError(dwhere + ": payload does not match phase domain");
                        }
                        for (double v : d.vm) {
                            if (v <= 0.0) throw ValidationError(dwhere + ": |V| must be > 0");
                        }
                        static_cast<void>(sub.branch_index(d.from, d.to));
                    } else if constexpr (std::is_same_v<T, PhasorFlow>) {
                        need_node(d.from);
                        need_node(d.to);
                        if (static_cast<int>(d.current.size()) != p) {
                            throw ValidationError(dwhere + ": payload does not match phase domain");
                        }
                        static_cast<void>(sub.branch_index(d.from, d.to));
                    }
                },
                dev);
            // Zero-injection nodes carry no injection devices (there is no
            // injection to measure); flow sensors are edge devices and may
            // anchor anywhere, and boundary nodes may carry substation
            // telemetry.
            const bool injection_device = std::holds_alternative<PhasorInjection>(dev) ||
                                          std::holds_alternative<RmsPowerInjection>(dev);
            const std::string& anchor = device_anchor_node(dev);
            for (const auto& nd : sub.nodes) {
                if (nd.id != anchor) continue;
                if (injection_device && nd.kind == NodeKind::ZeroInjection) {
                    throw ValidationError(dwhere + ": zero-injection node '" + nd.id +
                                          "' cannot carry an injection measurement");
                }
            }
        }

        for (const auto& nd : sub.nodes) {
            if ((nd.kind == NodeKind::ZeroInjection || nd.kind == NodeKind::Boundary) &&
                !nd.load.empty()) {
                for (const auto& l : nd.load) {
                    if (l.re != 0.0 || l.im != 0.0) {
                        throw ValidationError(where + ", node '" + nd.id +
                                              "': zero-injection/boundary nodes cannot carry load");
                    }
                }
            }
        }
    }

    // Couplings: endpoints resolve, one positive-sequence node to one
    // three-phase bus, each boundary node in exactly one port, graph connected.
    std::map<std::string, int> port_count;
    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
        const auto& cp = c.couplings[ci];
        const std::string cwhere = "coupling " + std::to_string(ci);
        const auto tn = c.net_index(cp.t_net);
        const auto dn = c.net_index(cp.d_net);
        const auto& tsub = c.subnetworks[static_cast<std::size_t>(tn)];
        const auto& dsub = c.subnetworks[static_cast<std::size_t>(dn)];
        if (tsub.domain != PhaseDomain::PositiveSequence) {
            throw ValidationError(cwhere + ": '" + cp.t_net + "' is not positive-sequence");
        }
        if (dsub.domain != PhaseDomain::ThreePhase) {
            throw ValidationError(cwhere + ": '" + cp.d_net + "' is not three-phase");
        }
        auto check_boundary = [&](const SubNetwork& s, const std::string& nid) {
            bool found = false;
            for (const auto& nd : s.nodes) {
                if (nd.id == nid) {
                    found = true;
                    if (nd.kind != NodeKind::Boundary) {
                        throw ValidationError(cwhere + ": node '" + nid + "' in '" + s.id +
                                              "' must have kind boundary");
                    }
                }
            }
            if (!found) {
                throw ValidationError(cwhere + ": unknown node '" + nid + "' in '" + s.id + "'");
            }
            if (++port_count[s.id + "/" + nid] > 1) {
                throw ValidationError(cwhere + ": boundary node '" + nid +
                                      "' appears in more than one coupling");
            }
        };
        check_boundary(tsub, cp.t_node);
        check_boundary(dsub, cp.d_bus);
    }

    // Boundary-kind nodes must actually be coupled.
    for (const auto& sub : c.subnetworks) {
        for (const auto& nd : sub.nodes) {
            if (nd.kind == NodeKind::Boundary && !port_count.count(sub.id + "/" + nd.id)) {
                throw ValidationError("sub-network '" + sub.id + "': boundary node '" + nd.id +
                                      "' is not referenced by any coupling");
            }
        }
    }

    if (c.subnetworks.size() > 1) {
        // Connectivity of the coupling graph over sub-networks.
        std::map<std::string, int> comp;
        int next = 0;
        for (const auto& s : c.subnetworks) comp[s.id] = next++;
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& cp : c.couplings) {
                const int a = comp[cp.t_net], b = comp[cp.d_net];
                if (a != b) {
                    const int lo = std::min(a, b), hi = std::max(a, b);
                    for (auto& kv : comp) {
                        if (kv.second == hi) kv.second = lo;
                    }
                    changed = true;
                }
            }
        }
        for (const auto& kv : comp) {
            if (kv.second != comp.begin()->second) {
                throw ValidationError("coupling graph is not connected: sub-network '" + kv.first +
                                      "' unreachable");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

Eigen::VectorXcd flat_start(const SubNetwork& sub) {
    Eigen::VectorXcd v(sub.dim());
    const auto prof = distribute_voltage({1.0, 0.0});
    for (int n = 0; n < sub.node_count(); ++n) {
        for (int p = 0; p < sub.phases(); ++p) {
            const ComplexPair cp =
                sub.domain == PhaseDomain::PositiveSequence ? ComplexPair{1.0, 0.0} : prof[static_cast<std::size_t>(p)];
            v[sub.yidx(n, p)] = cp.to_complex();
        }
    }
    return v;
}

namespace {

ComplexPair slack_setpoint(const SubNetwork& sub, const Node& nd, int phase) {
    if (!nd.voltage.empty()) return nd.voltage[static_cast<std::size_t>(phase)];
    if (sub.domain == PhaseDomain::PositiveSequence) return {1.0, 0.0};
    return distribute_voltage({1.0, 0.0})[static_cast<std::size_t>(phase)];
}

/// Load current drawn at a voltage, I = conj(S / V), consumption-positive.
Complex load_current(const Complex& v, const ComplexPair& s) {
    const double d = std::norm(v);
    if (d < 1e-12) throw NumericError("voltage collapse while evaluating a constant-PQ load");
    return Complex{(s.re * v.real() + s.im * v.imag()) / d,
                   (s.re * v.imag() - s.im * v.real()) / d};
}

struct PfFixed {
    int node;
    std::vector<ComplexPair> value;  // per phase
};

/// Newton solve of one sub-network's nodal equations with fixed rows
/// (slack / boundary sources) and constant port draws at transmission POIs.
void newton_subnetwork(const SubNetwork& sub, const std::vector<PfFixed>& fixed,
                       const std::vector<std::pair<int, ComplexPair>>& draws,
                       Eigen::VectorXcd& v, const PowerFlowOptions& opts) {
    const int p = sub.phases();
    const int n = sub.dim();
    const auto& y = sub.admittance();

    std::vector<int> fixed_of(static_cast<std::size_t>(sub.node_count()), -1);
    for (std::size_t i = 0; i < fixed.size(); ++i) fixed_of[static_cast<std::size_t>(fixed[i].node)] = static_cast<int>(i);
    std::vector<Complex> draw_at(static_cast<std::size_t>(n), Complex{0.0, 0.0});
    for (const auto& [node, cur] : draws) draw_at[static_cast<std::size_t>(sub.yidx(node, 0))] += cur.to_complex();

    Eigen::VectorXd f(2 * n);
    std::vector<double> history;
    for (int it = 0; it <= opts.max_iters; ++it) {
        // Residual.
        Eigen::VectorXcd yv = y * v;
        for (int node = 0; node < sub.node_count(); ++node) {
            const auto& nd = sub.nodes[static_cast<std::size_t>(node)];
            for (int ph = 0; ph < p; ++ph) {
                const int k = sub.yidx(node, ph);
                Complex r;
                if (fixed_of[static_cast<std::size_t>(node)] >= 0) {
                    r = v[k] - fixed[static_cast<std::size_t>(fixed_of[static_cast<std::size_t>(node)])]
                                   .value[static_cast<std::size_t>(ph)]
                                   .to_complex();
                } else {
                    r = yv[k] + draw_at[static_cast<std::size_t>(k)];
                    if (!nd.load.empty()) r += load_current(v[k], nd.load[static_cast<std::size_t>(ph)]);
                }
                f[2 * k] = r.real();
                f[2 * k + 1] = r.imag();
            }
        }
        const double res = f.cwiseAbs().maxCoeff();
        history.push_back(res);
        if (res <= opts.tol) return;
        if (it == opts.max_iters) break;

        // Jacobian.
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(y.nonZeros()) * 4 + static_cast<std::size_t>(n) * 4);
        for (int node = 0; node < sub.node_count(); ++node) {
            const bool isfixed = fixed_of[static_cast<std::size_t>(node)] >= 0;
            const auto& nd = sub.nodes[static_cast<std::size_t>(node)];
            for (int ph = 0; ph < p; ++ph) {
                const int k = sub.yidx(node, ph);
                if (isfixed) {
                    trips.emplace_back(2 * k, 2 * k, 1.0);
                    trips.emplace_back(2 * k + 1, 2 * k + 1, 1.0);
                    continue;
                }
                if (!nd.load.empty()) {
                    const ComplexPair s = nd.load[static_cast<std::size_t>(ph)];
                    const double e = v[k].real(), fi = v[k].imag();
                    const double d = e * e + fi * fi;
                    const Complex il = load_current(v[k], s);
                    trips.emplace_back(2 * k, 2 * k, s.re / d - il.real() * 2 * e / d);
                    trips.emplace_back(2 * k, 2 * k + 1, s.im / d - il.real() * 2 * fi / d);
                    trips.emplace_back(2 * k + 1, 2 * k, -s.im / d - il.imag() * 2 * e / d);
                    trips.emplace_back(2 * k + 1, 2 * k + 1, s.re / d - il.imag() * 2 * fi / d);
                }
            }
        }
        // Admittance entries: iterate by column (Eigen sparse is column-major),
        // emitting into the row's real pair unless the row is fixed.
        for (int col = 0; col < n; ++col) {
            for (SparseComplex::InnerIterator itY(y, col); itY; ++itY) {
                const int row = static_cast<int>(itY.row());
                const int rnode = row / p;
                if (fixed_of[static_cast<std::size_t>(rnode)] >= 0) continue;
                const Complex w = itY.value();
                trips.emplace_back(2 * row, 2 * col, w.real());
                trips.emplace_back(2 * row, 2 * col + 1, -w.imag());
                trips.emplace_back(2 * row + 1, 2 * col, w.imag());
                trips.emplace_back(2 * row + 1, 2 * col + 1, w.real());
            }
        }

        SparseReal jac(2 * n, 2 * n);
        jac.setFromTriplets(trips.begin(), trips.end());
        Eigen::SparseLU<SparseReal> lu(jac);
        if (lu.info() != Eigen::Success) {
            throw NumericError("sub-network '" + sub.id + "': singular power-flow Jacobian");
        }
        Eigen::VectorXd dx = lu.solve(-f);
        for (int i = 0; i < dx.size(); ++i) {
            dx[i] = std::clamp(dx[i], -opts.step_clip, opts.step_clip);
        }
        for (int k = 0; k < n; ++k) v[k] += Complex{dx[2 * k], dx[2 * k + 1]};
    }
    std::ostringstream os;
    os << "sub-network '" << sub.id << "': power flow Newton did not converge; residuals:";
    for (double r : history) os << ' ' << r;
    throw ConvergenceError(os.str());
}

/// Current delivered into a feeder at its boundary bus for the given state.
std::array<ComplexPair, 3> boundary_currents(const SubNetwork& sub, int bus,
                                             const Eigen::VectorXcd& v) {
    const auto& y = sub.admittance();
    Eigen::VectorXcd yv = y * v;
    std::array<ComplexPair, 3> out{};
    const auto& nd = sub.nodes[static_cast<std::size_t>(bus)];
    for (int ph = 0; ph < sub.phases(); ++ph) {
        Complex c = yv[sub.yidx(bus, ph)];
        if (!nd.load.empty()) c += load_current(v[sub.yidx(bus, ph)], nd.load[static_cast<std::size_t>(ph)]);
        out[static_cast<std::size_t>(ph)] = ComplexPair(c);
    }
    return out;
}

}  // namespace

PowerFlowResult combined_power_flow(const CombinedCase& c, const PowerFlowOptions& opts) {
    const int nets = static_cast<int>(c.subnetworks.size());
    PowerFlowResult res;
    res.voltages.resize(static_cast<std::size_t>(nets));
    for (int s = 0; s < nets; ++s) {
        res.voltages[static_cast<std::size_t>(s)] = flat_start(c.subnetworks[static_cast<std::size_t>(s)]);
    }
    std::vector<PortFlowState> ports(c.couplings.size());
    for (auto& pt : ports) {
        pt.v_poi = {1.0, 0.0};
        pt.i_pos = {0.0, 0.0};
        pt.v_abc = distribute_voltage(pt.v_poi);
        pt.i_abc = {};
    }

    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        std::vector<std::string> errors(static_cast<std::size_t>(nets));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
#endif
        for (int s = 0; s < nets; ++s) {
            try {
                const auto& sub = c.subnetworks[static_cast<std::size_t>(s)];
                std::vector<PfFixed> fixed;
                std::vector<std::pair<int, ComplexPair>> draws;
                for (int node = 0; node < sub.node_count(); ++node) {
                    const auto& nd = sub.nodes[static_cast<std::size_t>(node)];
                    if (nd.kind == NodeKind::Slack) {
                        PfFixed fx{node, {}};
                        for (int ph = 0; ph < sub.phases(); ++ph) {
                            fx.value.push_back(slack_setpoint(sub, nd, ph));
                        }
                        fixed.push_back(std::move(fx));
                    }
                }
                for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
                    const auto& cp = c.couplings[ci];
                    if (cp.t_net == sub.id) {
                        draws.emplace_back(sub.node_index(cp.t_node), ports[ci].i_pos);
                    }
                    if (cp.d_net == sub.id) {
                        PfFixed fx{sub.node_index(cp.d_bus),
                                   {ports[ci].v_abc.begin(), ports[ci].v_abc.end()}};
                        fixed.push_back(std::move(fx));
                    }
                }
                newton_subnetwork(sub, fixed, draws, res.voltages[static_cast<std::size_t>(s)], opts);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(s)] = e.what();
            }
        }
        for (const auto& e : errors) {
            if (!e.empty()) throw ConvergenceError(e);
        }

        // Supervisory update of coupling quantities.
        double delta = 0.0;
        std::vector<PortFlowState> next(ports.size());
        for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
            const auto& cp = c.couplings[ci];
            const auto& tsub = c.subnetworks[static_cast<std::size_t>(c.net_index(cp.t_net))];
            const auto& dsub = c.subnetworks[static_cast<std::size_t>(c.net_index(cp.d_net))];
            const auto& vt = res.voltages[static_cast<std::size_t>(c.net_index(cp.t_net))];
            const auto& vd = res.voltages[static_cast<std::size_t>(c.net_index(cp.d_net))];
            PortFlowState& np = next[ci];
            np.v_poi = ComplexPair(vt[tsub.yidx(tsub.node_index(cp.t_node), 0)]);
            np.i_abc = boundary_currents(dsub, dsub.node_index(cp.d_bus), vd);
            np.i_pos = positive_sequence_of(np.i_abc);
            np.v_abc = distribute_voltage(np.v_poi);
            const auto& op = ports[ci];
            auto upd = [&delta](const ComplexPair& a, const ComplexPair& b) {
                delta = std::max({delta, std::abs(a.re - b.re), std::abs(a.im - b.im)});
            };
            upd(np.v_poi, op.v_poi);
            upd(np.i_pos, op.i_pos);
            for (int ph = 0; ph < 3; ++ph) {
                upd(np.v_abc[static_cast<std::size_t>(ph)], op.v_abc[static_cast<std::size_t>(ph)]);
                upd(np.i_abc[static_cast<std::size_t>(ph)], op.i_abc[static_cast<std::size_t>(ph)]);
            }
        }
        ports = std::move(next);
        res.epochs = epoch;
        res.port_delta_history.push_back(delta);
        if (c.couplings.empty() || delta <= opts.port_tol) {
            res.ports = ports;
            return res;
        }
    }
    throw ConvergenceError("combined power flow: coupling loop did not converge in " +
                           std::to_string(opts.max_epochs) + " epochs");
}

double kcl_residual_inf(const CombinedCase& c, const PowerFlowResult& state) {
    double worst = 0.0;
    for (std::size_t s = 0; s < c.subnetworks.size(); ++s) {
        const auto& sub = c.subnetworks[s];
        const auto& v = state.voltages[s];
        Eigen::VectorXcd yv = sub.admittance() * v;
        for (int node = 0; node < sub.node_count(); ++node) {
            const auto& nd = sub.nodes[static_cast<std::size_t>(node)];
            if (nd.kind == NodeKind::Slack) {
                for (int ph = 0; ph < sub.phases(); ++ph) {
                    const Complex d = v[sub.yidx(node, ph)] - slack_setpoint(sub, nd, ph).to_complex();
                    worst = std::max({worst, std::abs(d.real()), std::abs(d.imag())});
                }
                continue;
            }
            bool is_port_node = false;
            Complex extra{0.0, 0.0};
            for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
                const auto& cp = c.couplings[ci];
                if (cp.t_net == sub.id && sub.node_index(cp.t_node) == node) {
                    extra += state.ports[ci].i_pos.to_complex();
                }
                if (cp.d_net == sub.id && sub.node_index(cp.d_bus) == node) is_port_node = true;
            }
            for (int ph = 0; ph < sub.phases(); ++ph) {
                const int k = sub.yidx(node, ph);
                Complex r = yv[k];
                if (!nd.load.empty()) r += load_current(v[k], nd.load[static_cast<std::size_t>(ph)]);
                if (is_port_node) {
                    // Boundary bus: the port source supplies i_abc; residual is
                    // the mismatch between that stored current and the state.
                    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
                        const auto& cp = c.couplings[ci];
                        if (cp.d_net == sub.id && sub.node_index(cp.d_bus) == node) {
                            r -= state.ports[ci].i_abc[static_cast<std::size_t>(ph)].to_complex();
                        }
                    }
                } else {
                    r += extra;  // transmission POI draw; nonzero only on 1-phase nets
                }
                worst = std::max({worst, std::abs(r.real()), std::abs(r.imag())});
            }
        }
    }
    // Coupling equations themselves.
    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
        const auto& pt = state.ports[ci];
        const auto ip = positive_sequence_of(pt.i_abc);
        const auto vd = distribute_voltage(pt.v_poi);
        worst = std::max({worst, std::abs(ip.re - pt.i_pos.re), std::abs(ip.im - pt.i_pos.im)});
        for (int ph = 0; ph < 3; ++ph) {
            worst = std::max({worst, std::abs(vd[static_cast<std::size_t>(ph)].re - pt.v_abc[static_cast<std::size_t>(ph)].re),
                              std::abs(vd[static_cast<std::size_t>(ph)].im - pt.v_abc[static_cast<std::size_t>(ph)].im)});
        }
        // Boundary source equals the state at the bus.
        const auto& dsub = c.subnetworks[static_cast<std::size_t>(c.net_index(c.couplings[ci].d_net))];
        const auto& v = state.voltages[static_cast<std::size_t>(c.net_index(c.couplings[ci].d_net))];
        const int bus = dsub.node_index(c.couplings[ci].d_bus);
        for (int ph = 0; ph < dsub.phases(); ++ph) {
            const Complex d = v[dsub.yidx(bus, ph)] - pt.v_abc[static_cast<std::size_t>(ph)].to_complex();
            worst = std::max({worst, std::abs(d.real()), std::abs(d.imag())});
        }
    }
    return worst;
}

}  // namespace gridtear
