#include "gridtear/layout.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseQR>

namespace gridtear {

namespace {

struct NetRole {
    const SubNetwork* sub;
    std::vector<int> ext_boundary_nodes;  // d-side boundary buses (voltage external)
};

}  // namespace

StateLayout StateLayout::standalone(const SubNetwork& sub) {
    StateLayout l;
    l.offsets_ = {0};
    l.phases_ = {sub.phases()};
    const int n = 2 * sub.dim();
    l.vslots_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) l.vslots_[static_cast<std::size_t>(i)] = Slot{Slot::Var, i};
    l.n_vars_ = n;
    l.n_voltage_vars_ = n;
    l.n_ext_ = 0;
    return l;
}

StateLayout StateLayout::subproblem(const CombinedCase& c, int net) {
    const auto& sub = c.subnetworks[static_cast<std::size_t>(net)];
    const bool is_t = sub.domain == PhaseDomain::PositiveSequence;

    StateLayout l;
    l.offsets_ = {0};
    l.phases_ = {sub.phases()};
    l.vslots_.assign(static_cast<std::size_t>(2 * sub.dim()), Slot{});

    // Gather this net's ports in case order.
    std::vector<PortView> ports;
    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
        const auto& cp = c.couplings[ci];
        if (is_t && cp.t_net == sub.id) {
            PortView pv;
            pv.case_index = static_cast<int>(ci);
            pv.t_side = true;
            pv.node = sub.node_index(cp.t_node);
            ports.push_back(pv);
        } else if (!is_t && cp.d_net == sub.id) {
            PortView pv;
            pv.case_index = static_cast<int>(ci);
            pv.t_side = false;
            pv.node = sub.node_index(cp.d_bus);
            ports.push_back(pv);
        }
    }

    std::vector<bool> externalized(static_cast<std::size_t>(sub.node_count()), false);
    if (!is_t) {
        for (const auto& pv : ports) externalized[static_cast<std::size_t>(pv.node)] = true;
    }

    int var = 0;
    for (int node = 0; node < sub.node_count(); ++node) {
        if (externalized[static_cast<std::size_t>(node)]) continue;
        for (int ph = 0; ph < sub.phases(); ++ph) {
            for (int comp = 0; comp < 2; ++comp) {
                l.vslots_[static_cast<std::size_t>(2 * sub.yidx(node, ph) + comp)] = Slot{Slot::Var, var++};
            }
        }
    }
    l.n_voltage_vars_ = var;

    int ext = 0;
    for (auto& pv : ports) {
        if (pv.t_side) {
            pv.ext0 = ext;  // (I_P.re, I_P.im)
            ext += 2;
        } else {
            pv.ext0 = ext;  // boundary voltage, phase-major re/im
            for (int ph = 0; ph < sub.phases(); ++ph) {
                for (int comp = 0; comp < 2; ++comp) {
                    l.vslots_[static_cast<std::size_t>(2 * sub.yidx(pv.node, ph) + comp)] =
                        Slot{Slot::Ext, ext++};
                }
            }
            pv.jvar0 = var;
            var += 2 * sub.phases();
        }
    }
    l.ports_ = std::move(ports);
    l.n_vars_ = var;
    l.n_ext_ = ext;
    return l;
}

StateLayout StateLayout::monolithic(const CombinedCase& c) {
    StateLayout l;
    int off = 0, var = 0;
    for (const auto& sub : c.subnetworks) {
        l.offsets_.push_back(off);
        l.phases_.push_back(sub.phases());
        for (int i = 0; i < 2 * sub.dim(); ++i) {
            l.vslots_.push_back(Slot{Slot::Var, var++});
        }
        off += 2 * sub.dim();
    }
    l.n_voltage_vars_ = var;
    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
        const auto& cp = c.couplings[ci];
        PortView pv;
        pv.case_index = static_cast<int>(ci);
        pv.t_side = false;  // monolithic view owns both sides
        pv.local_net = c.net_index(cp.d_net);
        pv.node = c.subnetworks[static_cast<std::size_t>(pv.local_net)].node_index(cp.d_bus);
        pv.jvar0 = var;
        var += 6;
        l.ports_.push_back(pv);
    }
    l.n_vars_ = var;
    l.n_ext_ = 0;
    return l;
}

bool StateLayout::voltage_of_var(int var, VoltageRef& out) const {
    if (var >= n_voltage_vars_) return false;
    for (int net = 0; net < net_count(); ++net) {
        const int lo = offsets_[static_cast<std::size_t>(net)];
        const int hi = net + 1 < net_count() ? offsets_[static_cast<std::size_t>(net + 1)]
                                             : static_cast<int>(vslots_.size());
        for (int i = lo; i < hi; ++i) {
            const Slot s = vslots_[static_cast<std::size_t>(i)];
            if (s.kind == Slot::Var && s.idx == var) {
                const int local = i - lo;
                const int p = phases_[static_cast<std::size_t>(net)];
                out.net = net;
                out.comp = local % 2;
                out.phase = (local / 2) % p;
                out.node = local / (2 * p);
                return true;
            }
        }
    }
    return false;
}

double eval_row(const ConstraintRow& row, const Eigen::VectorXd& vars,
                const Eigen::VectorXd& ext) {
    double v = row.constant;
    for (const auto& [slot, coeff] : row.terms) {
        v += coeff * (slot.kind == Slot::Var ? vars[slot.idx] : ext[slot.idx]);
    }
    return v;
}

ObservabilityReport check_observability(const StateLayout& layout,
                                        const std::vector<ConstraintRow>& rows) {
    ObservabilityReport rep;
    rep.columns = layout.num_vars();

    // All equality rows contribute their variable coefficients; port balance
    // rows carry rank through their own port-current columns.
    std::vector<Eigen::Triplet<double>> trips;
    int r = 0;
    for (const auto& row : rows) {
        for (const auto& [slot, coeff] : row.terms) {
            if (slot.kind == Slot::Var) trips.emplace_back(r, slot.idx, coeff);
        }
        ++r;
    }
    if (r == 0 || rep.columns == 0) {
        rep.rank = 0;
        rep.deficiency = rep.columns;
        rep.observable = rep.columns == 0;
        return rep;
    }

    SparseReal jac(r, rep.columns);
    jac.setFromTriplets(trips.begin(), trips.end());
    jac.makeCompressed();

    Eigen::SparseQR<SparseReal, Eigen::COLAMDOrdering<int>> qr;
    qr.setPivotThreshold(1e-8);
    qr.compute(jac);
    rep.rank = static_cast<int>(qr.rank());
    rep.deficiency = rep.columns - rep.rank;
    rep.observable = rep.deficiency == 0;
    return rep;
}

}  // namespace gridtear
