#include "gridtear/estcore.hpp"

#include <algorithm>
#include <cmath>

namespace gridtear {

// ---------------------------------------------------------------------------
// EstimationProblem
// ---------------------------------------------------------------------------

void EstimationProblem::seal(int n_soft) {
    n_soft_ = n_soft;
    const int nr = n_rows();
    const int nc = n_core();

    soft_index_.assign(static_cast<std::size_t>(nr), -1);
    int s = 0;
    for (int r = 0; r < nr; ++r) {
        if (weights[r] > 0.0) soft_index_[static_cast<std::size_t>(r)] = s++;
    }
    if (s != n_soft_) throw ValidationError("soft row count mismatch during assembly");

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(A.nonZeros()) + static_cast<std::size_t>(2 * n_soft_));
    for (int c = 0; c < A.outerSize(); ++c) {
        for (SparseReal::InnerIterator it(A, c); it; ++it) {
            trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        }
    }
    for (int r = 0; r < nr; ++r) {
        const int so = soft_index_[static_cast<std::size_t>(r)];
        if (so < 0) continue;
        if (mode == EstMode::Wlav) {
            trips.emplace_back(r, nc + so, 1.0);
            trips.emplace_back(r, nc + n_soft_ + so, -1.0);
        } else {
            trips.emplace_back(r, nc + so, 1.0);
        }
    }
    g_full_.resize(nr, x_size());
    g_full_.setFromTriplets(trips.begin(), trips.end());
    g_full_.makeCompressed();

    // No all-zero equality row may survive assembly.
    for (int r = 0; r < nr; ++r) {
        bool any = soft_index_[static_cast<std::size_t>(r)] >= 0;
        if (!any) {
            for (int c = 0; c < A.outerSize() && !any; ++c) {
                for (SparseReal::InnerIterator it(A, c); it; ++it) {
                    if (it.row() == r && it.value() != 0.0) {
                        any = true;
                        break;
                    }
                }
            }
            for (int c = 0; c < A_ext.outerSize() && !any; ++c) {
                for (SparseReal::InnerIterator it(A_ext, c); it; ++it) {
                    if (it.row() == r && it.value() != 0.0) {
                        any = true;
                        break;
                    }
                }
            }
        }
        if (!any) {
            throw ValidationError("assembled problem has an all-zero equality row (" +
                                  row_meta[static_cast<std::size_t>(r)].label + ")");
        }
    }
}

EstimationProblem::EtaRef EstimationProblem::eta_of_row(int row) const {
    const int so = soft_index_[static_cast<std::size_t>(row)];
    if (so < 0) return {};
    if (mode == EstMode::Wlav) return {n_core() + so, n_core() + n_soft_ + so};
    return {n_core() + so, -1};
}

Eigen::VectorXd EstimationProblem::constraint_values(const Eigen::VectorXd& x) const {
    return g_full_ * x + rhs();
}

Eigen::VectorXd EstimationProblem::objective_gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x_size());
    g.head(n_core()) = linear_cost;
    for (int r = 0; r < n_rows(); ++r) {
        const auto ref = eta_of_row(r);
        if (ref.plus < 0) continue;
        if (mode == EstMode::Wlav) {
            g[ref.plus] += weights[r];
            g[ref.minus] += weights[r];
        } else {
            g[ref.plus] += 2.0 * weights[r] * x[ref.plus];
        }
    }
    return g;
}

double EstimationProblem::measurement_objective(const Eigen::VectorXd& x) const {
    double obj = 0.0;
    for (int r = 0; r < n_rows(); ++r) {
        const auto ref = eta_of_row(r);
        if (ref.plus < 0) continue;
        if (mode == EstMode::Wlav) {
            obj += weights[r] * (x[ref.plus] + x[ref.minus]);
        } else {
            obj += weights[r] * x[ref.plus] * x[ref.plus];
        }
    }
    return obj;
}

double EstimationProblem::objective_value(const Eigen::VectorXd& x) const {
    return measurement_objective(x) + linear_cost.dot(x.head(n_core()));
}

void EstimationProblem::set_external_values(const Eigen::VectorXd& ext) {
    if (ext.size() != A_ext.cols()) {
        throw ValidationError("external value vector has wrong dimension");
    }
    ext_values = ext;
}

void EstimationProblem::set_external(const std::vector<CouplingPort>& port_values) {
    linear_cost.setZero();
    for (const auto& pp : ports) {
        const auto& port = port_values[static_cast<std::size_t>(pp.case_index)];
        if (pp.t_side) {
            ext_values[pp.ext0] = port.i_pos.re;
            ext_values[pp.ext0 + 1] = port.i_pos.im;
            const ComplexPair q = port.dual_voltage_cost();
            linear_cost[pp.poi_var_re] += q.re;
            linear_cost[pp.poi_var_im] += q.im;
        } else {
            for (int ph = 0; ph < 3; ++ph) {
                ext_values[pp.ext0 + 2 * ph] = port.v_abc[static_cast<std::size_t>(ph)].re;
                ext_values[pp.ext0 + 2 * ph + 1] = port.v_abc[static_cast<std::size_t>(ph)].im;
            }
            const auto q = port.dual_current_cost();
            for (int ph = 0; ph < 3; ++ph) {
                linear_cost[pp.jvar0 + 2 * ph] += q[static_cast<std::size_t>(ph)].re;
                linear_cost[pp.jvar0 + 2 * ph + 1] += q[static_cast<std::size_t>(ph)].im;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace {

/// Complex-pair row emission over raw variable indices (port currents,
/// coupling rows); the measurement builders own the voltage-slot variant.
struct CouplingRowPair {
    ConstraintRow re, im;

    void add_slot_pair(Slot sre, Slot sim, Complex coeff) {
        re.add(sre, coeff.real());
        re.add(sim, -coeff.imag());
        im.add(sre, coeff.imag());
        im.add(sim, coeff.real());
    }

    void add_voltage(const StateLayout& l, int net, int node, int phase, Complex coeff) {
        add_slot_pair(l.voltage(net, node, phase, 0), l.voltage(net, node, phase, 1), coeff);
    }

    void add_var_pair(int vre, int vim, Complex coeff) {
        add_slot_pair(Slot{Slot::Var, vre}, Slot{Slot::Var, vim}, coeff);
    }

    void add_ext_pair(int ere, int eim, Complex coeff) {
        add_slot_pair(Slot{Slot::Ext, ere}, Slot{Slot::Ext, eim}, coeff);
    }

    void finish(std::vector<ConstraintRow>& out, const std::string& label, bool port_row,
                int net = 0) {
        re.weight = im.weight = 0.0;
        re.imag = false;
        im.imag = true;
        re.port_row = im.port_row = port_row;
        re.net = im.net = net;
        re.label = im.label = label;
        out.push_back(std::move(re));
        out.push_back(std::move(im));
    }
};

/// KCL terms over an arbitrary layout view.
void add_kcl(CouplingRowPair& rp, const StateLayout& l, const SubNetwork& sub, int net,
             const Eigen::SparseMatrix<Complex, Eigen::RowMajor>& yrow, int node, int phase) {
    const int r = sub.yidx(node, phase);
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(yrow, r); it; ++it) {
        const int col = static_cast<int>(it.col());
        rp.add_voltage(l, net, col / sub.phases(), col % sub.phases(), it.value());
    }
}

EstimationProblem finish_assembly(StateLayout layout, std::vector<ConstraintRow> rows,
                                  EstMode mode, std::vector<ProblemPort> ports,
                                  std::string net_id, const AssembleOptions& opts) {
    if (opts.check_observability) {
        const auto rep = check_observability(layout, rows);
        if (!rep.observable) {
            throw ValidationError("problem for '" + net_id + "' is unobservable: rank deficiency " +
                                  std::to_string(rep.deficiency) + " of " +
                                  std::to_string(rep.columns) + " columns");
        }
    }

    EstimationProblem p;
    p.mode = mode;
    p.layout = std::move(layout);
    p.ports = std::move(ports);
    p.net_id = std::move(net_id);

    const int nr = static_cast<int>(rows.size());
    p.b0.resize(nr);
    p.weights.resize(nr);
    p.row_meta.resize(static_cast<std::size_t>(nr));
    std::vector<Eigen::Triplet<double>> ta, te;
    int n_soft = 0;
    for (int r = 0; r < nr; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        p.b0[r] = row.constant;
        p.weights[r] = row.weight;
        if (row.weight > 0.0) ++n_soft;
        for (const auto& [slot, coeff] : row.terms) {
            if (slot.kind == Slot::Var) {
                ta.emplace_back(r, slot.idx, coeff);
            } else {
                te.emplace_back(r, slot.idx, coeff);
            }
        }
        ResidualEntry& m = p.row_meta[static_cast<std::size_t>(r)];
        m.row = r;
        m.device = row.device;
        m.net = row.net;
        m.phase = row.phase;
        m.imag = row.imag;
        m.label = row.label;
        m.weight = row.weight;
    }
    p.A.resize(nr, p.layout.num_vars());
    p.A.setFromTriplets(ta.begin(), ta.end());
    p.A.makeCompressed();
    p.A_ext.resize(nr, p.layout.num_ext());
    p.A_ext.setFromTriplets(te.begin(), te.end());
    p.A_ext.makeCompressed();
    p.ext_values = Eigen::VectorXd::Zero(p.layout.num_ext());
    p.linear_cost = Eigen::VectorXd::Zero(p.layout.num_vars());
    p.seal(n_soft);
    return p;
}

}  // namespace

EstimationProblem assemble_standalone(const SubNetwork& sub, EstMode mode,
                                      const AssembleOptions& opts) {
    RowContext ctx(sub, StateLayout::standalone(sub));
    auto rows = measurement_rows(ctx);
    return finish_assembly(ctx.layout, std::move(rows), mode, {}, sub.id, opts);
}

EstimationProblem assemble_subproblem(const CombinedCase& c, int net, EstMode mode,
                                      const std::vector<CouplingPort>& port_values,
                                      const AssembleOptions& opts) {
    const auto& sub = c.subnetworks[static_cast<std::size_t>(net)];
    StateLayout layout = StateLayout::subproblem(c, net);
    RowContext ctx(sub, layout);
    auto rows = measurement_rows(ctx);

    std::vector<ProblemPort> pports;
    for (std::size_t pi = 0; pi < layout.ports().size(); ++pi) {
        const auto& pv = layout.ports()[pi];
        ProblemPort pp;
        pp.case_index = pv.case_index;
        pp.t_side = pv.t_side;
        pp.ext0 = pv.ext0;
        pp.jvar0 = pv.jvar0;
        if (pv.t_side) {
            // POI balance: sum_k Y_mk V_k + I_P = 0 with I_P held external.
            CouplingRowPair rp;
            add_kcl(rp, layout, sub, 0, ctx.yrow, pv.node, 0);
            rp.add_ext_pair(pv.ext0, pv.ext0 + 1, Complex{1.0, 0.0});
            pp.kcl_rows[0] = static_cast<int>(rows.size());
            pp.kcl_rows[1] = static_cast<int>(rows.size()) + 1;
            rp.finish(rows, "poi(" + c.couplings[static_cast<std::size_t>(pv.case_index)].t_node + ")",
                      false);
            pp.poi_var_re = layout.voltage(0, pv.node, 0, 0).idx;
            pp.poi_var_im = layout.voltage(0, pv.node, 0, 1).idx;
        } else {
            // Boundary balance: sum_k Y_bk V_k - j = 0 per phase; the source
            // voltage enters through the external slots of the bus itself.
            for (int ph = 0; ph < sub.phases(); ++ph) {
                CouplingRowPair rp;
                add_kcl(rp, layout, sub, 0, ctx.yrow, pv.node, ph);
                rp.add_var_pair(layout.port_current(static_cast<int>(pi), ph, 0),
                                layout.port_current(static_cast<int>(pi), ph, 1),
                                Complex{-1.0, 0.0});
                pp.kcl_rows[static_cast<std::size_t>(2 * ph)] = static_cast<int>(rows.size());
                pp.kcl_rows[static_cast<std::size_t>(2 * ph + 1)] = static_cast<int>(rows.size()) + 1;
                rp.finish(rows,
                          "port(" + c.couplings[static_cast<std::size_t>(pv.case_index)].d_bus + ")",
                          true);
            }
        }
        pports.push_back(pp);
    }

    auto p = finish_assembly(std::move(layout), std::move(rows), mode, std::move(pports), sub.id,
                             opts);
    p.set_external(port_values);
    return p;
}

EstimationProblem assemble_monolithic(const CombinedCase& c, EstMode mode,
                                      const AssembleOptions& opts) {
    StateLayout layout = StateLayout::monolithic(c);
    std::vector<ConstraintRow> rows;
    std::vector<std::unique_ptr<RowContext>> ctxs;
    for (std::size_t si = 0; si < c.subnetworks.size(); ++si) {
        ctxs.push_back(std::make_unique<RowContext>(c.subnetworks[si], layout, static_cast<int>(si)));
        auto sub_rows = measurement_rows(*ctxs.back());
        rows.insert(rows.end(), std::make_move_iterator(sub_rows.begin()),
                    std::make_move_iterator(sub_rows.end()));
    }

    std::vector<ProblemPort> pports;
    for (std::size_t ci = 0; ci < c.couplings.size(); ++ci) {
        const auto& cp = c.couplings[ci];
        const auto& pv = layout.ports()[ci];
        const int tn = c.net_index(cp.t_net);
        const int dn = c.net_index(cp.d_net);
        const auto& tsub = c.subnetworks[static_cast<std::size_t>(tn)];
        const auto& dsub = c.subnetworks[static_cast<std::size_t>(dn)];
        const int m = tsub.node_index(cp.t_node);
        const int bus = dsub.node_index(cp.d_bus);

        ProblemPort pp;
        pp.case_index = static_cast<int>(ci);
        pp.jvar0 = pv.jvar0;
        pp.poi_var_re = layout.voltage(tn, m, 0, 0).idx;
        pp.poi_var_im = layout.voltage(tn, m, 0, 1).idx;

        // Boundary balance rows define the port currents.
        for (int ph = 0; ph < 3; ++ph) {
            CouplingRowPair rp;
            add_kcl(rp, layout, dsub, dn, ctxs[static_cast<std::size_t>(dn)]->yrow, bus, ph);
            rp.add_var_pair(pv.jvar0 + 2 * ph, pv.jvar0 + 2 * ph + 1, Complex{-1.0, 0.0});
            pp.kcl_rows[static_cast<std::size_t>(2 * ph)] = static_cast<int>(rows.size());
            pp.kcl_rows[static_cast<std::size_t>(2 * ph + 1)] = static_cast<int>(rows.size()) + 1;
            rp.finish(rows, "port(" + cp.d_bus + ")", true, dn);
        }
        // POI balance with the positive-sequence image of the port current.
        {
            CouplingRowPair rp;
            add_kcl(rp, layout, tsub, tn, ctxs[static_cast<std::size_t>(tn)]->yrow, m, 0);
            const double third = 1.0 / 3.0;
            rp.add_var_pair(pv.jvar0 + 0, pv.jvar0 + 1, Complex{third, 0.0});
            rp.add_var_pair(pv.jvar0 + 2, pv.jvar0 + 3,
                            third * std::polar(1.0, kSeqAngle));
            rp.add_var_pair(pv.jvar0 + 4, pv.jvar0 + 5,
                            third * std::polar(1.0, -kSeqAngle));
            rp.finish(rows, "poi(" + cp.t_node + ")", true, tn);
        }
        // Voltage mirror: V_bus = rotation family of V_POI.
        for (int ph = 0; ph < 3; ++ph) {
            static const double angles[3] = {0.0, -kSeqAngle, kSeqAngle};
            CouplingRowPair rp;
            rp.add_voltage(layout, dn, bus, ph, Complex{1.0, 0.0});
            rp.add_voltage(layout, tn, m, 0, -std::polar(1.0, angles[ph]));
            rp.finish(rows, "mirror(" + cp.d_bus + ")", true, dn);
        }
        pports.push_back(pp);
    }

    return finish_assembly(std::move(layout), std::move(rows), mode, std::move(pports),
                           "monolithic", opts);
}

}  // namespace gridtear
