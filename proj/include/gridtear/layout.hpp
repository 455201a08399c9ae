#pragma once

#include <array>
#include <string>
#include <vector>

#include "gridtear/netmodel.hpp"

namespace gridtear {

/// Address of one scalar in an estimation problem: either a solved variable
/// or an external (boundary) value held fixed during an epoch.
struct Slot {
    enum Kind { Var, Ext };
    Kind kind = Var;
    int idx = -1;

    friend bool operator==(const Slot&, const Slot&) = default;
};

/// Which couplings a layout view knows about and on which side.
struct PortView {
    int case_index = -1;  ///< index into CombinedCase::couplings
    bool t_side = false;  ///< true when this view owns the transmission POI
    int local_net = 0;    ///< net index within the view
    int node = -1;        ///< POI node (t_side) or boundary bus (d_side), local index
    int ext0 = -1;        ///< first external slot (2 for t_side I_P, 6 for d_side v_abc)
    int jvar0 = -1;       ///< first port-current variable (d_side and monolithic views)
};

/// Index map from (net, node, phase, re/im) to packed variable/external slots.
/// Three views exist: one transmission sub-problem (all voltages variable,
/// port currents external), one distribution sub-problem (boundary voltages
/// external, port currents variable), and the monolithic whole-case problem.
class StateLayout {
public:
    /// Sub-problem view of `net` within the case.
    static StateLayout subproblem(const CombinedCase& c, int net);
    /// Whole-case view with explicit port-current variables and no externals.
    static StateLayout monolithic(const CombinedCase& c);
    /// Degenerate view of a standalone network (no couplings).
    static StateLayout standalone(const SubNetwork& sub);

    [[nodiscard]] Slot voltage(int net, int node, int phase, int comp) const {
        return vslots_[static_cast<std::size_t>(offsets_[static_cast<std::size_t>(net)] +
                                                2 * (node * phases_[static_cast<std::size_t>(net)] + phase) + comp)];
    }
    [[nodiscard]] int port_current(int port_pos, int phase, int comp) const {
        return ports_[static_cast<std::size_t>(port_pos)].jvar0 + 2 * phase + comp;
    }

    [[nodiscard]] int num_vars() const { return n_vars_; }
    [[nodiscard]] int num_ext() const { return n_ext_; }
    [[nodiscard]] int num_voltage_vars() const { return n_voltage_vars_; }
    [[nodiscard]] bool var_is_voltage(int i) const { return i < n_voltage_vars_; }
    [[nodiscard]] int net_count() const { return static_cast<int>(offsets_.size()); }
    [[nodiscard]] const std::vector<PortView>& ports() const { return ports_; }
    [[nodiscard]] int net_phases(int net) const { return phases_[static_cast<std::size_t>(net)]; }
    [[nodiscard]] int net_nodes(int net) const {
        const int lo = offsets_[static_cast<std::size_t>(net)];
        const int hi = net + 1 < net_count() ? offsets_[static_cast<std::size_t>(net + 1)]
                                             : static_cast<int>(vslots_.size());
        return (hi - lo) / (2 * net_phases(net));
    }

    /// Reverse map for a voltage variable; returns false for port currents.
    struct VoltageRef {
        int net, node, phase, comp;
    };
    [[nodiscard]] bool voltage_of_var(int var, VoltageRef& out) const;

private:
    std::vector<int> offsets_;  // per net, into vslots_
    std::vector<int> phases_;
    std::vector<Slot> vslots_;
    std::vector<PortView> ports_;
    int n_vars_ = 0;
    int n_ext_ = 0;
    int n_voltage_vars_ = 0;
};

/// One affine equality row: sum(coeff * slot) + constant (+ eta pair) = 0.
/// weight > 0 marks a soft row carrying split noise variables with that
/// objective weight; weight == 0 marks a hard constraint.
struct ConstraintRow {
    std::vector<std::pair<Slot, double>> terms;
    double constant = 0.0;
    double weight = 0.0;
    int device = -1;  ///< index into the host sub-network's device list, -1 for ZI/port rows
    int net = 0;      ///< host net index within the layout view
    int phase = 0;
    bool imag = false;
    bool port_row = false;  ///< contains port-current unknowns
    std::string label;

    void add(Slot s, double c) {
        if (c != 0.0) terms.emplace_back(s, c);
    }
};

/// Evaluate a row's affine part against variable/external value vectors.
double eval_row(const ConstraintRow& row, const Eigen::VectorXd& vars,
                const Eigen::VectorXd& ext);

/// Full-column-rank check of the equality-constraint Jacobian with respect to
/// the solved (non-noise) unknowns, boundary states treated as known. Rank by
/// sparse QR with pivot threshold 1e-8. Diagnostic only; never throws.
ObservabilityReport check_observability(const StateLayout& layout,
                                        const std::vector<ConstraintRow>& rows);

}  // namespace gridtear
