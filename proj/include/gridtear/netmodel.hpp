#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridtear/devices.hpp"
#include "gridtear/types.hpp"

namespace gridtear {

using SparseComplex = Eigen::SparseMatrix<Complex>;
using SparseReal = Eigen::SparseMatrix<double>;

struct Node {
    std::string id;
    NodeKind kind = NodeKind::Injection;
    /// Constant-PQ consumption per phase (empty means zero load).
    std::vector<ComplexPair> load;
    /// Slack voltage setpoint per phase (slack nodes only).
    std::vector<ComplexPair> voltage;
};

/// Pi-model branch. Matrices are |phases| x |phases| complex admittances in
/// per-unit (1x1 for positive sequence, 3x3 symmetric for three-phase).
struct Branch {
    std::string from;
    std::string to;
    Eigen::MatrixXcd series;
    Eigen::MatrixXcd shunt_from;  ///< shunt-to-ground block at the from end
    Eigen::MatrixXcd shunt_to;
};

class SubNetwork {
public:
    std::string id;
    PhaseDomain domain = PhaseDomain::PositiveSequence;
    std::vector<Node> nodes;
    std::vector<Branch> branches;
    std::vector<MeasurementDevice> devices;

    [[nodiscard]] int phases() const { return phase_count(domain); }
    [[nodiscard]] int node_count() const { return static_cast<int>(nodes.size()); }
    /// Dimension of the nodal admittance system, |nodes| * |phases|.
    [[nodiscard]] int dim() const { return node_count() * phases(); }

    [[nodiscard]] int node_index(const std::string& node_id) const;
    [[nodiscard]] bool has_node(const std::string& node_id) const;
    [[nodiscard]] int branch_index(const std::string& from, const std::string& to) const;

    /// Row/column of (node, phase) in the admittance system.
    [[nodiscard]] int yidx(int node, int phase) const { return node * phases() + phase; }

    /// Cached nodal admittance; built by finalize().
    [[nodiscard]] const SparseComplex& admittance() const { return y_; }

    /// Rebuild node index and admittance. Call after any structural edit.
    void finalize();

    /// Install an explicit admittance instead of stamping branches (tests
    /// exercising degenerate topologies the stamper rejects).
    void finalize_with_admittance(SparseComplex y);

private:
    std::map<std::string, int> index_;
    SparseComplex y_;
};

struct Coupling {
    std::string t_net;
    std::string t_node;
    std::string d_net;
    std::string d_bus;
};

struct CombinedCase {
    std::vector<SubNetwork> subnetworks;
    std::vector<Coupling> couplings;

    [[nodiscard]] int net_index(const std::string& net_id) const;
    /// Couplings touching the given sub-network, as indices into `couplings`.
    [[nodiscard]] std::vector<int> ports_of(int net) const;
    /// Total voltage state dimension (2 * sum of sub-network dims).
    [[nodiscard]] int state_dim() const;
};

/// Parse and fully validate a JSON case file. Throws ParseError on schema
/// violations (naming field and location) and ValidationError on dangling
/// references or structural problems.
CombinedCase parse_case(const std::string& path);
CombinedCase parse_case_text(const std::string& text, const std::string& origin = "<memory>");
std::string case_to_json(const CombinedCase& c);

/// Structural validation shared by the parser and programmatic construction.
void validate_case(const CombinedCase& c);

/// Nodal admittance by branch stamping: Y[i][i] accumulates incident series +
/// shunt blocks, Y[i][j] = -series(i,j). Throws NumericError on an isolated
/// node (structurally singular row).
SparseComplex assemble_admittance(const SubNetwork& sub);

struct ObservabilityReport {
    bool observable = false;
    int deficiency = 0;  ///< unpivoted columns in the constraint Jacobian
    int rank = 0;
    int columns = 0;
};

struct DecompositionRatio {
    std::string net;
    int internal_states = 0;
    int external_states = 0;           ///< 0 when the net has no couplings
    std::optional<double> ratio;       ///< absent when external_states == 0
};

/// dim(X_int)/dim(X_ext) per sub-network: internal = voltage states of nodes
/// the sub-problem owns, external = 2 per coupling on the transmission side
/// and 6 per coupling on the distribution side.
std::vector<DecompositionRatio> decomposition_ratio(const CombinedCase& c);

// ---------------------------------------------------------------------------
// Combined power flow (truth manufacturing)
// ---------------------------------------------------------------------------

struct PowerFlowOptions {
    double tol = 1e-10;        ///< KCL residual infinity-norm, per-unit
    int max_iters = 50;        ///< Newton iterations per sub-network solve
    double port_tol = 1e-11;   ///< epoch convergence on coupling variables
    int max_epochs = 200;
    double step_clip = 0.5;    ///< per-component Newton step safeguard
    bool parallel = true;      ///< OpenMP over sub-networks within an epoch
};

struct PortFlowState {
    ComplexPair v_poi;                  ///< transmission POI voltage
    ComplexPair i_pos;                  ///< positive-sequence current drawn by the feeder
    std::array<ComplexPair, 3> v_abc{};  ///< distribution boundary source voltages
    std::array<ComplexPair, 3> i_abc{};  ///< currents delivered into the feeder
};

struct PowerFlowResult {
    /// Complex voltage per sub-network, indexed by SubNetwork::yidx.
    std::vector<Eigen::VectorXcd> voltages;
    std::vector<PortFlowState> ports;
    int epochs = 0;
    std::vector<double> port_delta_history;

    [[nodiscard]] const Eigen::VectorXcd& of(const CombinedCase& c, const std::string& net) const {
        return voltages[static_cast<std::size_t>(c.net_index(net))];
    }
};

/// Newton solve of the nodal equations per sub-network with the same
/// Gauss-Seidel epoch structure as estimation: PQ loads held, slack rows
/// replaced by voltage-fixing rows, coupling ports exchanged per epoch.
/// Throws ConvergenceError with the residual history on divergence.
PowerFlowResult combined_power_flow(const CombinedCase& c, const PowerFlowOptions& opts = {});

/// Infinity-norm of all KCL residuals (including port coupling equations)
/// for a candidate state; the power-flow acceptance check.
double kcl_residual_inf(const CombinedCase& c, const PowerFlowResult& state);

/// Flat-start voltage profile: 1 at angle 0 for positive sequence;
/// unit magnitude at 0, -120, +120 degrees for three-phase.
Eigen::VectorXcd flat_start(const SubNetwork& sub);

}  // namespace gridtear
