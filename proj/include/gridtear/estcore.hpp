#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gridtear/layout.hpp"
#include "gridtear/measmodel.hpp"
#include "gridtear/supervisory.hpp"

namespace gridtear {

enum class EstMode { Wlav, Wls };

struct SolverConfig {
    double eps_kkt = 1e-8;        ///< termination on the max KKT residual
    int max_iters = 200;
    double eps0 = 0.1;            ///< initial barrier perturbation
    double barrier_shrink = 0.2;  ///< multiplicative barrier schedule
    double barrier_trigger = 10.0;  ///< shrink when r_p, r_d <= trigger * eps
    double tau = 0.995;           ///< fraction-to-boundary factor
    double v_clip = 0.1;          ///< per-component voltage step limit, pu
    double reg = 1e-10;           ///< (1,1)-block diagonal regularization
    double eta_init = 0.1;
    /// Barrier floor; <= 0 means the default 0.01 * eps_kkt. The supervisory
    /// loop raises it on early epochs so the epoch map stays smooth, then
    /// lowers it to the default as the ports converge (barrier continuation).
    double eps_floor = -1.0;

    [[nodiscard]] double floor_value() const {
        return eps_floor > 0.0 ? eps_floor : 0.01 * eps_kkt;
    }
};

struct KktResidual {
    double primal = 0.0;  ///< ||g(X)||_inf
    double dual = 0.0;    ///< ||grad f + grad g' lambda - mu||_inf
    double comp = 0.0;    ///< ||mu .* (X - lb) - eps||_inf over bounded entries

    [[nodiscard]] double max() const { return std::max({primal, dual, comp}); }
};

struct SolverState {
    Eigen::VectorXd x;       ///< [core vars | eta+ | eta-] (WLAV) or [core | eta] (WLS)
    Eigen::VectorXd lambda;  ///< equality duals, one per row
    Eigen::VectorXd mu;      ///< bound duals; zero on unbounded components
    double eps = 0.1;
    int iterations = 0;
};

struct NewtonStep {
    Eigen::VectorXd dx;
    Eigen::VectorXd dlambda;
    Eigen::VectorXd dmu;
};

struct ResidualEntry {
    int row = -1;      ///< real-row index in the assembled problem
    int device = -1;   ///< device index within the host sub-network
    int net = 0;
    int phase = 0;
    bool imag = false;
    std::string label;
    double weight = 0.0;
    double eta = 0.0;      ///< signed residual
    double eta_abs = 0.0;  ///< plus + minus (WLAV) or |eta| (WLS)
};

struct Estimate {
    /// Complex voltage per net/node/phase; external boundary values are
    /// filled from the port assignment so the vector is always complete.
    std::vector<std::vector<ComplexPair>> voltages;
    std::vector<ResidualEntry> residuals;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> kkt_history;
    double max_eta_product = 0.0;  ///< complementarity diagnostic: max eta+ * eta-
    EstMode mode = EstMode::Wlav;
};

/// Port bookkeeping inside an assembled problem.
struct ProblemPort {
    int case_index = -1;
    bool t_side = false;
    int ext0 = -1;                    ///< external slots (2 T-side, 6 D-side)
    int jvar0 = -1;                   ///< port-current variables (D-side, monolithic)
    std::array<int, 6> kcl_rows{};    ///< port/POI balance rows (2 used on T side)
    int poi_var_re = -1, poi_var_im = -1;  ///< V_P variables (T-side, monolithic)
};

/// Assembled sub-problem: affine equality rows A*x + A_ext*ext + b0 (+ eta
/// terms) = 0 with a linear WLAV objective (or quadratic WLS objective) over
/// split (or unsplit) noise columns.
class EstimationProblem {
public:
    EstMode mode = EstMode::Wlav;
    StateLayout layout;
    SparseReal A;      ///< rows x num_vars, coefficients of solved variables
    SparseReal A_ext;  ///< rows x num_ext, coefficients of external values
    Eigen::VectorXd b0;
    Eigen::VectorXd ext_values;
    Eigen::VectorXd weights;      ///< per row; 0 marks a hard row
    Eigen::VectorXd linear_cost;  ///< over core vars (port dual mirrors)
    std::vector<ProblemPort> ports;
    std::vector<ResidualEntry> row_meta;
    std::string net_id;

    [[nodiscard]] int n_rows() const { return static_cast<int>(A.rows()); }
    [[nodiscard]] int n_core() const { return static_cast<int>(A.cols()); }
    [[nodiscard]] int n_soft() const { return n_soft_; }
    /// Total solver state size for the current mode.
    [[nodiscard]] int x_size() const {
        return n_core() + (mode == EstMode::Wlav ? 2 : 1) * n_soft_;
    }
    /// First bounded component (eta block start in WLAV mode).
    [[nodiscard]] int bound_begin() const { return n_core(); }
    [[nodiscard]] int bound_count() const { return mode == EstMode::Wlav ? 2 * n_soft_ : 0; }

    [[nodiscard]] Eigen::VectorXd rhs() const {
        return A_ext.cols() > 0 ? Eigen::VectorXd(b0 + A_ext * ext_values) : b0;
    }

    /// Equality residual g(x) for a full solver state vector.
    [[nodiscard]] Eigen::VectorXd constraint_values(const Eigen::VectorXd& x) const;

    /// Objective gradient (includes linear port mirrors; excludes barrier).
    [[nodiscard]] Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const;
    [[nodiscard]] double objective_value(const Eigen::VectorXd& x) const;
    /// Reported objective: sum w*(eta+ + eta-) or sum w*eta^2, mirrors excluded.
    [[nodiscard]] double measurement_objective(const Eigen::VectorXd& x) const;

    /// Full constraint matrix [A | eta columns] for the current mode.
    [[nodiscard]] const SparseReal& full_matrix() const { return g_full_; }

    /// Refresh external values and dual-mirror costs from the port set.
    void set_external(const std::vector<CouplingPort>& port_values);
    /// Raw external assignment (tests).
    void set_external_values(const Eigen::VectorXd& ext);

    /// Map a soft row to its eta variable indices; minus < 0 in WLS mode.
    struct EtaRef {
        int plus = -1;
        int minus = -1;
    };
    [[nodiscard]] EtaRef eta_of_row(int row) const;

    void seal(int n_soft);  ///< build derived structures after assembly

private:
    int n_soft_ = 0;
    std::vector<int> soft_index_;  // row -> soft ordinal or -1
    SparseReal g_full_;
};

struct AssembleOptions {
    bool check_observability = true;
};

/// Sub-problem of one sub-network inside a case: boundary states moved into
/// row constants (distribution side) or port-current constants (transmission
/// side) per the current port values. Throws ValidationError with the
/// deficiency count when the view is unobservable.
EstimationProblem assemble_subproblem(const CombinedCase& c, int net, EstMode mode,
                                      const std::vector<CouplingPort>& ports,
                                      const AssembleOptions& opts = {});

/// Standalone network with no couplings (unit tests, single-net cases).
EstimationProblem assemble_standalone(const SubNetwork& sub, EstMode mode,
                                      const AssembleOptions& opts = {});

/// Whole case as one problem with the coupling equations as hard constraints.
EstimationProblem assemble_monolithic(const CombinedCase& c, EstMode mode,
                                      const AssembleOptions& opts = {});

/// Flat-start interior initialization: eta+ = eta- = 0.1, mu = eps0/0.1,
/// lambda = 0, so the complementarity residual starts at zero.
SolverState initialize(const EstimationProblem& p, const SolverConfig& cfg = {});

/// Warm start from a previous epoch's state: keeps x and lambda, floors the
/// eta block away from the boundary and resets mu consistent with eps.
SolverState warm_state(const EstimationProblem& p, const SolverState& prev, double eps);

KktResidual kkt_residual(const EstimationProblem& p, const SolverState& s);

/// One Newton step on the symmetrized perturbed-KKT system. For WLAV the
/// (1,1) block carries barrier curvature only, plus the configured
/// regularization. Throws NumericError on factorization failure.
NewtonStep newton_kkt_step(const EstimationProblem& p, const SolverState& s,
                           const SolverConfig& cfg = {});

/// Physics-based variable limiting: per-component voltage step clip and
/// per-variable fraction-to-boundary damping on eta and mu.
NewtonStep apply_limiting(const EstimationProblem& p, const SolverState& s, NewtonStep step,
                          const SolverConfig& cfg = {});

/// Primal-dual interior-point loop with the monotone barrier schedule.
Estimate pdip_solve(const EstimationProblem& p, const SolverConfig& cfg = {},
                    const SolverState* warm = nullptr, SolverState* final_state = nullptr);

}  // namespace gridtear
