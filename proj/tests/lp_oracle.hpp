#pragma once

// Test-only independent oracle: a dense two-phase simplex solver for
// min c'z s.t. Az = b, z >= 0, plus a converter from an assembled
// estimation problem. Deliberately shares no code with the interior-point
// path it checks.

#include <Eigen/Dense>
#include <optional>

#include "gridtear/estcore.hpp"

namespace gridtear::testing {

struct LpSolution {
    bool feasible = false;
    bool bounded = true;
    double objective = 0.0;
    Eigen::VectorXd z;
};

/// Two-phase primal simplex with Bland's rule.
LpSolution solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c);

/// WLAV problem as a standard-form LP: free variables split into +/- parts,
/// one eta pair per soft row. Requires a zero linear-cost vector (no port
/// mirrors). Returns the optimal objective and, optionally, the recovered
/// core variable values.
struct WlavLpResult {
    double objective = 0.0;
    Eigen::VectorXd core;                 // recovered core variables
    Eigen::VectorXd eta_signed;           // per soft row
};
WlavLpResult wlav_lp_oracle(const EstimationProblem& p);

}  // namespace gridtear::testing
