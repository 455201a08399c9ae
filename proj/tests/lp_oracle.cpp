#include "lp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gridtear::testing {

namespace {

constexpr double kTol = 1e-9;

/// Simplex on the tableau [A | b] with basis tracking and Bland's rule.
struct Tableau {
    Eigen::MatrixXd t;        // m x (n + 1)
    std::vector<int> basis;   // per row, column index of the basic variable
    int m = 0, n = 0;

    double rhs(int r) const { return t(r, n); }

    void pivot(int r, int c) {
        t.row(r) /= t(r, c);
        for (int i = 0; i < m; ++i) {
            if (i != r && std::abs(t(i, c)) > 0.0) t.row(i) -= t(i, c) * t.row(r);
        }
        basis[static_cast<std::size_t>(r)] = c;
    }

    /// Minimize cost'z over the current tableau; cost has n entries.
    /// Returns false when unbounded.
    bool run(const Eigen::VectorXd& cost, double& objective) {
        // Reduced-cost row kept explicitly in canonical form.
        Eigen::VectorXd red = cost;
        for (int r = 0; r < m; ++r) {
            const int bc = basis[static_cast<std::size_t>(r)];
            if (cost[bc] != 0.0) red -= cost[bc] * t.row(r).head(n).transpose();
        }
        while (true) {
            int enter = -1;
            for (int c = 0; c < n; ++c) {  // Bland: lowest eligible index
                if (red[c] < -kTol) {
                    enter = c;
                    break;
                }
            }
            if (enter < 0) break;
            int leave = -1;
            double best = 0.0;
            for (int r = 0; r < m; ++r) {
                if (t(r, enter) > kTol) {
                    const double ratio = rhs(r) / t(r, enter);
                    if (leave < 0 || ratio < best - kTol ||
                        (ratio < best + kTol &&
                         basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
                        best = ratio;
                        leave = r;
                    }
                }
            }
            if (leave < 0) return false;  // unbounded
            const double scale = red[enter];
            pivot(leave, enter);
            red -= scale * t.row(leave).head(n).transpose();
            red[enter] = 0.0;
        }
        objective = 0.0;
        for (int r = 0; r < m; ++r) objective += cost[basis[static_cast<std::size_t>(r)]] * rhs(r);
        return true;
    }
};

}  // namespace

LpSolution solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
    const int m = static_cast<int>(a.rows());
    const int n = static_cast<int>(a.cols());

    // Phase 1 with one artificial per row; rows flipped so b >= 0.
    Tableau tab;
    tab.m = m;
    tab.n = n + m;
    tab.t.resize(m, tab.n + 1);
    tab.basis.resize(static_cast<std::size_t>(m));
    for (int r = 0; r < m; ++r) {
        const double sign = b[r] < 0.0 ? -1.0 : 1.0;
        tab.t.row(r).head(n) = sign * a.row(r);
        tab.t.row(r).segment(n, m).setZero();
        tab.t(r, n + r) = 1.0;
        tab.t(r, tab.n) = sign * b[r];
        tab.basis[static_cast<std::size_t>(r)] = n + r;
    }
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(tab.n);
    phase1.segment(n, m).setOnes();
    double obj1 = 0.0;
    if (!tab.run(phase1, obj1)) return {};
    LpSolution sol;
    if (obj1 > 1e-7) {
        sol.feasible = false;
        return sol;
    }
    // Drive any artificial still basic out of the basis where possible.
    for (int r = 0; r < m; ++r) {
        if (tab.basis[static_cast<std::size_t>(r)] >= n) {
            int enter = -1;
            for (int c = 0; c < n; ++c) {
                if (std::abs(tab.t(r, c)) > kTol) {
                    enter = c;
                    break;
                }
            }
            if (enter >= 0) tab.pivot(r, enter);
        }
    }

    // Phase 2 on the original columns; artificial columns frozen at zero by
    // a prohibitive cost.
    Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(tab.n);
    phase2.head(n) = c;
    phase2.segment(n, m).setConstant(1e12);
    double obj2 = 0.0;
    if (!tab.run(phase2, obj2)) {
        sol.feasible = true;
        sol.bounded = false;
        return sol;
    }
    sol.feasible = true;
    sol.z = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < m; ++r) {
        if (tab.basis[static_cast<std::size_t>(r)] < n) {
            sol.z[tab.basis[static_cast<std::size_t>(r)]] = tab.rhs(r);
        }
    }
    sol.objective = c.dot(sol.z);
    return sol;
}

WlavLpResult wlav_lp_oracle(const EstimationProblem& p) {
    if (p.mode != EstMode::Wlav) throw std::logic_error("oracle expects a WLAV problem");
    if (p.linear_cost.cwiseAbs().maxCoeff() > 0.0) {
        throw std::logic_error("oracle expects no port-mirror linear cost");
    }
    const int nc = p.n_core();
    const int nr = p.n_rows();

    // Columns: [core+ | core- | eta+ | eta-], one eta pair per soft row.
    std::vector<int> soft_rows;
    for (int r = 0; r < nr; ++r) {
        if (p.weights[r] > 0.0) soft_rows.push_back(r);
    }
    const int ns = static_cast<int>(soft_rows.size());
    const int n = 2 * nc + 2 * ns;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nr, n);
    const Eigen::MatrixXd adense = Eigen::MatrixXd(p.A);
    a.block(0, 0, nr, nc) = adense;
    a.block(0, nc, nr, nc) = -adense;
    for (int s = 0; s < ns; ++s) {
        a(soft_rows[static_cast<std::size_t>(s)], 2 * nc + s) = 1.0;
        a(soft_rows[static_cast<std::size_t>(s)], 2 * nc + ns + s) = -1.0;
    }
    const Eigen::VectorXd b = -p.rhs();  // rows are A z + rhs = 0

    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (int s = 0; s < ns; ++s) {
        c[2 * nc + s] = p.weights[soft_rows[static_cast<std::size_t>(s)]];
        c[2 * nc + ns + s] = p.weights[soft_rows[static_cast<std::size_t>(s)]];
    }

    const LpSolution sol = solve_lp(a, b, c);
    if (!sol.feasible || !sol.bounded) {
        throw std::runtime_error("LP oracle: problem infeasible or unbounded");
    }
    WlavLpResult out;
    out.objective = sol.objective;
    out.core = sol.z.head(nc) - sol.z.segment(nc, nc);
    out.eta_signed.resize(ns);
    for (int s = 0; s < ns; ++s) {
        out.eta_signed[s] = sol.z[2 * nc + s] - sol.z[2 * nc + ns + s];
    }
    return out;
}

}  // namespace gridtear::testing
