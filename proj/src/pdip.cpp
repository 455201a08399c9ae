#include <Eigen/SparseLU>
#include <algorithm>
#include <limits>
#include <cmath>

#include "gridtear/estcore.hpp"

namespace gridtear {

SolverState initialize(const EstimationProblem& p, const SolverConfig& cfg) {
    SolverState s;
    s.x = Eigen::VectorXd::Zero(p.x_size());

    const auto& l = p.layout;
    const auto balanced = distribute_voltage({1.0, 0.0});
    for (int net = 0; net < l.net_count(); ++net) {
        const int phases = l.net_phases(net);
        for (int node = 0; node < l.net_nodes(net); ++node) {
            for (int ph = 0; ph < phases; ++ph) {
                const ComplexPair v =
                    phases == 1 ? ComplexPair{1.0, 0.0} : balanced[static_cast<std::size_t>(ph)];
                const Slot sre = l.voltage(net, node, ph, 0);
                const Slot sim = l.voltage(net, node, ph, 1);
                if (sre.kind == Slot::Var) s.x[sre.idx] = v.re;
                if (sim.kind == Slot::Var) s.x[sim.idx] = v.im;
            }
        }
    }

    s.lambda = Eigen::VectorXd::Zero(p.n_rows());
    s.mu = Eigen::VectorXd::Zero(p.x_size());
    if (p.mode == EstMode::Wlav) {
        s.eps = cfg.eps0;
        for (int i = p.bound_begin(); i < p.bound_begin() + p.bound_count(); ++i) {
            s.x[i] = cfg.eta_init;
            s.mu[i] = cfg.eps0 / cfg.eta_init;
        }
    } else {
        s.eps = 0.0;
    }
    return s;
}

SolverState warm_state(const EstimationProblem& p, const SolverState& prev, double eps) {
    SolverState s = prev;
    s.eps = eps;
    s.iterations = 0;
    for (int i = p.bound_begin(); i < p.bound_begin() + p.bound_count(); ++i) {
        s.x[i] = std::max(s.x[i], 1e-6);
        s.mu[i] = std::clamp(eps / s.x[i], 1e-12, 1e12);
    }
    return s;
}

KktResidual kkt_residual(const EstimationProblem& p, const SolverState& s) {
    if (s.x.size() != p.x_size() || s.lambda.size() != p.n_rows()) {
        throw ValidationError("solver state dimensions do not match the problem layout");
    }
    KktResidual r;
    const Eigen::VectorXd g = p.constraint_values(s.x);
    r.primal = g.size() > 0 ? g.cwiseAbs().maxCoeff() : 0.0;

    Eigen::VectorXd rd = p.objective_gradient(s.x) + p.full_matrix().transpose() * s.lambda - s.mu;
    r.dual = rd.size() > 0 ? rd.cwiseAbs().maxCoeff() : 0.0;

    r.comp = 0.0;
    for (int i = p.bound_begin(); i < p.bound_begin() + p.bound_count(); ++i) {
        r.comp = std::max(r.comp, std::abs(s.mu[i] * s.x[i] - s.eps));
    }
    return r;
}

NewtonStep newton_kkt_step(const EstimationProblem& p, const SolverState& s,
                           const SolverConfig& cfg) {
    const int nx = p.x_size();
    const int nr = p.n_rows();
    const auto& G = p.full_matrix();

    const Eigen::VectorXd g = p.constraint_values(s.x);
    const Eigen::VectorXd rd = p.objective_gradient(s.x) + G.transpose() * s.lambda - s.mu;

    // Symmetrized system: [[H + Sigma + reg, G'], [G, 0]].
    Eigen::VectorXd hdiag = Eigen::VectorXd::Constant(nx, cfg.reg);
    if (p.mode == EstMode::Wls) {
        for (int r = 0; r < nr; ++r) {
            const auto ref = p.eta_of_row(r);
            if (ref.plus >= 0) hdiag[ref.plus] += 2.0 * p.weights[r];
        }
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(nx) + 2 * static_cast<std::size_t>(G.nonZeros()));
    Eigen::VectorXd top = -rd;
    for (int i = 0; i < nx; ++i) {
        if (i >= p.bound_begin() && i < p.bound_begin() + p.bound_count()) {
            // Barrier curvature carries all the WLAV (1,1)-block weight.
            hdiag[i] += s.mu[i] / s.x[i];
            const double rc = s.mu[i] * s.x[i] - s.eps;
            top[i] -= rc / s.x[i];
        }
        trips.emplace_back(i, i, hdiag[i]);
    }
    for (int c = 0; c < G.outerSize(); ++c) {
        for (SparseReal::InnerIterator it(G, c); it; ++it) {
            trips.emplace_back(static_cast<int>(it.col()), nx + static_cast<int>(it.row()),
                               it.value());
            trips.emplace_back(nx + static_cast<int>(it.row()), static_cast<int>(it.col()),
                               it.value());
        }
    }

    SparseReal K(nx + nr, nx + nr);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();

    Eigen::VectorXd rhs(nx + nr);
    rhs.head(nx) = top;
    rhs.tail(nr) = -g;

    Eigen::SparseLU<SparseReal> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) {
        throw NumericError("KKT system numerically singular: " + lu.lastErrorMessage());
    }
    Eigen::VectorXd sol = lu.solve(rhs);
    // One round of iterative refinement keeps the extreme barrier scalings honest.
    sol += lu.solve(rhs - K * sol);

    NewtonStep step;
    step.dx = sol.head(nx);
    step.dlambda = sol.tail(nr);
    step.dmu = Eigen::VectorXd::Zero(nx);
    for (int i = p.bound_begin(); i < p.bound_begin() + p.bound_count(); ++i) {
        const double rc = s.mu[i] * s.x[i] - s.eps;
        step.dmu[i] = -(rc + s.mu[i] * step.dx[i]) / s.x[i];
    }
    return step;
}

NewtonStep apply_limiting(const EstimationProblem& p, const SolverState& s, NewtonStep step,
                          const SolverConfig& cfg) {
    for (int i = 0; i < p.n_core(); ++i) {
        if (p.layout.var_is_voltage(i)) {
            step.dx[i] = std::clamp(step.dx[i], -cfg.v_clip, cfg.v_clip);
        }
    }
    for (int i = p.bound_begin(); i < p.bound_begin() + p.bound_count(); ++i) {
        step.dx[i] = std::max(step.dx[i], -cfg.tau * s.x[i]);
        step.dmu[i] = std::max(step.dmu[i], -cfg.tau * s.mu[i]);
    }
    return step;
}

Estimate pdip_solve(const EstimationProblem& p, const SolverConfig& cfg, const SolverState* warm,
                    SolverState* final_state) {
    SolverState s = warm != nullptr ? *warm : initialize(p, cfg);
    if (p.mode == EstMode::Wls) s.eps = 0.0;

    Estimate est;
    est.mode = p.mode;
    bool converged = false;
    for (int it = 0;; ++it) {
        const KktResidual r = kkt_residual(p, s);
        est.kkt_history.push_back(r.max());
        if (p.mode == EstMode::Wlav) {
            // At the default floor the barrier runs two decades below the KKT
            // tolerance so its smear on the reported objective is negligible.
            const double floor = cfg.floor_value();
            if (r.max() <= std::max(cfg.eps_kkt, 10.0 * floor) && s.eps <= 1.0001 * floor) {
                converged = true;
                break;
            }
            if (r.primal <= cfg.barrier_trigger * s.eps && r.dual <= cfg.barrier_trigger * s.eps &&
                s.eps > floor) {
                s.eps *= cfg.barrier_shrink;
            }
        } else if (r.max() <= cfg.eps_kkt) {
            converged = true;
            break;
        }
        if (it >= cfg.max_iters) break;

        // Backtracking on the max KKT residual globalizes the clipped step:
        // once alpha is small enough the voltage clip deactivates and the
        // damped Newton direction is a guaranteed descent direction.
        const NewtonStep raw = newton_kkt_step(p, s, cfg);
        const double phi0 = r.max();
        SolverState best = s;
        double best_phi = std::numeric_limits<double>::infinity();
        bool accepted = false;
        double alpha = 1.0;
        for (int bt = 0; bt < 18 && !accepted; ++bt, alpha *= 0.5) {
            NewtonStep scaled;
            scaled.dx = alpha * raw.dx;
            scaled.dlambda = alpha * raw.dlambda;
            scaled.dmu = alpha * raw.dmu;
            const NewtonStep lim = apply_limiting(p, s, scaled, cfg);
            SolverState trial = s;
            trial.x += lim.dx;
            trial.lambda += lim.dlambda;
            trial.mu += lim.dmu;
            const double phi = kkt_residual(p, trial).max();
            if (phi < best_phi) {
                best_phi = phi;
                best = std::move(trial);
            }
            if (best_phi <= phi0 * (1.0 - 1e-3 * alpha) || best_phi <= 0.9 * phi0) {
                accepted = true;
            }
        }
        const int iters = s.iterations;
        s = std::move(best);
        s.iterations = iters + 1;
    }

    est.converged = converged;
    est.iterations = s.iterations;

    // Voltages, external boundary values included.
    const auto& l = p.layout;
    est.voltages.resize(static_cast<std::size_t>(l.net_count()));
    for (int net = 0; net < l.net_count(); ++net) {
        auto& vnet = est.voltages[static_cast<std::size_t>(net)];
        vnet.resize(static_cast<std::size_t>(l.net_nodes(net) * l.net_phases(net)));
        for (int node = 0; node < l.net_nodes(net); ++node) {
            for (int ph = 0; ph < l.net_phases(net); ++ph) {
                const Slot sre = l.voltage(net, node, ph, 0);
                const Slot sim = l.voltage(net, node, ph, 1);
                const double re = sre.kind == Slot::Var ? s.x[sre.idx] : p.ext_values[sre.idx];
                const double im = sim.kind == Slot::Var ? s.x[sim.idx] : p.ext_values[sim.idx];
                vnet[static_cast<std::size_t>(node * l.net_phases(net) + ph)] = {re, im};
            }
        }
    }

    est.max_eta_product = 0.0;
    for (int r = 0; r < p.n_rows(); ++r) {
        const auto ref = p.eta_of_row(r);
        if (ref.plus < 0) continue;
        ResidualEntry entry = p.row_meta[static_cast<std::size_t>(r)];
        if (p.mode == EstMode::Wlav) {
            const auto rec = recover_residual({s.x[ref.plus], s.x[ref.minus]});
            entry.eta = rec.value;
            entry.eta_abs = rec.magnitude;
            est.max_eta_product = std::max(est.max_eta_product, s.x[ref.plus] * s.x[ref.minus]);
        } else {
            entry.eta = s.x[ref.plus];
            entry.eta_abs = std::abs(entry.eta);
        }
        est.residuals.push_back(std::move(entry));
    }
    est.objective = p.measurement_objective(s.x);

    if (final_state != nullptr) *final_state = s;
    return est;
}

}  // namespace gridtear
