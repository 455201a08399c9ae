#include "gridtear/measmodel.hpp"

#include <algorithm>
#include <cmath>

#include "gridtear/rng.hpp"

namespace gridtear {

RecoveredResidual recover_residual(const NoiseSplit& split) {
    if (split.plus < 0.0 || split.minus < 0.0) {
        throw ValidationError("noise split components must be nonnegative");
    }
    RecoveredResidual r;
    r.value = split.plus - split.minus;
    r.magnitude = split.plus + split.minus;
    r.complementary = split.plus * split.minus <= 1e-8;
    return r;
}

GbPair smart_meter_feature_transform(double p, double q, double vm) {
    if (vm <= 0.0) throw ValidationError("feature transform needs |V| > 0");
    return {p / (vm * vm), q / (vm * vm)};
}

namespace {

/// Accumulates a complex affine expression into a (real, imag) row pair:
/// coefficient c on complex variable V contributes (Re c, -Im c; Im c, Re c).
struct RowPair {
    ConstraintRow re, im;

    void add_voltage(const RowContext& ctx, int node, int phase, Complex coeff) {
        const Slot er = ctx.layout.voltage(ctx.net, node, phase, 0);
        const Slot ei = ctx.layout.voltage(ctx.net, node, phase, 1);
        re.add(er, coeff.real());
        re.add(ei, -coeff.imag());
        im.add(er, coeff.imag());
        im.add(ei, coeff.real());
    }

    void add_constant(Complex c) {
        re.constant += c.real();
        im.constant += c.imag();
    }

    void finish(std::vector<ConstraintRow>& out, double weight, int device, int phase,
                const std::string& label) {
        re.weight = im.weight = weight;
        re.device = im.device = device;
        re.phase = im.phase = phase;
        re.imag = false;
        im.imag = true;
        re.label = im.label = label;
        out.push_back(std::move(re));
        out.push_back(std::move(im));
    }
};

/// KCL terms of one admittance row: sum_k Y[(node,phase), k] * V_k.
void add_kcl_terms(RowPair& rp, const RowContext& ctx, int node, int phase, double sign) {
    const int r = ctx.sub.yidx(node, phase);
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(ctx.yrow, r); it; ++it) {
        const int col = static_cast<int>(it.col());
        rp.add_voltage(ctx, col / ctx.sub.phases(), col % ctx.sub.phases(), sign * it.value());
    }
}

/// Branch current leaving `from_id` into the branch, as affine voltage terms:
/// I = series*(V_from - V_other) + shunt_at_from*V_from, per phase. Either
/// branch orientation is accepted (series blocks are symmetric).
void add_branch_current_terms(RowPair& rp, const RowContext& ctx, const Branch& br,
                              const std::string& from_id, int phase, double sign) {
    const bool forward = br.from == from_id;
    const int f = ctx.sub.node_index(forward ? br.from : br.to);
    const int t = ctx.sub.node_index(forward ? br.to : br.from);
    const auto& shunt = forward ? br.shunt_from : br.shunt_to;
    for (int q = 0; q < ctx.sub.phases(); ++q) {
        const Complex s = br.series(phase, q);
        if (s != Complex{0.0, 0.0}) {
            rp.add_voltage(ctx, f, q, sign * s);
            rp.add_voltage(ctx, t, q, -sign * s);
        }
        if (shunt.size() > 0 && shunt(phase, q) != Complex{0.0, 0.0}) {
            rp.add_voltage(ctx, f, q, sign * shunt(phase, q));
        }
    }
}

}  // namespace

std::vector<ConstraintRow> phasor_voltage_rows(int node, const std::vector<ComplexPair>& measured,
                                               double weight, const RowContext& ctx,
                                               int device_index) {
    std::vector<ConstraintRow> out;
    const std::string label = "pmu_volt(" + ctx.sub.nodes[static_cast<std::size_t>(node)].id + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        RowPair rp;
        rp.add_voltage(ctx, node, ph, Complex{1.0, 0.0});
        rp.add_constant(-measured[static_cast<std::size_t>(ph)].to_complex());
        rp.finish(out, weight, device_index, ph, label);
    }
    return out;
}

std::vector<ConstraintRow> pmu_injection_rows(const PhasorInjection& d, const RowContext& ctx,
                                              int device_index) {
    const int node = ctx.sub.node_index(d.node);
    std::vector<ConstraintRow> out;
    const std::string label = "pmu_inj(" + d.node + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        // I_meas - sum_k Y_ik V_k + eta = 0
        RowPair rp;
        rp.add_constant(d.current[static_cast<std::size_t>(ph)].to_complex());
        add_kcl_terms(rp, ctx, node, ph, -1.0);
        rp.finish(out, d.weight, device_index, ph, label);
    }
    auto vr = phasor_voltage_rows(node, d.voltage, d.weight, ctx, device_index);
    out.insert(out.end(), vr.begin(), vr.end());
    return out;
}

std::vector<ConstraintRow> rms_injection_rows(const RmsPowerInjection& d, const RowContext& ctx,
                                              int device_index) {
    const int node = ctx.sub.node_index(d.node);
    std::vector<ConstraintRow> out;
    const std::string label = "rms_inj(" + d.node + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        const auto gb = smart_meter_feature_transform(d.p[static_cast<std::size_t>(ph)],
                                                      d.q[static_cast<std::size_t>(ph)],
                                                      d.vm[static_cast<std::size_t>(ph)]);
        // sum_k Y_ik V_k + (G - jB) V_i + eta = 0: the measured load draws
        // current out of the node (S = V conj(I), consumption-positive).
        RowPair rp;
        add_kcl_terms(rp, ctx, node, ph, 1.0);
        rp.add_voltage(ctx, node, ph, Complex{gb.g, -gb.b});
        rp.finish(out, d.weight, device_index, ph, label);
    }
    return out;
}

std::vector<ConstraintRow> rms_flow_rows(const RmsFlow& d, const RowContext& ctx,
                                         int device_index) {
    const auto& br = ctx.sub.branches[static_cast<std::size_t>(ctx.sub.branch_index(d.from, d.to))];
    const int from = ctx.sub.node_index(d.from);
    std::vector<ConstraintRow> out;
    const std::string label = "rms_flow(" + d.from + "-" + d.to + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        const auto gb = smart_meter_feature_transform(d.p[static_cast<std::size_t>(ph)],
                                                      d.q[static_cast<std::size_t>(ph)],
                                                      d.vm[static_cast<std::size_t>(ph)]);
        // I_ij(V) - (G - jB) V_i + eta = 0: measured flow leaves node i, and
        // the feature transform uses the from-node voltage magnitude.
        RowPair rp;
        add_branch_current_terms(rp, ctx, br, d.from, ph, 1.0);
        rp.add_voltage(ctx, from, ph, Complex{-gb.g, gb.b});
        rp.finish(out, d.weight, device_index, ph, label);
    }
    return out;
}

std::vector<ConstraintRow> phasor_flow_rows(const PhasorFlow& d, const RowContext& ctx,
                                            int device_index) {
    const auto& br = ctx.sub.branches[static_cast<std::size_t>(ctx.sub.branch_index(d.from, d.to))];
    std::vector<ConstraintRow> out;
    const std::string label = "pmu_flow(" + d.from + "-" + d.to + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        // I_meas - I_ij(V) + eta = 0
        RowPair rp;
        rp.add_constant(d.current[static_cast<std::size_t>(ph)].to_complex());
        add_branch_current_terms(rp, ctx, br, d.from, ph, -1.0);
        rp.finish(out, d.weight, device_index, ph, label);
    }
    return out;
}

std::vector<ConstraintRow> zero_injection_rows(int node, const RowContext& ctx) {
    const auto& nd = ctx.sub.nodes[static_cast<std::size_t>(node)];
    if (nd.kind != NodeKind::ZeroInjection) {
        throw ValidationError("node '" + nd.id + "' is not a zero-injection node");
    }
    for (const auto& dev : ctx.sub.devices) {
        const bool injection_device = std::holds_alternative<PhasorInjection>(dev) ||
                                      std::holds_alternative<RmsPowerInjection>(dev);
        if (injection_device && device_anchor_node(dev) == nd.id) {
            throw ValidationError("zero-injection node '" + nd.id +
                                  "' carries an injection measurement");
        }
    }
    std::vector<ConstraintRow> out;
    const std::string label = "zi(" + nd.id + ")";
    for (int ph = 0; ph < ctx.sub.phases(); ++ph) {
        RowPair rp;
        add_kcl_terms(rp, ctx, node, ph, 1.0);
        rp.finish(out, 0.0, -1, ph, label);
    }
    return out;
}

std::vector<ConstraintRow> device_rows(const MeasurementDevice& d, const RowContext& ctx,
                                       int device_index) {
    return std::visit(
        [&](const auto& dev) -> std::vector<ConstraintRow> {
            using T = std::decay_t<decltype(dev)>;
            if constexpr (std::is_same_v<T, PhasorInjection>) {
                return pmu_injection_rows(dev, ctx, device_index);
            } else if constexpr (std::is_same_v<T, RmsPowerInjection>) {
                return rms_injection_rows(dev, ctx, device_index);
            } else if constexpr (std::is_same_v<T, RmsFlow>) {
                return rms_flow_rows(dev, ctx, device_index);
            } else {
                return phasor_flow_rows(dev, ctx, device_index);
            }
        },
        d);
}

std::vector<ConstraintRow> measurement_rows(const RowContext& ctx) {
    std::vector<ConstraintRow> out;
    for (std::size_t di = 0; di < ctx.sub.devices.size(); ++di) {
        auto rows = device_rows(ctx.sub.devices[di], ctx, static_cast<int>(di));
        out.insert(out.end(), std::make_move_iterator(rows.begin()),
                   std::make_move_iterator(rows.end()));
    }
    for (int node = 0; node < ctx.sub.node_count(); ++node) {
        if (ctx.sub.nodes[static_cast<std::size_t>(node)].kind == NodeKind::ZeroInjection) {
            auto rows = zero_injection_rows(node, ctx);
            out.insert(out.end(), std::make_move_iterator(rows.begin()),
                       std::make_move_iterator(rows.end()));
        }
    }
    for (auto& row : out) row.net = ctx.net;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic measurements
// ---------------------------------------------------------------------------

namespace {

/// Net injected current at a node for a solved state: everything the
/// admittance matrix does not model (loads, generators) must supply it.
Complex true_injection(const SubNetwork& sub, const Eigen::VectorXcd& yv, int node, int phase) {
    return yv[sub.yidx(node, phase)];
}

}  // namespace

CombinedCase generate_measurements(const CombinedCase& c, const PowerFlowResult& truth,
                                   const MeasurementGenOptions& opts) {
    if (opts.sigma < 0.0) throw ValidationError("measurement noise sigma must be >= 0");
    CombinedCase out = c;
    Rng rng(opts.seed);
    const double w = opts.weight();
    auto noisy = [&](double v) { return opts.sigma > 0.0 ? v + opts.sigma * rng.normal() : v; };

    for (std::size_t si = 0; si < out.subnetworks.size(); ++si) {
        auto& sub = out.subnetworks[si];
        const auto& v = truth.voltages[si];
        const Eigen::VectorXcd yv = sub.admittance() * v;
        sub.devices.clear();

        const bool is_t = sub.domain == PhaseDomain::PositiveSequence;
        for (int node = 0; node < sub.node_count(); ++node) {
            const auto& nd = sub.nodes[static_cast<std::size_t>(node)];
            if (nd.kind == NodeKind::Slack) {
                // The slack anchors magnitude and angle: a phasor device
                // measuring its injection and voltage.
                PhasorInjection d;
                d.node = nd.id;
                d.weight = w;
                for (int ph = 0; ph < sub.phases(); ++ph) {
                    const Complex inj = true_injection(sub, yv, node, ph);
                    d.current.push_back({noisy(inj.real()), noisy(inj.imag())});
                    const Complex vv = v[sub.yidx(node, ph)];
                    d.voltage.push_back({noisy(vv.real()), noisy(vv.imag())});
                }
                sub.devices.push_back(std::move(d));
            } else if (nd.kind == NodeKind::Injection) {
                const bool phasor =
                    is_t && opts.t_injections != TInjectionDevices::Rms;
                const bool rms = !is_t || opts.t_injections != TInjectionDevices::Phasor;
                if (phasor) {
                    PhasorInjection d;
                    d.node = nd.id;
                    d.weight = w;
                    for (int ph = 0; ph < sub.phases(); ++ph) {
                        const Complex inj = true_injection(sub, yv, node, ph);
                        d.current.push_back({noisy(inj.real()), noisy(inj.imag())});
                        const Complex vv = v[sub.yidx(node, ph)];
                        d.voltage.push_back({noisy(vv.real()), noisy(vv.imag())});
                    }
                    sub.devices.push_back(std::move(d));
                }
                if (rms) {
                    RmsPowerInjection d;
                    d.node = nd.id;
                    d.weight = w;
                    for (int ph = 0; ph < sub.phases(); ++ph) {
                        const Complex vv = v[sub.yidx(node, ph)];
                        const Complex s_cons = -vv * std::conj(true_injection(sub, yv, node, ph));
                        d.p.push_back(noisy(s_cons.real()));
                        d.q.push_back(noisy(s_cons.imag()));
                        d.vm.push_back(noisy(std::abs(vv)));
                    }
                    sub.devices.push_back(std::move(d));
                }
            }
        }

        if (!is_t) {
            // Line sensors on every feeder section: without them the L1 cost
            // of depositing a gross error is the same at every cut of a
            // radial feeder, and the estimate smears corruption along the
            // path instead of rejecting it at the source.
            for (const auto& br : sub.branches) {
                bool at_head = false;
                for (const auto& cp : c.couplings) {
                    if (cp.d_net == sub.id && (br.from == cp.d_bus || br.to == cp.d_bus)) {
                        at_head = true;  // covered by the substation suite below
                    }
                }
                if (at_head) continue;
                const int f = sub.node_index(br.from);
                const int t = sub.node_index(br.to);
                PhasorFlow d;
                d.from = br.from;
                d.to = br.to;
                d.weight = w;
                for (int ph = 0; ph < sub.phases(); ++ph) {
                    Complex iij{0.0, 0.0};
                    for (int q = 0; q < sub.phases(); ++q) {
                        iij += br.series(ph, q) * (v[sub.yidx(f, q)] - v[sub.yidx(t, q)]);
                        if (br.shunt_from.size() > 0) iij += br.shunt_from(ph, q) * v[sub.yidx(f, q)];
                    }
                    d.current.push_back({noisy(iij.real()), noisy(iij.imag())});
                }
                sub.devices.push_back(std::move(d));
            }

            // Substation head telemetry at each boundary bus: a uPMU on the
            // bus plus phasor and RMS flow meters on the head section.
            // Redundant heads keep phantom imports from crossing unseen even
            // when one head row is itself rejected as bad data.
            for (const auto& cp : c.couplings) {
                if (cp.d_net != sub.id) continue;
                const int bus = sub.node_index(cp.d_bus);
                {
                    PhasorInjection d;
                    d.node = cp.d_bus;
                    d.weight = w;
                    for (int ph = 0; ph < sub.phases(); ++ph) {
                        const Complex inj = true_injection(sub, yv, bus, ph);
                        d.current.push_back({noisy(inj.real()), noisy(inj.imag())});
                        const Complex vv = v[sub.yidx(bus, ph)];
                        d.voltage.push_back({noisy(vv.real()), noisy(vv.imag())});
                    }
                    sub.devices.push_back(std::move(d));
                }
                for (const auto& br : sub.branches) {
                    if (br.from != cp.d_bus && br.to != cp.d_bus) continue;
                    const bool fwd = br.from == cp.d_bus;
                    const int f = bus;
                    const int t = sub.node_index(fwd ? br.to : br.from);
                    const auto& shunt = fwd ? br.shunt_from : br.shunt_to;
                    PhasorFlow d;
                    d.from = cp.d_bus;
                    d.to = fwd ? br.to : br.from;
                    d.weight = w;
                    RmsFlow rd;
                    rd.from = d.from;
                    rd.to = d.to;
                    rd.weight = w;
                    for (int ph = 0; ph < sub.phases(); ++ph) {
                        Complex iij{0.0, 0.0};
                        for (int q = 0; q < sub.phases(); ++q) {
                            iij += br.series(ph, q) * (v[sub.yidx(f, q)] - v[sub.yidx(t, q)]);
                            if (shunt.size() > 0) iij += shunt(ph, q) * v[sub.yidx(f, q)];
                        }
                        d.current.push_back({noisy(iij.real()), noisy(iij.imag())});
                        const Complex vf = v[sub.yidx(f, ph)];
                        const Complex s = vf * std::conj(iij);
                        rd.p.push_back(noisy(s.real()));
                        rd.q.push_back(noisy(s.imag()));
                        rd.vm.push_back(noisy(std::abs(vf)));
                    }
                    sub.devices.push_back(std::move(d));
                    sub.devices.push_back(std::move(rd));
                    break;  // head section only
                }
            }
        }

        if (is_t && !sub.branches.empty() && opts.flow_fraction > 0.0) {
            const auto nsel = static_cast<std::size_t>(
                std::lround(opts.flow_fraction * static_cast<double>(sub.branches.size())));
            auto picks = rng.pick_distinct(sub.branches.size(), std::min(nsel, sub.branches.size()));
            std::sort(picks.begin(), picks.end());
            auto can_anchor = [&](const std::string& id) {
                const auto& nd = sub.nodes[static_cast<std::size_t>(sub.node_index(id))];
                return nd.kind == NodeKind::Slack || nd.kind == NodeKind::Injection;
            };
            for (auto bi : picks) {
                const auto& br = sub.branches[bi];
                // The meter anchors at its from-node; orient it at a node
                // allowed to carry devices.
                std::string from_id = br.from, to_id = br.to;
                if (!can_anchor(from_id)) {
                    if (!can_anchor(to_id)) continue;
                    std::swap(from_id, to_id);
                }
                const int f = sub.node_index(from_id);
                const int t = sub.node_index(to_id);
                const auto& shunt = br.from == from_id ? br.shunt_from : br.shunt_to;
                RmsFlow d;
                d.from = from_id;
                d.to = to_id;
                d.weight = w;
                for (int ph = 0; ph < sub.phases(); ++ph) {
                    Complex iij{0.0, 0.0};
                    for (int q = 0; q < sub.phases(); ++q) {
                        iij += br.series(ph, q) * (v[sub.yidx(f, q)] - v[sub.yidx(t, q)]);
                        if (shunt.size() > 0) iij += shunt(ph, q) * v[sub.yidx(f, q)];
                    }
                    const Complex vf = v[sub.yidx(f, ph)];
                    const Complex s = vf * std::conj(iij);
                    d.p.push_back(noisy(s.real()));
                    d.q.push_back(noisy(s.imag()));
                    d.vm.push_back(noisy(std::abs(vf)));
                }
                sub.devices.push_back(std::move(d));
            }
        }
        sub.finalize();
    }
    validate_case(out);
    return out;
}

std::pair<CombinedCase, std::vector<BadDataRecord>> inject_bad_data(const CombinedCase& c,
                                                                    int count, double magnitude,
                                                                    std::uint64_t seed) {
    struct ScalarRef {
        int net;
        int device;
        std::size_t scalar;
    };
    std::vector<ScalarRef> all;
    for (std::size_t si = 0; si < c.subnetworks.size(); ++si) {
        const auto& devs = c.subnetworks[si].devices;
        for (std::size_t di = 0; di < devs.size(); ++di) {
            for (std::size_t k = 0; k < device_scalar_count(devs[di]); ++k) {
                all.push_back({static_cast<int>(si), static_cast<int>(di), k});
            }
        }
    }
    if (count < 0 || static_cast<std::size_t>(count) > all.size()) {
        throw ValidationError("bad-data count " + std::to_string(count) + " exceeds the " +
                              std::to_string(all.size()) + " available measured scalars");
    }

    CombinedCase out = c;
    Rng rng(seed);
    const auto picks = rng.pick_distinct(all.size(), static_cast<std::size_t>(count));
    std::vector<BadDataRecord> records;
    std::vector<int> per_net(c.subnetworks.size(), 0);
    for (auto pi : picks) {
        const auto& ref = all[pi];
        auto& dev = out.subnetworks[static_cast<std::size_t>(ref.net)].devices[static_cast<std::size_t>(ref.device)];
        double& scalar = device_scalar(dev, ref.scalar);
        double delta = rng.coin() ? magnitude : -magnitude;
        const bool is_vm = device_scalar_label(dev, ref.scalar).rfind("Vm", 0) == 0;
        if (is_vm && scalar + delta <= 0.05) {
            delta = -delta;  // keep |V| measurements physical
        }
        scalar += delta;
        BadDataRecord rec;
        rec.net = ref.net;
        rec.device = ref.device;
        rec.scalar = ref.scalar;
        rec.phase = device_scalar_phase(dev, ref.scalar);
        rec.applied = delta;
        records.push_back(rec);
        if (++per_net[static_cast<std::size_t>(ref.net)] >= 15) {
            throw ValidationError("bad-data injection placed 15 or more hits in sub-network '" +
                                  c.subnetworks[static_cast<std::size_t>(ref.net)].id + "'");
        }
    }
    return {std::move(out), std::move(records)};
}

}  // namespace gridtear
