#include "gridtear/casegen.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "gridtear/rng.hpp"
#include "gridtear/supervisory.hpp"

namespace gridtear {

namespace {

Eigen::MatrixXcd series_1ph(Complex z) {
    Eigen::MatrixXcd m(1, 1);
    m(0, 0) = 1.0 / z;
    return m;
}

Eigen::MatrixXcd shunt_1ph(Complex y) {
    Eigen::MatrixXcd m(1, 1);
    m(0, 0) = y;
    return m;
}

/// Three-phase series admittance from a symmetric impedance block with
/// self impedance zs and mutual zm.
Eigen::MatrixXcd series_3ph(Complex zs, Complex zm) {
    Eigen::MatrixXcd z(3, 3);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) z(a, b) = a == b ? zs : zm;
    }
    return z.inverse();
}

Eigen::MatrixXcd shunt_3ph(Complex y) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(3, 3);
    for (int a = 0; a < 3; ++a) m(a, a) = y;
    return m;
}

Node t_node(std::string id, NodeKind kind, ComplexPair load = {0.0, 0.0}) {
    Node n;
    n.id = std::move(id);
    n.kind = kind;
    if (load.re != 0.0 || load.im != 0.0) n.load = {load};
    return n;
}

/// Mildly unbalanced wye load: per-phase powers scaled by 0.92/1.0/1.08.
Node d_node(std::string id, NodeKind kind, ComplexPair load = {0.0, 0.0}) {
    Node n;
    n.id = std::move(id);
    n.kind = kind;
    if (load.re != 0.0 || load.im != 0.0) {
        static const double scale[3] = {0.92, 1.0, 1.08};
        for (double s : scale) n.load.push_back({load.re * s, load.im * s});
    }
    return n;
}

SubNetwork make_desk_transmission(bool two_feeders) {
    SubNetwork t;
    t.id = "t";
    t.domain = PhaseDomain::PositiveSequence;
    t.nodes = {
        t_node("t01", NodeKind::Slack),
        t_node("t02", NodeKind::Injection, {0.32, 0.12}),
        t_node("t03", NodeKind::ZeroInjection),
        t_node("t04", NodeKind::Injection, {0.22, 0.09}),
        t_node("t05", NodeKind::Boundary),
        t_node("t06", NodeKind::Injection, {0.28, 0.10}),
        t_node("t07", NodeKind::Injection, {0.18, 0.07}),
        t_node("t08", NodeKind::Injection, {0.35, 0.14}),
        two_feeders ? t_node("t09", NodeKind::Boundary) : t_node("t09", NodeKind::Injection, {0.16, 0.05}),
        t_node("t10", NodeKind::Injection, {0.25, 0.08}),
        t_node("t11", NodeKind::Injection, {0.20, 0.06}),
        t_node("t12", NodeKind::ZeroInjection),
        t_node("t13", NodeKind::Injection, {0.30, 0.11}),
        t_node("t14", NodeKind::Injection, {0.15, 0.05}),
    };
    t.nodes[0].voltage = {{1.02, 0.0}};

    struct Edge {
        const char *a, *b;
        Complex z;
    };
    const Edge edges[] = {
        {"t01", "t02", {0.012, 0.048}}, {"t02", "t03", {0.014, 0.052}},
        {"t03", "t04", {0.010, 0.044}}, {"t04", "t05", {0.016, 0.058}},
        {"t05", "t06", {0.012, 0.050}}, {"t06", "t07", {0.015, 0.055}},
        {"t07", "t08", {0.011, 0.046}}, {"t08", "t09", {0.013, 0.051}},
        {"t09", "t10", {0.014, 0.049}}, {"t10", "t11", {0.012, 0.047}},
        {"t11", "t12", {0.015, 0.056}}, {"t12", "t13", {0.010, 0.042}},
        {"t13", "t14", {0.013, 0.050}}, {"t14", "t01", {0.011, 0.045}},
        {"t02", "t08", {0.020, 0.075}}, {"t04", "t11", {0.022, 0.080}},
        {"t06", "t13", {0.018, 0.070}},
    };
    for (const auto& e : edges) {
        Branch br;
        br.from = e.a;
        br.to = e.b;
        br.series = series_1ph(e.z);
        br.shunt_from = shunt_1ph({0.0, 0.008});
        br.shunt_to = shunt_1ph({0.0, 0.008});
        t.branches.push_back(std::move(br));
    }
    return t;
}

SubNetwork make_desk_feeder(const std::string& prefix) {
    SubNetwork f;
    f.id = prefix;
    f.domain = PhaseDomain::ThreePhase;
    auto bus = [&](int i) { return prefix + "_b" + (i < 10 ? "0" : "") + std::to_string(i); };

    f.nodes = {
        d_node(bus(1), NodeKind::Boundary),
        d_node(bus(2), NodeKind::ZeroInjection),
        d_node(bus(3), NodeKind::ZeroInjection),
        d_node(bus(4), NodeKind::Injection, {0.044, 0.017}),
        d_node(bus(5), NodeKind::Injection, {0.035, 0.013}),
        d_node(bus(6), NodeKind::Injection, {0.048, 0.019}),
        d_node(bus(7), NodeKind::Injection, {0.031, 0.011}),
        d_node(bus(8), NodeKind::Injection, {0.040, 0.015}),
        d_node(bus(9), NodeKind::Injection, {0.026, 0.009}),
        d_node(bus(10), NodeKind::Injection, {0.053, 0.021}),
        d_node(bus(11), NodeKind::Injection, {0.033, 0.012}),
        d_node(bus(12), NodeKind::Injection, {0.042, 0.016}),
        d_node(bus(13), NodeKind::Injection, {0.029, 0.010}),
    };

    const std::pair<int, int> edges[] = {{1, 2}, {2, 3}, {3, 4},  {4, 5},  {2, 6},  {3, 7},
                                         {4, 8}, {5, 9}, {6, 10}, {7, 11}, {8, 12}, {9, 13}};
    for (const auto& [a, b] : edges) {
        Branch br;
        br.from = bus(a);
        br.to = bus(b);
        br.series = series_3ph({0.030, 0.070}, {0.008, 0.020});
        br.shunt_from = shunt_3ph({0.0, 0.001});
        br.shunt_to = shunt_3ph({0.0, 0.001});
        f.branches.push_back(std::move(br));
    }
    return f;
}

}  // namespace

CombinedCase make_desk_td() {
    CombinedCase c;
    c.subnetworks.push_back(make_desk_transmission(true));
    c.subnetworks.push_back(make_desk_feeder("f1"));
    c.subnetworks.push_back(make_desk_feeder("f2"));
    c.couplings.push_back({"t", "t05", "f1", "f1_b01"});
    c.couplings.push_back({"t", "t09", "f2", "f2_b01"});
    validate_case(c);
    for (auto& s : c.subnetworks) s.finalize();
    return c;
}

CombinedCase make_desk_2net() {
    CombinedCase c;
    c.subnetworks.push_back(make_desk_transmission(false));
    c.subnetworks.push_back(make_desk_feeder("f1"));
    c.couplings.push_back({"t", "t05", "f1", "f1_b01"});
    validate_case(c);
    for (auto& s : c.subnetworks) s.finalize();
    return c;
}

CombinedCase make_ladder(int t_nodes, int feeders, int feeder_buses) {
    if (t_nodes < 3 || feeders < 0 || (feeders > 0 && feeder_buses < 2)) {
        throw ValidationError("ladder parameters out of range");
    }
    if (feeders > t_nodes - 2) throw ValidationError("more feeders than available nodes");

    CombinedCase c;
    SubNetwork t;
    t.id = "t";
    t.domain = PhaseDomain::PositiveSequence;

    auto tname = [](int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "t%04d", i);
        return std::string(buf);
    };

    // Boundary nodes evenly spaced along the chain, never the slack end.
    std::vector<bool> boundary(static_cast<std::size_t>(t_nodes), false);
    for (int k = 0; k < feeders; ++k) {
        const int pos = 1 + ((k + 1) * (t_nodes - 2)) / (feeders + 1);
        boundary[static_cast<std::size_t>(pos)] = true;
    }

    // Section impedance scaled with length: the backbone's end-to-end
    // impedance and total load stay fixed as the rung grows, so physics
    // (and power-flow convergence) are size-independent.
    const Complex t_section = Complex{0.08, 0.32} / static_cast<double>(t_nodes);
    const double t_load = 0.6 / static_cast<double>(t_nodes);

    for (int i = 0; i < t_nodes; ++i) {
        if (i == 0) {
            Node n;
            n.id = tname(i);
            n.kind = NodeKind::Slack;
            n.voltage = {{1.02, 0.0}};
            t.nodes.push_back(std::move(n));
        } else if (boundary[static_cast<std::size_t>(i)]) {
            t.nodes.push_back(t_node(tname(i), NodeKind::Boundary));
        } else if (i % 7 == 3) {
            t.nodes.push_back(t_node(tname(i), NodeKind::ZeroInjection));
        } else {
            const double p = t_load * (0.6 + 0.2 * static_cast<double>(i % 5));
            t.nodes.push_back(t_node(tname(i), NodeKind::Injection, {p, 0.35 * p}));
        }
    }
    for (int i = 0; i + 1 < t_nodes; ++i) {
        Branch br;
        br.from = tname(i);
        br.to = tname(i + 1);
        br.series = series_1ph(t_section);
        br.shunt_from = shunt_1ph({0.0, 0.002});
        br.shunt_to = shunt_1ph({0.0, 0.002});
        t.branches.push_back(std::move(br));
    }
    c.subnetworks.push_back(std::move(t));

    int fk = 0;
    for (int i = 0; i < t_nodes; ++i) {
        if (!boundary[static_cast<std::size_t>(i)]) continue;
        ++fk;
        SubNetwork f;
        char fid[16];
        std::snprintf(fid, sizeof(fid), "f%03d", fk);
        f.id = fid;
        auto bname = [&](int b) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s_b%03d", fid, b);
            return std::string(buf);
        };
        f.domain = PhaseDomain::ThreePhase;
        const double d_load = 0.03 / static_cast<double>(feeder_buses);
        const Complex d_self = Complex{0.35, 0.8} / static_cast<double>(feeder_buses);
        const Complex d_mutual = Complex{0.09, 0.22} / static_cast<double>(feeder_buses);
        for (int b = 0; b < feeder_buses; ++b) {
            if (b == 0) {
                f.nodes.push_back(d_node(bname(b), NodeKind::Boundary));
            } else if (b % 5 == 2) {
                f.nodes.push_back(d_node(bname(b), NodeKind::ZeroInjection));
            } else {
                const double p = d_load * (0.7 + 0.2 * static_cast<double>(b % 4));
                f.nodes.push_back(d_node(bname(b), NodeKind::Injection, {p, 0.3 * p}));
            }
        }
        for (int b = 0; b + 1 < feeder_buses; ++b) {
            Branch br;
            br.from = bname(b);
            br.to = bname(b + 1);
            br.series = series_3ph(d_self, d_mutual);
            br.shunt_from = shunt_3ph({0.0, 0.0005});
            br.shunt_to = shunt_3ph({0.0, 0.0005});
            f.branches.push_back(std::move(br));
        }
        c.subnetworks.push_back(std::move(f));
        c.couplings.push_back({"t", tname(i), fid, bname(0)});
    }

    validate_case(c);
    for (auto& s : c.subnetworks) s.finalize();
    return c;
}

SubNetwork make_random_standalone(std::uint64_t seed, const RandomNetOptions& opts) {
    Rng rng(seed);
    const int n = opts.min_nodes +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.max_nodes - opts.min_nodes + 1)));
    SubNetwork sub;
    sub.id = "r" + std::to_string(seed);
    sub.domain = PhaseDomain::PositiveSequence;
    auto name = [](int i) { return "n" + std::to_string(i); };
    for (int i = 0; i < n; ++i) {
        Node nd;
        nd.id = name(i);
        nd.kind = i == 0 ? NodeKind::Slack : NodeKind::Injection;
        if (i == 0) nd.voltage = {{1.0 + 0.02 * (rng.uniform() - 0.5), 0.0}};
        sub.nodes.push_back(std::move(nd));
    }
    // Random spanning tree plus a couple of extra edges.
    for (int i = 1; i < n; ++i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
        Branch br;
        br.from = name(j);
        br.to = name(i);
        const double scale = 0.6 + 0.9 * rng.uniform();
        br.series = series_1ph(Complex{0.012, 0.05} * scale);
        sub.branches.push_back(std::move(br));
    }
    for (int k = 0; k < 2 && n > 3; ++k) {
        const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        if (a == b) continue;
        bool dup = false;
        for (const auto& br : sub.branches) {
            if ((br.from == name(a) && br.to == name(b)) ||
                (br.from == name(b) && br.to == name(a))) {
                dup = true;
            }
        }
        if (dup) continue;
        Branch br;
        br.from = name(a);
        br.to = name(b);
        br.series = series_1ph(Complex{0.02, 0.08});
        sub.branches.push_back(std::move(br));
    }

    // Anchoring phasor device at the slack; inconsistent random measurements
    // elsewhere. Physical consistency is deliberately not required here.
    {
        PhasorInjection d;
        d.node = name(0);
        d.weight = 1.0;
        d.current = {{0.6 * (rng.uniform() - 0.5), 0.6 * (rng.uniform() - 0.5)}};
        d.voltage = {{1.0 + opts.sigma * rng.normal(), opts.sigma * rng.normal()}};
        sub.devices.push_back(std::move(d));
    }
    for (int i = 1; i < n; ++i) {
        if (rng.uniform() < 0.3) {
            PhasorInjection d;
            d.node = name(i);
            d.weight = 0.5 + rng.uniform();
            d.current = {{0.4 * (rng.uniform() - 0.5), 0.4 * (rng.uniform() - 0.5)}};
            d.voltage = {{1.0 + opts.sigma * rng.normal(), opts.sigma * rng.normal()}};
            sub.devices.push_back(std::move(d));
        } else {
            RmsPowerInjection d;
            d.node = name(i);
            d.weight = 0.5 + rng.uniform();
            d.p = {0.05 + 0.25 * rng.uniform()};
            d.q = {0.02 + 0.10 * rng.uniform()};
            d.vm = {0.95 + 0.1 * rng.uniform()};
            sub.devices.push_back(std::move(d));
        }
    }
    for (std::size_t bi = 0; bi < sub.branches.size(); ++bi) {
        if (rng.uniform() < 0.4) {
            PhasorFlow d;
            d.from = sub.branches[bi].from;
            d.to = sub.branches[bi].to;
            d.weight = 0.5 + rng.uniform();
            d.current = {{0.3 * (rng.uniform() - 0.5), 0.3 * (rng.uniform() - 0.5)}};
            sub.devices.push_back(std::move(d));
        }
    }
    if (opts.with_gross_error && !sub.devices.empty()) {
        auto& dev = sub.devices[rng.below(sub.devices.size())];
        const auto k = rng.below(device_scalar_count(dev));
        device_scalar(dev, k) += rng.coin() ? 0.5 : -0.5;
    }
    sub.finalize();
    return sub;
}

}  // namespace gridtear
