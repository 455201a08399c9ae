#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gridtear/casegen.hpp"
#include "gridtear/estcore.hpp"
#include "gridtear/measmodel.hpp"
#include "gridtear/rng.hpp"

using namespace gridtear;

namespace {

Eigen::MatrixXcd series1(Complex y) {
    Eigen::MatrixXcd m(1, 1);
    m(0, 0) = y;
    return m;
}

SubNetwork two_node(Complex y) {
    SubNetwork s;
    s.id = "s";
    s.domain = PhaseDomain::PositiveSequence;
    Node a;
    a.id = "n1";
    a.kind = NodeKind::Slack;
    a.voltage = {{1.0, 0.0}};
    Node b;
    b.id = "n2";
    b.kind = NodeKind::Injection;
    s.nodes = {a, b};
    Branch br;
    br.from = "n1";
    br.to = "n2";
    br.series = series1(y);
    s.branches = {br};
    s.finalize();
    return s;
}

/// Evaluate every row at a direct voltage assignment (vars packed per the
/// standalone layout, eta terms excluded).
Eigen::VectorXd eval_rows(const std::vector<ConstraintRow>& rows, const StateLayout& layout,
                          const Eigen::VectorXcd& v) {
    Eigen::VectorXd x(layout.num_vars());
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        x[2 * i] = v[i].real();
        x[2 * i + 1] = v[i].imag();
    }
    Eigen::VectorXd out(static_cast<int>(rows.size()));
    const Eigen::VectorXd ext(0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out[static_cast<int>(r)] = eval_row(rows[r], x, ext);
    }
    return out;
}

}  // namespace

TEST_CASE("recover_residual") {
    auto r = recover_residual({3.0, 0.0});
    CHECK(r.value == 3.0);
    CHECK(r.magnitude == 3.0);
    CHECK(r.complementary);

    r = recover_residual({0.0, 0.0});
    CHECK(r.value == 0.0);

    r = recover_residual({0.2, 0.05});
    CHECK(r.value == doctest::Approx(0.15));
    CHECK(r.magnitude == doctest::Approx(0.25));
    CHECK(!r.complementary);

    CHECK_THROWS_AS(recover_residual({-0.1, 0.0}), ValidationError);
}

TEST_CASE("smart meter feature transform") {
    auto gb = smart_meter_feature_transform(1.0, 0.0, 1.0);
    CHECK(gb.g == doctest::Approx(1.0));
    CHECK(gb.b == doctest::Approx(0.0));

    gb = smart_meter_feature_transform(0.5, 0.25, 0.98);
    CHECK(gb.g == doctest::Approx(0.5 / (0.98 * 0.98)).epsilon(1e-12));
    CHECK(gb.b == doctest::Approx(0.25 / (0.98 * 0.98)).epsilon(1e-12));
    CHECK(gb.g == doctest::Approx(0.52061641).epsilon(1e-7));

    CHECK_THROWS_AS(smart_meter_feature_transform(0.5, 0.25, 0.0), ValidationError);
}

TEST_CASE("pmu injection rows: zero admittance reduces to a pure noise row") {
    SubNetwork s;
    s.id = "iso";
    s.domain = PhaseDomain::PositiveSequence;
    Node n;
    n.id = "n1";
    n.kind = NodeKind::Injection;
    s.nodes = {n};
    s.finalize_with_admittance(SparseComplex(1, 1));

    RowContext ctx(s, StateLayout::standalone(s));
    PhasorInjection d;
    d.node = "n1";
    d.current = {{0.0, 0.0}};
    d.voltage = {{1.0, 0.0}};
    d.weight = 1.0;
    const auto rows = pmu_injection_rows(d, ctx, 0);
    REQUIRE(rows.size() == 4);  // current pair + redundant voltage pair
    CHECK(rows[0].terms.empty());
    CHECK(rows[0].constant == 0.0);
    CHECK(rows[0].weight == 1.0);
}

TEST_CASE("pmu injection rows satisfied at the true state") {
    // y = 1, V = (1, 0.9): injection at node 1 is +0.1 into the network.
    auto s = two_node(Complex{1.0, 0.0});
    RowContext ctx(s, StateLayout::standalone(s));
    PhasorInjection d;
    d.node = "n1";
    d.current = {{0.1, 0.0}};
    d.voltage = {{1.0, 0.0}};
    d.weight = 1.0;
    const auto rows = pmu_injection_rows(d, ctx, 0);

    Eigen::VectorXcd v(2);
    v << Complex{1.0, 0.0}, Complex{0.9, 0.0};
    const auto res = eval_rows(rows, ctx.layout, v);
    CHECK(res.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rms injection rows: zero load degenerates to the zero-injection row") {
    auto s = two_node(Complex{1.0, -2.0});
    s.nodes[1].kind = NodeKind::Injection;
    RowContext ctx(s, StateLayout::standalone(s));

    RmsPowerInjection d;
    d.node = "n2";
    d.p = {0.0};
    d.q = {0.0};
    d.vm = {1.0};
    d.weight = 2.0;
    const auto soft = rms_injection_rows(d, ctx, 0);

    auto zi = s;
    zi.nodes[1].kind = NodeKind::ZeroInjection;
    zi.finalize();
    RowContext zctx(zi, StateLayout::standalone(zi));
    const auto hard = zero_injection_rows(1, zctx);

    REQUIRE(soft.size() == hard.size());
    for (std::size_t r = 0; r < soft.size(); ++r) {
        REQUIRE(soft[r].terms.size() == hard[r].terms.size());
        for (std::size_t k = 0; k < soft[r].terms.size(); ++k) {
            CHECK(soft[r].terms[k].first == hard[r].terms[k].first);
            CHECK(soft[r].terms[k].second == doctest::Approx(hard[r].terms[k].second));
        }
        CHECK(soft[r].weight == 2.0);
        CHECK(hard[r].weight == 0.0);
    }
}

TEST_CASE("device rows are exactly satisfied at power-flow truth") {
    // Every device type, measurements manufactured noise-free from the truth.
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.0;
    gen.seed = 3;
    gen.flow_fraction = 0.4;
    auto measured = generate_measurements(c, pf, gen);

    // Add the remaining device types by hand on the transmission side.
    {
        auto& t = measured.subnetworks[0];
        const auto& v = pf.voltages[0];
        const auto& br = t.branches[0];
        const int f = t.node_index(br.from);
        const int to = t.node_index(br.to);
        Complex iij = br.series(0, 0) * (v[f] - v[to]) + br.shunt_from(0, 0) * v[f];
        PhasorFlow pflow;
        pflow.from = br.from;
        pflow.to = br.to;
        pflow.current = {ComplexPair(iij)};
        pflow.weight = 1.0;
        t.devices.push_back(pflow);
        t.finalize();
    }

    for (std::size_t s = 0; s < measured.subnetworks.size(); ++s) {
        const auto& sub = measured.subnetworks[s];
        RowContext ctx(sub, StateLayout::standalone(sub));
        const auto rows = measurement_rows(ctx);
        const auto res = eval_rows(rows, ctx.layout, pf.voltages[s]);
        CHECK(res.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rms injection rows reproduce measured P,Q at the true voltage") {
    // V * conj(I_GB) must equal (P, Q) when |V| matches the measurement.
    const double p = 0.23, q = 0.11, vm = 1.013;
    const auto gb = smart_meter_feature_transform(p, q, vm);
    const Complex v = std::polar(vm, -0.12);
    const Complex igb = Complex{gb.g, -gb.b} * v;
    const Complex s = v * std::conj(igb);
    CHECK(s.real() == doctest::Approx(p).epsilon(1e-9));
    CHECK(s.imag() == doctest::Approx(q).epsilon(1e-9));
}

TEST_CASE("every constraint row is affine") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.02;
    gen.seed = 9;
    auto measured = generate_measurements(c, pf, gen);

    Rng rng(17);
    for (std::size_t s = 0; s < measured.subnetworks.size(); ++s) {
        const auto& sub = measured.subnetworks[s];
        RowContext ctx(sub, StateLayout::standalone(sub));
        const auto rows = measurement_rows(ctx);
        Eigen::VectorXcd v(sub.dim());
        for (int i = 0; i < sub.dim(); ++i) v[i] = Complex{rng.normal(), rng.normal()};
        const auto rx = eval_rows(rows, ctx.layout, v);
        const auto r2x = eval_rows(rows, ctx.layout, Eigen::VectorXcd(2.0 * v));
        const auto r0 = eval_rows(rows, ctx.layout, Eigen::VectorXcd(Eigen::VectorXcd::Zero(sub.dim())));
        CHECK((r2x - 2.0 * rx + r0).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("zero-injection rows: definition and device guard") {
    auto s = two_node(Complex{1.0, -2.0});
    s.nodes[1].kind = NodeKind::ZeroInjection;
    s.finalize();
    RowContext ctx(s, StateLayout::standalone(s));
    const auto rows = zero_injection_rows(1, ctx);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].weight == 0.0);

    // Residual equals Y*V at that row for arbitrary voltages.
    Eigen::VectorXcd v(2);
    v << Complex{1.03, -0.02}, Complex{0.97, 0.05};
    const Complex yv = (-Complex{1.0, -2.0}) * v[0] + Complex{1.0, -2.0} * v[1];
    const auto res = eval_rows(rows, ctx.layout, v);
    CHECK(res[0] == doctest::Approx(yv.real()).epsilon(1e-12));
    CHECK(res[1] == doctest::Approx(yv.imag()).epsilon(1e-12));

    CHECK_THROWS_AS(zero_injection_rows(0, ctx), ValidationError);  // not a ZI node

    auto bad = s;
    RmsPowerInjection d;
    d.node = "n2";
    d.p = {0.1};
    d.q = {0.0};
    d.vm = {1.0};
    bad.devices.push_back(d);
    RowContext bctx(bad, StateLayout::standalone(bad));
    CHECK_THROWS_AS(zero_injection_rows(1, bctx), ValidationError);
}

TEST_CASE("eta bookkeeping: one eta pair per soft row, weighted in the objective") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.01;
    gen.seed = 5;
    auto measured = generate_measurements(c, pf, gen);
    const auto p = assemble_standalone(measured.subnetworks[0], EstMode::Wlav);

    // Each eta column appears in exactly one row of the full matrix.
    const auto& g = p.full_matrix();
    for (int col = p.n_core(); col < p.x_size(); ++col) {
        int uses = 0;
        for (SparseReal::InnerIterator it(g, col); it; ++it) ++uses;
        CHECK(uses == 1);
    }
    // Objective weight per eta equals its row's device weight.
    const auto grad = p.objective_gradient(Eigen::VectorXd::Zero(p.x_size()));
    for (int r = 0; r < p.n_rows(); ++r) {
        const auto ref = p.eta_of_row(r);
        if (ref.plus < 0) continue;
        CHECK(grad[ref.plus] == doctest::Approx(p.weights[r]));
        CHECK(grad[ref.minus] == doctest::Approx(p.weights[r]));
    }
}

TEST_CASE("generate_measurements: zero noise reproduces truth; fixed seed reproduces bytes") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.0;
    gen.seed = 11;
    const auto a = generate_measurements(c, pf, gen);

    // sigma = 0: measured == truth exactly; spot-check one smart meter.
    const auto& f = a.subnetworks[1];
    bool found = false;
    for (const auto& dev : f.devices) {
        if (const auto* rms = std::get_if<RmsPowerInjection>(&dev)) {
            const int node = f.node_index(rms->node);
            for (int ph = 0; ph < 3; ++ph) {
                const Complex v = pf.voltages[1][f.yidx(node, ph)];
                CHECK(rms->vm[static_cast<std::size_t>(ph)] == doctest::Approx(std::abs(v)).epsilon(1e-12));
            }
            found = true;
            break;
        }
    }
    CHECK(found);

    gen.sigma = 0.01;
    const auto b1 = generate_measurements(c, pf, gen);
    const auto b2 = generate_measurements(c, pf, gen);
    CHECK(case_to_json(b1) == case_to_json(b2));
    CHECK(case_to_json(b1) != case_to_json(a));
}

TEST_CASE("generate_measurements: noise is centered") {
    // Sample mean of (measured - true) over many draws stays within 4*sigma/sqrt(N).
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    const double sigma = 0.01;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        MeasurementGenOptions gen;
        gen.sigma = sigma;
        gen.seed = seed;
        const auto noisy = generate_measurements(c, pf, gen);
        const auto clean = generate_measurements(c, pf, {0.0, seed, gen.flow_fraction, TInjectionDevices::Both});
        for (std::size_t s = 0; s < noisy.subnetworks.size(); ++s) {
            const auto& dn = noisy.subnetworks[s].devices;
            const auto& dc = clean.subnetworks[s].devices;
            REQUIRE(dn.size() == dc.size());
            for (std::size_t d = 0; d < dn.size(); ++d) {
                for (std::size_t k = 0; k < device_scalar_count(dn[d]); ++k) {
                    sum += device_scalar(dn[d], k) - device_scalar(dc[d], k);
                    ++count;
                }
            }
        }
    }
    REQUIRE(count > 5000);
    const double mean = sum / static_cast<double>(count);
    CHECK(std::abs(mean) < 4.0 * sigma / std::sqrt(static_cast<double>(count)));
}

TEST_CASE("inject_bad_data") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.01;
    gen.seed = 2;
    const auto measured = generate_measurements(c, pf, gen);

    SUBCASE("count 0 leaves devices unchanged") {
        const auto [out, recs] = inject_bad_data(measured, 0, 0.5, 7);
        CHECK(recs.empty());
        CHECK(case_to_json(out) == case_to_json(measured));
    }
    SUBCASE("each corrupted scalar differs by exactly the magnitude") {
        const auto [out, recs] = inject_bad_data(measured, 5, 0.5, 7);
        REQUIRE(recs.size() == 5);
        for (const auto& rec : recs) {
            const double before = device_scalar(
                measured.subnetworks[static_cast<std::size_t>(rec.net)].devices[static_cast<std::size_t>(rec.device)],
                rec.scalar);
            const double after = device_scalar(
                out.subnetworks[static_cast<std::size_t>(rec.net)].devices[static_cast<std::size_t>(rec.device)],
                rec.scalar);
            CHECK(std::abs(after - before) == doctest::Approx(0.5).epsilon(1e-12));
            CHECK(after - before == doctest::Approx(rec.applied).epsilon(1e-12));
        }
    }
    SUBCASE("fixed seed reproduces the corrupted index list") {
        const auto [o1, r1] = inject_bad_data(measured, 4, 0.5, 99);
        const auto [o2, r2] = inject_bad_data(measured, 4, 0.5, 99);
        REQUIRE(r1.size() == r2.size());
        for (std::size_t i = 0; i < r1.size(); ++i) {
            CHECK(r1[i].net == r2[i].net);
            CHECK(r1[i].device == r2[i].device);
            CHECK(r1[i].scalar == r2[i].scalar);
        }
        CHECK(case_to_json(o1) == case_to_json(o2));
    }
    SUBCASE("count beyond the available scalars is rejected") {
        CHECK_THROWS_AS(inject_bad_data(measured, 1000000, 0.5, 1), ValidationError);
    }
}

TEST_CASE("observability: directly measured, empty, and ZI-completed sets") {
    auto s = two_node(Complex{1.0, -3.0});
    s.nodes[0].kind = NodeKind::Injection;
    s.nodes[0].voltage.clear();
    SUBCASE("phasor voltage at each node: observable") {
        RowContext ctx(s, StateLayout::standalone(s));
        std::vector<ConstraintRow> rows;
        for (int node = 0; node < 2; ++node) {
            auto r = phasor_voltage_rows(node, {{1.0, 0.0}}, 1.0, ctx, -1);
            rows.insert(rows.end(), r.begin(), r.end());
        }
        const auto rep = check_observability(ctx.layout, rows);
        CHECK(rep.observable);
        CHECK(rep.deficiency == 0);
    }
    SUBCASE("no measurements: deficiency equals the state count") {
        RowContext ctx(s, StateLayout::standalone(s));
        const auto rep = check_observability(ctx.layout, {});
        CHECK(!rep.observable);
        CHECK(rep.deficiency == 4);
    }
    SUBCASE("three-node chain, end injections, middle ZI: observable") {
        // Line-charging shunts ground the chain, so the nodal balance rows
        // alone pin the voltages (Y_S invertible).
        SubNetwork chain;
        chain.id = "c3";
        chain.domain = PhaseDomain::PositiveSequence;
        for (int i = 1; i <= 3; ++i) {
            Node n;
            n.id = "n" + std::to_string(i);
            n.kind = i == 2 ? NodeKind::ZeroInjection : NodeKind::Injection;
            chain.nodes.push_back(n);
        }
        for (int i = 1; i <= 2; ++i) {
            Branch br;
            br.from = "n" + std::to_string(i);
            br.to = "n" + std::to_string(i + 1);
            br.series = series1(Complex{1.0, -2.0});
            br.shunt_from = series1(Complex{0.0, 0.05});
            br.shunt_to = series1(Complex{0.0, 0.05});
            chain.branches.push_back(br);
        }
        chain.finalize();
        RowContext ctx(chain, StateLayout::standalone(chain));
        std::vector<ConstraintRow> rows;
        for (int node : {0, 2}) {
            PhasorInjection d;
            d.node = chain.nodes[static_cast<std::size_t>(node)].id;
            d.current = {{0.1, 0.0}};
            d.voltage = {{1.0, 0.0}};
            d.weight = 1.0;
            auto r = pmu_injection_rows(d, ctx, -1);
            // Keep only the current-balance rows: drop the redundant voltage
            // pair so the 6x6 Jacobian is exactly the hand-built one.
            rows.insert(rows.end(), r.begin(), r.begin() + 2);
        }
        auto zi = zero_injection_rows(1, ctx);
        rows.insert(rows.end(), zi.begin(), zi.end());
        REQUIRE(rows.size() == 6);

        // Independent oracle: dense rank of the same Jacobian.
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(6, 6);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (const auto& [slot, coeff] : rows[r].terms) {
                jac(static_cast<int>(r), slot.idx) = coeff;
            }
        }
        const auto lu = jac.fullPivLu();
        CHECK(lu.rank() == 6);

        const auto rep = check_observability(ctx.layout, rows);
        CHECK(rep.observable);
        CHECK(rep.deficiency == 0);
    }
}
