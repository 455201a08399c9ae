#include <doctest.h>

#include <charconv>
#include <cstring>
#include <map>
#include <set>

#include "gridtear/casegen.hpp"
#include "gridtear/harness.hpp"
#include "gridtear/transport.hpp"

using namespace gridtear;

namespace {

CombinedCase measured_2net(double sigma, std::uint64_t seed) {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = sigma;
    gen.seed = seed;
    return generate_measurements(c, pf, gen);
}

bool bitwise_equal(const std::vector<Estimate>& a, const std::vector<Estimate>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t s = 0; s < a.size(); ++s) {
        const auto& va = a[s].voltages[0];
        const auto& vb = b[s].voltages[0];
        if (va.size() != vb.size()) return false;
        if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(ComplexPair)) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("run_acse: single sub-network equals a direct solve in one epoch") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    CombinedCase single;
    single.subnetworks.push_back(c.subnetworks[0]);
    single.subnetworks[0].nodes[4].kind = NodeKind::Injection;  // t05 loses its port
    single.subnetworks[0].finalize();
    CombinedCase pfcase = single;
    const auto pf1 = combined_power_flow(pfcase);
    MeasurementGenOptions gen;
    gen.sigma = 0.01;
    gen.seed = 6;
    auto measured = generate_measurements(pfcase, pf1, gen);

    RunConfig rc;
    const auto run = run_acse(measured, rc);
    CHECK(run.converged);
    CHECK(run.epochs == 1);

    const auto direct = pdip_solve(assemble_standalone(measured.subnetworks[0], EstMode::Wlav));
    REQUIRE(direct.converged);
    CHECK(run.estimates[0].objective == doctest::Approx(direct.objective).epsilon(1e-12));
    for (std::size_t i = 0; i < direct.voltages[0].size(); ++i) {
        CHECK(run.estimates[0].voltages[0][i].re == doctest::Approx(direct.voltages[0][i].re));
        CHECK(run.estimates[0].voltages[0][i].im == doctest::Approx(direct.voltages[0][i].im));
    }
}

TEST_CASE("run_acse: zero-noise distributed matches monolithic and the truth") {
    auto c = make_desk_2net();
    const auto pf = combined_power_flow(c);
    MeasurementGenOptions gen;
    gen.sigma = 0.0;
    gen.seed = 1;
    auto measured = generate_measurements(c, pf, gen);

    RunConfig rc;
    const auto dist = run_acse(measured, rc);
    REQUIRE(dist.converged);
    const auto mono = solve_monolithic(measured, rc);

    const auto xd = state_vector_est(measured, dist.estimates);
    const auto xm = state_vector_est(measured, mono.estimates);
    const auto xt = state_vector(measured, pf.voltages);
    CHECK((xd - xm).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK((xm - xt).cwiseAbs().maxCoeff() <= 1e-8);  // monolithic vs power-flow oracle
    CHECK(rmse(xd, xt) <= 1e-6);
}

TEST_CASE("run_acse: deterministic replay") {
    const auto measured = measured_2net(0.01, 33);
    RunConfig rc;
    const auto r1 = run_acse(measured, rc);
    const auto r2 = run_acse(measured, rc);
    CHECK(r1.epochs == r2.epochs);
    CHECK(bitwise_equal(r1.estimates, r2.estimates));
    REQUIRE(r1.reports.size() == r2.reports.size());
    for (std::size_t e = 0; e < r1.reports.size(); ++e) {
        CHECK(r1.reports[e].port_delta == r2.reports[e].port_delta);  // bitwise
        for (std::size_t w = 0; w < r1.reports[e].workers.size(); ++w) {
            CHECK(r1.reports[e].workers[w].iterations == r2.reports[e].workers[w].iterations);
        }
    }
}

TEST_CASE("run_acse: serial reference and OpenMP workers agree bitwise") {
    const auto measured = measured_2net(0.01, 12);
    RunConfig serial;
    serial.parallel = false;
    RunConfig parallel;
    parallel.parallel = true;
    const auto rs = run_acse(measured, serial);
    const auto rp = run_acse(measured, parallel);
    CHECK(rs.epochs == rp.epochs);
    CHECK(bitwise_equal(rs.estimates, rp.estimates));
}

TEST_CASE("run_acse: socket transport matches in-process bitwise") {
    const auto measured = measured_2net(0.01, 21);
    RunConfig inproc;
    RunConfig sock;
    sock.transport = TransportMode::Socket;
    const auto ri = run_acse(measured, inproc);
    const auto rsock = run_acse(measured, sock);
    CHECK(ri.epochs == rsock.epochs);
    const auto xi = state_vector_est(measured, ri.estimates);
    const auto xs = state_vector_est(measured, rsock.estimates);
    CHECK((xi - xs).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("run_acse: epoch barrier and privacy over the transcript") {
    auto measured = measured_2net(0.01, 44);
    RunConfig rc;
    rc.log_transcript = true;
    const auto run = run_acse(measured, rc);
    REQUIRE(run.converged);
    REQUIRE(!run.transcript.empty());

    // Barrier: per epoch, exactly one message per net, epochs in order.
    std::map<int, std::set<std::string>> by_epoch;
    for (const auto& line : run.transcript) {
        if (line.find("\"net\"") == std::string::npos) continue;  // port acks carry no net
        const auto m = message_from_line(line);
        CHECK(by_epoch[m.epoch].insert(m.net).second);
    }
    for (int e = 1; e <= run.epochs; ++e) {
        CHECK(by_epoch[e].size() == measured.subnetworks.size());
    }

    // Privacy: no internal node id and no measured value crosses the wire.
    std::string all;
    for (const auto& line : run.transcript) {
        all += line;
        all += '\n';
    }
    std::set<std::string> boundary;
    for (const auto& cp : measured.couplings) {
        boundary.insert(cp.t_node);
        boundary.insert(cp.d_bus);
    }
    for (const auto& sub : measured.subnetworks) {
        for (const auto& nd : sub.nodes) {
            if (boundary.count(nd.id) != 0u) continue;
            CHECK(all.find("\"" + nd.id + "\"") == std::string::npos);
        }
        for (const auto& dev : sub.devices) {
            for (std::size_t k = 0; k < device_scalar_count(dev); ++k) {
                char buf[32];
                const auto res = std::to_chars(buf, buf + sizeof(buf), device_scalar(dev, k));
                const std::string v(buf, res.ptr);
                if (v.size() >= 12) {  // full-precision doubles only
                    CHECK(all.find(v) == std::string::npos);
                }
            }
        }
    }
}

TEST_CASE("run_acse: max_epochs exhaustion returns a non-converged result") {
    const auto measured = measured_2net(0.01, 3);
    RunConfig rc;
    rc.max_epochs = 2;
    const auto run = run_acse(measured, rc);
    CHECK(!run.converged);
    CHECK(run.epochs == 2);
    CHECK(run.reports.size() == 2);
}

TEST_CASE("run_acse: decomposition ratio warnings") {
    // A feeder with only 2 non-boundary buses has ratio 12/6 = 2 < 10.
    const auto c = make_ladder(12, 1, 3);
    const auto pf = combined_power_flow(c);
    auto measured = generate_measurements(c, pf, {0.0, 1, 0.0, TInjectionDevices::Both});
    const auto run = run_acse(measured, RunConfig{});
    CHECK(!run.warnings.empty());
}

TEST_CASE("solve_monolithic: dimension cap") {
    const auto measured = measured_2net(0.0, 1);
    RunConfig rc;
    rc.monolithic_cap = 10;
    CHECK_THROWS_WITH_AS(static_cast<void>(solve_monolithic(measured, rc)),
                         doctest::Contains("cap"), ValidationError);
}

TEST_CASE("transport channels") {
    SUBCASE("in-process round trip") {
        auto pair = transport(TransportMode::InProcess);
        pair.near->send_line("{\"v\":\"v1\"}");
        CHECK(pair.far->recv_line() == "{\"v\":\"v1\"}");
        pair.far->send_line("pong");
        CHECK(pair.near->recv_line() == "pong");
    }
    SUBCASE("socket round trip on loopback") {
        auto pair = transport(TransportMode::Socket);
        pair.near->send_line("hello");
        CHECK(pair.far->recv_line() == "hello");
        pair.far->send_line("world");
        CHECK(pair.near->recv_line() == "world");
    }
    SUBCASE("connection loss surfaces as a protocol error") {
        auto pair = transport(TransportMode::Socket);
        pair.near.reset();
        CHECK_THROWS_AS(static_cast<void>(pair.far->recv_line()), ProtocolError);
    }
}
