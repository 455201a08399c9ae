#pragma once

#include <array>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "gridtear/types.hpp"

namespace gridtear {

/// 2*pi/3, the symmetrical-component rotation angle.
inline constexpr double kSeqAngle = 2.0 * std::numbers::pi / 3.0;

/// Positive-sequence component of a three-phase current set:
/// I_P = (1/3) * (i_A + R(a)*i_B + R(a)^2*i_C), with R(a) rotation by 2*pi/3.
/// Zero and negative sequence components are discarded.
ComplexPair positive_sequence_of(const std::array<ComplexPair, 3>& i_abc);

/// Balanced three-phase image of a positive-sequence voltage:
/// v_A = V_P, v_B = R(a)^2*V_P, v_C = R(a)*V_P.
std::array<ComplexPair, 3> distribute_voltage(const ComplexPair& v_pos);

/// One T<->D interconnection with the latest epoch values of its coupling
/// sources. After gauss_update, v_abc is the exact image of V_P under
/// distribute_voltage and I_P the exact image of i_abc under
/// positive_sequence_of.
struct CouplingPort {
    std::string t_net;
    std::string t_node;
    std::string d_net;
    std::string d_bus;

    ComplexPair v_poi{1.0, 0.0};         ///< transmission POI voltage V_P
    ComplexPair i_pos{0.0, 0.0};         ///< positive-sequence current source I_P
    std::array<ComplexPair, 3> v_abc{};  ///< distribution-side voltage sources
    std::array<ComplexPair, 3> i_abc{};  ///< latest distribution boundary currents

    /// Dual exchange: the transmission POI balance-row dual and the
    /// distribution sub-problem's boundary-voltage dual gradient.
    ComplexPair lambda_t{0.0, 0.0};
    std::array<ComplexPair, 3> lambda_d{};

    /// Objective mirror for the distribution port-current variables,
    /// the adjoint image of lambda_t under the current-coupling map.
    [[nodiscard]] std::array<ComplexPair, 3> dual_current_cost() const {
        auto q = distribute_voltage(lambda_t);
        for (auto& c : q) c = c * (1.0 / 3.0);
        return q;
    }

    /// Objective mirror for the transmission POI voltage, the adjoint image
    /// of lambda_d under the voltage-coupling map.
    [[nodiscard]] ComplexPair dual_voltage_cost() const {
        return positive_sequence_of(lambda_d) * 3.0;
    }
};

/// Flat initialization: V_P = 1 at angle 0, I_P = 0, duals zero.
CouplingPort make_port(std::string t_net, std::string t_node, std::string d_net,
                       std::string d_bus);

/// Per-port boundary reading inside a BoundaryMessage.
struct PortReading {
    int port = -1;                      ///< index into the case's coupling list
    std::vector<ComplexPair> voltage;   ///< V_P (transmission, 1 entry) or v_abc echo
    std::vector<ComplexPair> current;   ///< i_abc (distribution) or empty
    std::vector<double> lambda_ext;     ///< 2 entries (transmission) or 6 (distribution)
};

/// Boundary-states-only epoch message. Contains no internal node states and
/// no measurement values; validate_boundary_message enforces that contract.
struct BoundaryMessage {
    int epoch = 0;
    std::string net;
    std::vector<PortReading> ports;
};

/// Serialize to one JSON line (protocol version "v1"); parse back.
/// parse errors carry the byte offset of the failure.
std::string message_to_line(const BoundaryMessage& m);
BoundaryMessage message_from_line(const std::string& line);

/// Privacy contract check run on every send: only the listed boundary node
/// ids may appear, and only boundary-shaped fields exist.
void validate_boundary_message(const BoundaryMessage& m,
                               const std::vector<std::string>& allowed_nodes);

/// One supervisory Gauss step: read i_abc from distribution messages and V_P
/// from transmission messages, recompute I_P and v_abc through the coupling
/// maps, and refresh the dual exchange. Pure function of (ports, messages);
/// a missing message raises ConvergenceError naming the sub-network.
/// The dual exchange is under-relaxed by dual_relax: oscillatory dual modes
/// (gross errors under WLS push the loop gain past one) are damped without
/// moving the fixed point.
std::vector<CouplingPort> gauss_update(const std::vector<CouplingPort>& ports,
                                       const std::vector<BoundaryMessage>& msgs,
                                       const std::vector<std::string>& expected_nets,
                                       double dual_relax = 0.5);

/// Infinity-norm change across all port quantities (primal values and dual
/// mirrors); inclusive comparison against eps.
bool epoch_converged(const std::vector<CouplingPort>& prev,
                     const std::vector<CouplingPort>& next, double eps);

double port_delta_inf(const std::vector<CouplingPort>& prev,
                      const std::vector<CouplingPort>& next);

}  // namespace gridtear
