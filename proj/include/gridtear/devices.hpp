#pragma once

#include <string>
#include <variant>
#include <vector>

#include "gridtear/types.hpp"

namespace gridtear {

// Measurement devices. Payloads are per-phase vectors whose length matches the
// host sub-network's phase domain (1 for positive sequence, 3 for three-phase).
//
// Conventions:
//  - Phasor currents are measured flowing INTO the node (injection) or from
//    node `from` INTO the branch (flow).
//  - RMS power (P, Q) is consumption-positive at a node, and flow-positive
//    leaving node `from` on a branch; S = V * conj(I).

struct PhasorInjection {
    std::string node;
    std::vector<ComplexPair> current;  ///< measured injection current per phase
    std::vector<ComplexPair> voltage;  ///< redundant voltage phasor per phase
    double weight = 1.0;
};

struct RmsPowerInjection {
    std::string node;
    std::vector<double> p;   ///< consumed real power per phase
    std::vector<double> q;   ///< consumed reactive power per phase
    std::vector<double> vm;  ///< voltage magnitude per phase, > 0
    double weight = 1.0;
};

struct RmsFlow {
    std::string from;
    std::string to;
    std::vector<double> p;   ///< power flowing out of `from` into the branch
    std::vector<double> q;
    std::vector<double> vm;  ///< magnitude at `from`, > 0
    double weight = 1.0;
};

struct PhasorFlow {
    std::string from;
    std::string to;
    std::vector<ComplexPair> current;  ///< branch current out of `from`, per phase
    double weight = 1.0;
};

using MeasurementDevice = std::variant<PhasorInjection, RmsPowerInjection, RmsFlow, PhasorFlow>;

inline const char* device_type_name(const MeasurementDevice& d) {
    struct V {
        const char* operator()(const PhasorInjection&) const { return "PhasorInjection"; }
        const char* operator()(const RmsPowerInjection&) const { return "RmsPowerInjection"; }
        const char* operator()(const RmsFlow&) const { return "RmsFlow"; }
        const char* operator()(const PhasorFlow&) const { return "PhasorFlow"; }
    };
    return std::visit(V{}, d);
}

inline double device_weight(const MeasurementDevice& d) {
    return std::visit([](const auto& v) { return v.weight; }, d);
}

/// Node (or from-node) the device is attached to.
inline const std::string& device_anchor_node(const MeasurementDevice& d) {
    struct V {
        const std::string& operator()(const PhasorInjection& x) const { return x.node; }
        const std::string& operator()(const RmsPowerInjection& x) const { return x.node; }
        const std::string& operator()(const RmsFlow& x) const { return x.from; }
        const std::string& operator()(const PhasorFlow& x) const { return x.from; }
    };
    return std::visit(V{}, d);
}

/// Number of raw measured scalars this device carries (per all phases).
/// Enumeration order is fixed; bad-data injection addresses scalars by it.
std::size_t device_scalar_count(const MeasurementDevice& d);

/// Access the i-th measured scalar (see device_scalar_count).
double& device_scalar(MeasurementDevice& d, std::size_t i);
double device_scalar(const MeasurementDevice& d, std::size_t i);

/// Phase index the i-th scalar belongs to.
int device_scalar_phase(const MeasurementDevice& d, std::size_t i);

/// Human-readable label ("P[B]", "I_re[P]", ...) for reports.
std::string device_scalar_label(const MeasurementDevice& d, std::size_t i);

}  // namespace gridtear
