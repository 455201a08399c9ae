#pragma once

#include <cstdint>
#include <vector>

#include "gridtear/layout.hpp"
#include "gridtear/netmodel.hpp"

namespace gridtear {

/// Split representation of a signed residual: eta = plus - minus with
/// plus, minus >= 0. At a converged WLAV optimum plus*minus <= 1e-8.
struct NoiseSplit {
    double plus = 0.0;
    double minus = 0.0;
};

struct RecoveredResidual {
    double value = 0.0;      ///< plus - minus
    double magnitude = 0.0;  ///< plus + minus
    bool complementary = true;
};

/// eta = plus - minus; |eta| reported as plus + minus. Throws ValidationError
/// on a negative component; flags non-complementary splits.
RecoveredResidual recover_residual(const NoiseSplit& split);

/// Smart-meter feature transform: G = P/|V|^2, B = Q/|V|^2 (|V| > 0).
struct GbPair {
    double g = 0.0;
    double b = 0.0;
};
GbPair smart_meter_feature_transform(double p, double q, double vm);

/// Context for row building: the host sub-network viewed through a layout.
/// Keeps a row-major admittance copy so builders can walk KCL rows; layouts
/// are small index maps, so the context owns its copy.
struct RowContext {
    const SubNetwork& sub;
    StateLayout layout;
    int net = 0;  ///< net index within the layout (0 for sub-problem views)
    Eigen::SparseMatrix<Complex, Eigen::RowMajor> yrow;

    RowContext(const SubNetwork& s, StateLayout l, int n = 0)
        : sub(s), layout(std::move(l)), net(n), yrow(s.admittance()) {}
};

// Row builders. Each measured quantity produces a (real, imag) row pair with
// split noise columns of the device's weight; zero-injection rows are hard.
// Current/power sign conventions are documented in devices.hpp; residuals are
// oriented so the optimal eta reproduces the negated measurement error.
std::vector<ConstraintRow> pmu_injection_rows(const PhasorInjection& d, const RowContext& ctx,
                                              int device_index = -1);
std::vector<ConstraintRow> rms_injection_rows(const RmsPowerInjection& d, const RowContext& ctx,
                                              int device_index = -1);
std::vector<ConstraintRow> phasor_voltage_rows(int node, const std::vector<ComplexPair>& measured,
                                               double weight, const RowContext& ctx,
                                               int device_index = -1);
std::vector<ConstraintRow> rms_flow_rows(const RmsFlow& d, const RowContext& ctx,
                                         int device_index = -1);
std::vector<ConstraintRow> phasor_flow_rows(const PhasorFlow& d, const RowContext& ctx,
                                            int device_index = -1);
std::vector<ConstraintRow> zero_injection_rows(int node, const RowContext& ctx);

/// All rows of one device (dispatch over the variant).
std::vector<ConstraintRow> device_rows(const MeasurementDevice& d, const RowContext& ctx,
                                       int device_index);

/// Device rows plus zero-injection rows for the whole sub-network, in device
/// order then node order. Port rows are appended by problem assembly.
std::vector<ConstraintRow> measurement_rows(const RowContext& ctx);

// ---------------------------------------------------------------------------
// Synthetic measurements
// ---------------------------------------------------------------------------

/// Device mix at transmission injection nodes. Both kinds together are the
/// redundant transmission measurement set; phasor devices carry the voltage
/// anchoring that keeps gross errors rejectable.
enum class TInjectionDevices { Rms, Phasor, Both };

struct MeasurementGenOptions {
    double sigma = 0.0;            ///< per-unit noise std on every measured scalar
    std::uint64_t seed = 1;
    double flow_fraction = 0.25;   ///< fraction of transmission branches given RMS flow meters
    TInjectionDevices t_injections = TInjectionDevices::Both;
    /// Weight per measured scalar; 1/sigma when sigma > 0.
    [[nodiscard]] double weight() const { return sigma > 0.0 ? 1.0 / sigma : 1.0; }
};

/// Manufacture device lists for every sub-network from a power-flow truth:
/// transmission networks get injection devices at all injection nodes (mix
/// per t_injections), a phasor-voltage-bearing device at the slack, and RMS
/// flow meters on a seeded random subset of branches; distribution networks
/// get smart meters at all load nodes. Each measured scalar is true value +
/// Normal(0, sigma^2). Deterministic under a fixed seed. The input case is
/// returned with devices replaced.
CombinedCase generate_measurements(const CombinedCase& c, const PowerFlowResult& truth,
                                   const MeasurementGenOptions& opts);

struct BadDataRecord {
    int net = 0;
    int device = 0;       ///< device index within the sub-network
    std::size_t scalar = 0;  ///< scalar index within the device
    int phase = 0;
    double applied = 0.0;  ///< signed deviation that was added
};

/// Corrupt `count` measured scalars picked uniformly at random across the
/// whole case (seeded), adding +/- magnitude each. Returns the corrupted case
/// and the ground-truth records for localization scoring. Errors when count
/// exceeds the available scalars or any sub-network receives >= 15 hits.
std::pair<CombinedCase, std::vector<BadDataRecord>> inject_bad_data(const CombinedCase& c,
                                                                    int count, double magnitude,
                                                                    std::uint64_t seed);

}  // namespace gridtear
