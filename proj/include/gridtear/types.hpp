#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace gridtear {

using Complex = std::complex<double>;

/// Rectangular complex value in per-unit. The (re, im) pair is the unit of
/// exchange for voltages and currents everywhere in the public API.
struct ComplexPair {
    double re = 0.0;
    double im = 0.0;

    ComplexPair() = default;
    ComplexPair(double r, double i) : re(r), im(i) {}
    explicit ComplexPair(Complex c) : re(c.real()), im(c.imag()) {}

    [[nodiscard]] Complex to_complex() const { return {re, im}; }
    [[nodiscard]] double abs() const { return std::hypot(re, im); }
    [[nodiscard]] bool finite() const { return std::isfinite(re) && std::isfinite(im); }

    ComplexPair operator+(const ComplexPair& o) const { return {re + o.re, im + o.im}; }
    ComplexPair operator-(const ComplexPair& o) const { return {re - o.re, im - o.im}; }
    ComplexPair operator*(double s) const { return {re * s, im * s}; }
};

/// Rotation by an angle, i.e. multiplication by e^{j*theta} acting on (re, im).
inline ComplexPair rotate(const ComplexPair& v, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * v.re - s * v.im, s * v.re + c * v.im};
}

enum class PhaseDomain {
    PositiveSequence,  ///< single equivalent phase {P}
    ThreePhase,        ///< phase set {A, B, C}
};

inline int phase_count(PhaseDomain d) { return d == PhaseDomain::PositiveSequence ? 1 : 3; }

inline const char* phase_name(PhaseDomain d, int phase) {
    static const char* abc[] = {"A", "B", "C"};
    return d == PhaseDomain::PositiveSequence ? "P" : abc[phase];
}

enum class NodeKind { Slack, Injection, ZeroInjection, Boundary };

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gridtear
