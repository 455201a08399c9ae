#include "gridtear/devices.hpp"

namespace gridtear {

// Scalar enumeration orders (per phase, phases outermost):
//   PhasorInjection: I_re, I_im, V_re, V_im
//   RmsPowerInjection: P, Q, |V|
//   RmsFlow: P, Q, |V|
//   PhasorFlow: I_re, I_im

std::size_t device_scalar_count(const MeasurementDevice& d) {
    struct V {
        std::size_t operator()(const PhasorInjection& x) const { return x.current.size() * 4; }
        std::size_t operator()(const RmsPowerInjection& x) const { return x.p.size() * 3; }
        std::size_t operator()(const RmsFlow& x) const { return x.p.size() * 3; }
        std::size_t operator()(const PhasorFlow& x) const { return x.current.size() * 2; }
    };
    return std::visit(V{}, d);
}

double& device_scalar(MeasurementDevice& d, std::size_t i) {
    struct V {
        std::size_t i;
        double& operator()(PhasorInjection& x) const {
            const std::size_t ph = i / 4, k = i % 4;
            switch (k) {
                case 0: return x.current[ph].re;
                case 1: return x.current[ph].im;
                case 2: return x.voltage[ph].re;
                default: return x.voltage[ph].im;
            }
        }
        double& operator()(RmsPowerInjection& x) const {
            const std::size_t ph = i / 3, k = i % 3;
            return k == 0 ? x.p[ph] : k == 1 ? x.q[ph] : x.vm[ph];
        }
        double& operator()(RmsFlow& x) const {
            const std::size_t ph = i / 3, k = i % 3;
            return k == 0 ? x.p[ph] : k == 1 ? x.q[ph] : x.vm[ph];
        }
        double& operator()(PhasorFlow& x) const {
            const std::size_t ph = i / 2;
            return i % 2 == 0 ? x.current[ph].re : x.current[ph].im;
        }
    };
    return std::visit(V{i}, d);
}

double device_scalar(const MeasurementDevice& d, std::size_t i) {
    return device_scalar(const_cast<MeasurementDevice&>(d), i);
}

int device_scalar_phase(const MeasurementDevice& d, std::size_t i) {
    struct V {
        std::size_t i;
        int operator()(const PhasorInjection&) const { return static_cast<int>(i / 4); }
        int operator()(const RmsPowerInjection&) const { return static_cast<int>(i / 3); }
        int operator()(const RmsFlow&) const { return static_cast<int>(i / 3); }
        int operator()(const PhasorFlow&) const { return static_cast<int>(i / 2); }
    };
    return std::visit(V{i}, d);
}

std::string device_scalar_label(const MeasurementDevice& d, std::size_t i) {
    static const char* pmu[] = {"I_re", "I_im", "V_re", "V_im"};
    static const char* rms[] = {"P", "Q", "Vm"};
    static const char* flow[] = {"I_re", "I_im"};
    struct V {
        std::size_t i;
        std::string operator()(const PhasorInjection&) const { return pmu[i % 4]; }
        std::string operator()(const RmsPowerInjection&) const { return rms[i % 3]; }
        std::string operator()(const RmsFlow&) const { return rms[i % 3]; }
        std::string operator()(const PhasorFlow&) const { return flow[i % 2]; }
    };
    return std::visit(V{i}, d) + "[" + std::to_string(device_scalar_phase(d, i)) + "]";
}

}  // namespace gridtear
