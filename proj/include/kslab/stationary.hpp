#pragma once

#include <cmath>
#include <numbers>

#include "kslab/quadrature.hpp"

namespace kslab::stationary {

struct Values {
    double u = 0.0;
    double v = 0.0;
    double du = 0.0;
    double dv = 0.0;
};

// Childress-Percus profile u_s = 8/(1+r^2)^2, v_s = -2 log(1+r^2).
inline Values eval(double r) {
    const double s = 1.0 + r * r;
    return {8.0 / (s * s), -2.0 * std::log(s), -32.0 * r / (s * s * s), -4.0 * r / s};
}

// int_0^R u_s 2 pi r dr; the analytic value is 8 pi R^2/(1+R^2).
inline double mass(double R) {
    return quad::integrate(
        [](double r) {
            const double s = 1.0 + r * r;
            return 16.0 * std::numbers::pi * r / (s * s);
        },
        0.0, R);
}

inline double mass_exact(double R) {
    return 8.0 * std::numbers::pi * R * R / (1.0 + R * R);
}

} // namespace kslab::stationary
