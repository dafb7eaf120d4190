#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace kslab::ode {

struct Options {
    double rtol = 1e-11;
    double atol = 0.0;
    double h0 = 0.0;          // initial step guess; 0 picks one automatically
    long max_steps = 20'000'000;
};

namespace detail {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

} // namespace detail

// Integrates y' = f(t, y) from t0 to t1 (either direction) with an adaptive
// Dormand-Prince 5(4) pair. f has signature void(double t, const State&, State&).
template <std::size_t N, class F>
void integrate(F&& f, double t0, double t1, std::array<double, N>& y, const Options& opt = {}) {
    using State = std::array<double, N>;
    using namespace detail;
    if (t1 == t0) return;
    const double dir = t1 > t0 ? 1.0 : -1.0;
    double t = t0;
    double h = opt.h0 != 0.0 ? std::abs(opt.h0) * dir : (t1 - t0) * 1e-4;

    State k1, k2, k3, k4, k5, k6, k7, ytmp, ynew;
    f(t, y, k1);
    bool have_k1 = true;
    for (long step = 0; step < opt.max_steps; ++step) {
        if ((t + h - t1) * dir > 0.0) h = t1 - t;
        if (!have_k1) f(t, y, k1);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
        f(t + c2 * h, ytmp, k2);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        f(t + c3 * h, ytmp, k3);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        f(t + c4 * h, ytmp, k4);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        f(t + c5 * h, ytmp, k5);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        f(t + h, ytmp, k6);
        for (std::size_t i = 0; i < N; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        f(t + h, ynew, k7);

        double err = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                                  e7 * k7[i]);
            const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            if (sc > 0.0) err += (e / sc) * (e / sc);
            else if (e != 0.0) err += 1e30;
        }
        err = std::sqrt(err / N);

        if (err <= 1.0) {
            t += h;
            y = ynew;
            k1 = k7; // FSAL
            have_k1 = true;
            if ((t - t1) * dir >= 0.0) return;
        } else {
            have_k1 = false;
        }
        double fac = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
        fac = std::clamp(fac, 0.2, 5.0);
        h *= fac;
        if (std::abs(h) < std::abs(t1 - t0) * 1e-15)
            throw std::runtime_error("ode::integrate: step size underflow");
    }
    throw std::runtime_error("ode::integrate: max step count exceeded");
}

// Integrates across a monotone sequence of nodes, invoking visit(index, t, y)
// at every node including the first.
template <std::size_t N, class F, class V>
void integrate_nodes(F&& f, const std::vector<double>& tnodes, std::array<double, N>& y,
                     V&& visit, const Options& opt = {}) {
    if (tnodes.empty()) return;
    visit(std::size_t{0}, tnodes[0], y);
    Options o = opt;
    for (std::size_t i = 1; i < tnodes.size(); ++i) {
        integrate(f, tnodes[i - 1], tnodes[i], y, o);
        if (o.h0 == 0.0) o.h0 = (tnodes[i] - tnodes[i - 1]) * 0.1;
        visit(i, tnodes[i], y);
    }
}

} // namespace kslab::ode
