#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace kslab::quad {

namespace detail {

// Gauss-Kronrod 15(7) nodes and weights on [-1, 1].
constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000};
constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714};
constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};

template <class F>
void gk15(F&& f, double a, double b, double& result, double& abserr) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    const double fc = f(c);
    double resg = fc * wg[3];
    double resk = fc * wgk[7];
    for (int j = 0; j < 7; ++j) {
        const double x = h * xgk[j];
        const double f1 = f(c - x), f2 = f(c + x);
        resk += wgk[j] * (f1 + f2);
        if (j % 2 == 1) resg += wg[j / 2] * (f1 + f2);
    }
    result = resk * h;
    abserr = std::abs((resk - resg) * h);
}

template <class F>
double adapt(F&& f, double a, double b, double tol, int depth) {
    double v, e;
    gk15(f, a, b, v, e);
    if (e <= tol || depth >= 48) return v;
    const double c = 0.5 * (a + b);
    return adapt(f, a, c, 0.5 * tol, depth + 1) + adapt(f, c, b, 0.5 * tol, depth + 1);
}

} // namespace detail

// Adaptive Gauss-Kronrod integration of f over [a, b].
template <class F>
double integrate(F&& f, double a, double b, double rtol = 1e-12, double atol = 0.0) {
    if (a == b) return 0.0;
    double v0, e0;
    detail::gk15(f, a, b, v0, e0);
    const double tol = std::max(atol, rtol * std::max(std::abs(v0), 1e-300));
    if (e0 <= tol) return v0;
    const double c = 0.5 * (a + b);
    return detail::adapt(f, a, c, 0.5 * tol, 1) + detail::adapt(f, c, b, 0.5 * tol, 1);
}

} // namespace kslab::quad
