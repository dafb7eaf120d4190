#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace kslab {

// Log-uniform radial grid: r_i = r0 exp(i*dxi), r_{n-1} = r1.
struct LogGrid {
    double r0 = 1e-3;
    double r1 = 1e3;
    std::size_t n = 4097;
    double dxi = 0.0;
    std::vector<double> r;

    LogGrid() { build(); }
    LogGrid(double a, double b, std::size_t npts) : r0(a), r1(b), n(npts) { build(); }

    void build() {
        if (n < 5 || r0 <= 0.0 || r1 <= r0) throw std::invalid_argument("LogGrid: bad parameters");
        dxi = std::log(r1 / r0) / static_cast<double>(n - 1);
        r.resize(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = r0 * std::exp(static_cast<double>(i) * dxi);
        r.back() = r1;
    }

    // index window [lo, hi] covering radii in [ra, rb]
    std::pair<std::size_t, std::size_t> window(double ra, double rb) const {
        std::size_t lo = 0, hi = n - 1;
        while (lo < n - 1 && r[lo] < ra) ++lo;
        while (hi > 0 && r[hi] > rb) --hi;
        if (hi <= lo + 2) throw std::invalid_argument("LogGrid::window: empty window");
        return {lo, hi};
    }
};

// Cumulative integral I_i = head + int_{r_0}^{r_i} f dr on a log grid, composite
// Simpson in xi. The [0, r_0] head is estimated from a local power law unless
// the integrand is singular-but-integrable with p <= -1, where it must vanish.
inline std::vector<double> cumulative_integral(const LogGrid& g, const std::vector<double>& f,
                                               bool with_head = true) {
    if (f.size() != g.n) throw std::invalid_argument("cumulative_integral: size mismatch");
    std::vector<double> gi(g.n), out(g.n, 0.0);
    for (std::size_t i = 0; i < g.n; ++i) gi[i] = f[i] * g.r[i]; // dr = r dxi
    double head = 0.0;
    if (with_head && f[0] != 0.0 && f[1] != 0.0 && f[0] * f[1] > 0.0) {
        const double p = std::log(std::abs(f[1] / f[0])) / g.dxi;
        if (p > -1.0 + 1e-9) head = f[0] * g.r[0] / (p + 1.0);
    }
    out[0] = head;
    const double h = g.dxi;
    for (std::size_t i = 1; i < g.n; ++i) {
        if (i >= 2)
            out[i] = out[i - 2] + h / 3.0 * (gi[i - 2] + 4.0 * gi[i - 1] + gi[i]);
        else
            out[i] = out[i - 1] + h / 12.0 * (5.0 * gi[i - 1] + 8.0 * gi[i] - gi[i + 1]);
    }
    // smooth odd/even parity mismatch: recompute odd entries from the next even one
    for (std::size_t i = 1; i + 1 < g.n; i += 2)
        out[i] = (i + 2 < g.n)
                     ? out[i + 1] - h / 24.0 * (-gi[i - 1] + 13.0 * gi[i] + 13.0 * gi[i + 1] -
                                                gi[i + 2])
                     : out[i + 1] - h / 12.0 * (-gi[i - 1] + 8.0 * gi[i] + 5.0 * gi[i + 1]);
    return out;
}

// J_i = int_{r_i}^{r_{n-1}} f dr, accumulated from the right end so a left-end
// dominated integrand cannot cancel the small remainder catastrophically.
inline std::vector<double> cumulative_integral_right(const LogGrid& g,
                                                     const std::vector<double>& f) {
    if (f.size() != g.n) throw std::invalid_argument("cumulative_integral_right: size mismatch");
    std::vector<double> gi(g.n);
    for (std::size_t i = 0; i < g.n; ++i) gi[i] = f[g.n - 1 - i] * g.r[g.n - 1 - i];
    const double h = g.dxi;
    std::vector<double> acc(g.n, 0.0);
    for (std::size_t i = 1; i < g.n; ++i) {
        if (i >= 2)
            acc[i] = acc[i - 2] + h / 3.0 * (gi[i - 2] + 4.0 * gi[i - 1] + gi[i]);
        else
            acc[i] = acc[i - 1] + h / 12.0 * (5.0 * gi[i - 1] + 8.0 * gi[i] - gi[i + 1]);
    }
    for (std::size_t i = 1; i + 1 < g.n; i += 2)
        acc[i] = (i + 2 < g.n)
                     ? acc[i + 1] - h / 24.0 * (-gi[i - 1] + 13.0 * gi[i] + 13.0 * gi[i + 1] -
                                                gi[i + 2])
                     : acc[i + 1] - h / 12.0 * (-gi[i - 1] + 8.0 * gi[i] + 5.0 * gi[i + 1]);
    std::vector<double> J(g.n);
    for (std::size_t i = 0; i < g.n; ++i) J[g.n - 1 - i] = acc[i];
    return J;
}

// Fourth-order centered first derivative in xi, one-sided at the edges,
// returned as d/dr = (df/dxi)/r.
inline std::vector<double> deriv_r(const LogGrid& g, const std::vector<double>& f) {
    if (f.size() != g.n) throw std::invalid_argument("deriv_r: size mismatch");
    const double h = g.dxi;
    std::vector<double> d(g.n);
    for (std::size_t i = 2; i + 2 < g.n; ++i)
        d[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h);
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    d[g.n - 2] = -(-3.0 * f[g.n - 1] - 10.0 * f[g.n - 2] + 18.0 * f[g.n - 3] - 6.0 * f[g.n - 4] +
                   f[g.n - 5]) /
                 (12.0 * h);
    d[g.n - 1] = -(-25.0 * f[g.n - 1] + 48.0 * f[g.n - 2] - 36.0 * f[g.n - 3] +
                   16.0 * f[g.n - 4] - 3.0 * f[g.n - 5]) /
                 (12.0 * h);
    for (std::size_t i = 0; i < g.n; ++i) d[i] /= g.r[i];
    return d;
}

} // namespace kslab
