#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "kslab/vec2.hpp"

namespace kslab::config {

// Force balance at each peak: y_j/2 - 4 sum_{l!=j} (y_j-y_l)/|y_j-y_l|^2.
inline std::vector<Vec2> residual(const std::vector<Vec2>& pts) {
    const std::size_t n = pts.size();
    std::vector<Vec2> f(n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec2 acc = pts[j] * 0.5;
        for (std::size_t l = 0; l < n; ++l) {
            if (l == j) continue;
            const Vec2 d = pts[j] - pts[l];
            const double d2 = d.norm2();
            if (d2 == 0.0) throw std::domain_error("residual: coincident points");
            acc -= d * (4.0 / d2);
        }
        f[j] = acc;
    }
    return f;
}

inline double residual_max(const std::vector<Vec2>& pts) {
    double m = 0.0;
    for (const auto& f : residual(pts)) m = std::max({m, std::abs(f.x), std::abs(f.y)});
    return m;
}

inline Vec2 centroid(const std::vector<Vec2>& pts) {
    Vec2 c{0.0, 0.0};
    for (const auto& p : pts) c += p;
    return c / static_cast<double>(pts.size());
}

// E = sum |y_k|^2/4 - 2 sum_{k != l} log|y_k - y_l| over ordered pairs.
inline double energy(const std::vector<Vec2>& pts) {
    double e = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        e += pts[k].norm2() * 0.25;
        for (std::size_t l = 0; l < pts.size(); ++l) {
            if (l == k) continue;
            const double d2 = (pts[k] - pts[l]).norm2();
            if (d2 == 0.0) throw std::domain_error("energy: coincident points");
            e -= std::log(d2); // 2 log|d| per ordered pair
        }
    }
    return e;
}

inline double line_energy(const std::vector<double>& xs) {
    std::vector<Vec2> pts(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) pts[i] = {xs[i], 0.0};
    return energy(pts);
}

inline std::vector<double> line_gradient(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) {
        double v = xs[k] * 0.5;
        for (std::size_t l = 0; l < n; ++l) {
            if (l == k) continue;
            const double d = xs[k] - xs[l];
            if (d == 0.0) throw std::domain_error("line_gradient: coincident points");
            v -= 4.0 / d;
        }
        g[k] = v;
    }
    return g;
}

// Collinear equilibrium: Newton on the strictly convex line energy over the
// ordered cone x_1 < ... < x_n.
inline std::vector<double> solve_line(int n, std::vector<double> x = {}, double tol = 1e-12,
                                      int max_iter = 200) {
    if (n < 2) throw std::invalid_argument("solve_line: need n >= 2");
    if (x.empty()) {
        const double span = 2.0 * std::sqrt(static_cast<double>(n - 1));
        x.resize(n);
        for (int k = 0; k < n; ++k)
            x[k] = n == 1 ? 0.0 : -span + 2.0 * span * k / static_cast<double>(n - 1);
    }
    if (static_cast<int>(x.size()) != n) throw std::invalid_argument("solve_line: bad seed size");
    std::sort(x.begin(), x.end());
    for (int i = 1; i < n; ++i)
        if (x[i] - x[i - 1] < 1e-8) x[i] = x[i - 1] + 0.5;

    auto norm_inf = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double a : v) m = std::max(m, std::abs(a));
        return m;
    };
    for (int it = 0; it < max_iter; ++it) {
        const std::vector<double> g = line_gradient(x);
        if (norm_inf(g) <= tol) return x;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd rhs(n);
        for (int k = 0; k < n; ++k) {
            rhs(k) = -g[k];
            double diag = 0.5;
            for (int l = 0; l < n; ++l) {
                if (l == k) continue;
                const double w = 4.0 / ((x[k] - x[l]) * (x[k] - x[l]));
                diag += w;
                H(k, l) = -w;
            }
            H(k, k) = diag;
        }
        Eigen::VectorXd step = H.ldlt().solve(rhs);
        double s = 1.0;
        const double g0 = norm_inf(g);
        for (int halving = 0; halving < 60; ++halving, s *= 0.5) {
            std::vector<double> xt = x;
            bool ok = true;
            for (int k = 0; k < n; ++k) xt[k] += s * step(k);
            for (int k = 1; k < n; ++k)
                if (xt[k] - xt[k - 1] < 1e-8) ok = false;
            if (!ok) continue;
            if (norm_inf(line_gradient(xt)) < g0 || s < 1e-12) {
                x = xt;
                break;
            }
        }
    }
    if (norm_inf(line_gradient(x)) > tol) throw std::runtime_error("solve_line: no convergence");
    return x;
}

// Regular n-gon equilibrium, circumradius 2 sqrt(n-1).
inline std::vector<Vec2> polygon(int n, double radius = 0.0) {
    if (n < 2) throw std::invalid_argument("polygon: need n >= 2");
    const double rho = radius > 0.0 ? radius : 2.0 * std::sqrt(static_cast<double>(n - 1));
    std::vector<Vec2> pts(n);
    for (int k = 0; k < n; ++k) {
        const double th = 2.0 * std::numbers::pi * k / n;
        pts[k] = {rho * std::cos(th), rho * std::sin(th)};
    }
    return pts;
}

// (n-1)-gon plus a central peak, circumradius 2 sqrt(n); center is the last point.
inline std::vector<Vec2> polygon_with_center(int n, double radius = 0.0) {
    if (n < 4) throw std::invalid_argument("polygon_with_center: need n >= 4");
    const double rho = radius > 0.0 ? radius : 2.0 * std::sqrt(static_cast<double>(n));
    std::vector<Vec2> pts = polygon(n - 1, rho);
    pts.push_back({0.0, 0.0});
    return pts;
}

// Damped gauge-fixed Newton on the full planar system. The rotation freedom is
// removed by rotating the seed so a reference point lies on the positive x-axis
// and freezing that point's y-coordinate.
inline std::vector<Vec2> solve_newton(std::vector<Vec2> pts, double tol = 1e-10,
                                      int max_iter = 200) {
    const int n = static_cast<int>(pts.size());
    if (n < 2) throw std::invalid_argument("solve_newton: need n >= 2");

    int pin = -1;
    for (int j = 0; j < n; ++j)
        if (pts[j].norm() > 1e-9) {
            pin = j;
            break;
        }
    if (pin < 0) throw std::invalid_argument("solve_newton: degenerate seed");
    const double th = std::atan2(pts[pin].y, pts[pin].x);
    for (auto& p : pts) p = rotate(p, -th);
    pts[pin].y = 0.0;

    auto flat_residual = [&](const std::vector<Vec2>& q) {
        const auto f = residual(q);
        Eigen::VectorXd v(2 * n);
        for (int j = 0; j < n; ++j) {
            v(2 * j) = f[j].x;
            v(2 * j + 1) = f[j].y;
        }
        return v;
    };
    auto min_gap2 = [&](const std::vector<Vec2>& q) {
        double m = 1e300;
        for (int j = 0; j < n; ++j)
            for (int l = j + 1; l < n; ++l) m = std::min(m, (q[j] - q[l]).norm2());
        return m;
    };

    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd F = flat_residual(pts);
        if (F.lpNorm<Eigen::Infinity>() <= tol) return pts;

        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n, 2 * n);
        for (int j = 0; j < n; ++j) {
            Eigen::Matrix2d diag = 0.5 * Eigen::Matrix2d::Identity();
            for (int l = 0; l < n; ++l) {
                if (l == j) continue;
                const Vec2 d = pts[j] - pts[l];
                const double d2 = d.norm2();
                Eigen::Matrix2d M;
                M << 1.0 / d2 - 2.0 * d.x * d.x / (d2 * d2), -2.0 * d.x * d.y / (d2 * d2),
                    -2.0 * d.x * d.y / (d2 * d2), 1.0 / d2 - 2.0 * d.y * d.y / (d2 * d2);
                diag -= 4.0 * M;
                J.block<2, 2>(2 * j, 2 * l) = 4.0 * M;
            }
            J.block<2, 2>(2 * j, 2 * j) = diag;
        }
        // drop the pinned y column
        const int drop = 2 * pin + 1;
        Eigen::MatrixXd Jr(2 * n, 2 * n - 1);
        Jr << J.leftCols(drop), J.rightCols(2 * n - 1 - drop);
        Eigen::VectorXd step = Jr.colPivHouseholderQr().solve(-F);

        const double f0 = F.squaredNorm();
        double s = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving, s *= 0.5) {
            std::vector<Vec2> trial = pts;
            for (int j = 0, c = 0; j < n; ++j) {
                trial[j].x += s * step(c++);
                if (2 * j + 1 != drop) trial[j].y += s * step(c++);
            }
            if (min_gap2(trial) < 1e-16) continue; // coincidence guard
            if (flat_residual(trial).squaredNorm() < f0 || s < 1e-12) {
                pts = trial;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    if (residual_max(pts) > tol) throw std::runtime_error("solve_newton: no convergence");
    return pts;
}

struct Asym5 {
    std::array<double, 3> x{};
    double alpha = 0.0;
    double beta = 0.0;
    bool asymmetric = false; // alpha bounded away from zero

    std::vector<Vec2> points() const {
        return {{x[0], 0.0}, {x[1], 0.0}, {x[2], 0.0}, {alpha, beta}, {alpha, -beta}};
    }
};

namespace detail {

inline double asym5_beta(const std::array<double, 3>& x, double alpha) {
    auto f = [&](double b) {
        double s = 1.0 / (2.0 * b * b) - 0.125;
        for (double xk : x) s += 1.0 / ((alpha - xk) * (alpha - xk) + b * b);
        return s; // strictly decreasing in b
    };
    double lo = 2.0, hi = 4.0;
    if (f(lo) <= 0.0) throw std::runtime_error("asym5_beta: no root above 2");
    while (f(hi) > 0.0) {
        hi *= 2.0;
        if (hi > 1e6) throw std::runtime_error("asym5_beta: root escaped bracket");
    }
    while (hi - lo > 1e-15 * hi) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline std::array<double, 3> asym5_equations(const std::array<double, 3>& x) {
    const double alpha = -(x[0] + x[1] + x[2]) / 2.0;
    const double beta = asym5_beta(x, alpha);
    std::array<double, 3> g{};
    for (int k = 0; k < 3; ++k) {
        double rhs = 2.0 * (x[k] - alpha) / ((alpha - x[k]) * (alpha - x[k]) + beta * beta);
        for (int j = 0; j < 3; ++j) {
            if (j == k) continue;
            rhs += 1.0 / (x[k] - x[j]);
        }
        g[k] = x[k] / 8.0 - rhs;
    }
    return g;
}

} // namespace detail

namespace detail {

inline bool asym5_newton(std::array<double, 3>& x, double tol, int max_iter) {
    for (int it = 0; it < max_iter; ++it) {
        std::array<double, 3> g;
        try {
            g = asym5_equations(x);
        } catch (const std::runtime_error&) {
            return false;
        }
        const double gn = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
        if (gn <= tol) return true;
        Eigen::Matrix3d J;
        bool jac_ok = true;
        for (int c = 0; c < 3 && jac_ok; ++c) {
            const double h = 1e-7 * std::max(1.0, std::abs(x[c]));
            auto xp = x, xm = x;
            xp[c] += h;
            xm[c] -= h;
            try {
                const auto gp = asym5_equations(xp);
                const auto gm = asym5_equations(xm);
                for (int r = 0; r < 3; ++r) J(r, c) = (gp[r] - gm[r]) / (2.0 * h);
            } catch (const std::runtime_error&) {
                jac_ok = false;
            }
        }
        if (!jac_ok) return false;
        Eigen::Vector3d step = J.colPivHouseholderQr().solve(Eigen::Vector3d(-g[0], -g[1], -g[2]));
        double sc = 1.0;
        bool moved = false;
        for (int halving = 0; halving < 50; ++halving, sc *= 0.5) {
            std::array<double, 3> xt{x[0] + sc * step(0), x[1] + sc * step(1), x[2] + sc * step(2)};
            if (!(xt[0] + 1e-8 < xt[1] && xt[1] + 1e-8 < xt[2])) continue;
            try {
                const auto gt = asym5_equations(xt);
                if (std::max({std::abs(gt[0]), std::abs(gt[1]), std::abs(gt[2])}) < gn ||
                    sc < 1e-10) {
                    x = xt;
                    moved = true;
                    break;
                }
            } catch (const std::runtime_error&) {
                continue;
            }
        }
        if (!moved) return false;
    }
    const auto g = asym5_equations(x);
    return std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])}) <= tol;
}

} // namespace detail

// Five-peak equilibrium of the reflection-symmetric ansatz: three real peaks
// plus a conjugate pair off the middle one. The sweep favors zeros with
// alpha != 0 (mirrored to alpha < 0); if none converges it falls back to the
// zero reached from the scaled collinear seed, which is the square-plus-center
// configuration expressed in this ansatz (alpha = 0, beta = 2*sqrt(5)). Broad
// seed sweeps find no other zero, and the symmetric one carries full Newton
// index +1, so the fallback is reported with asymmetric = false rather than
// treated as a failure.
inline Asym5 solve_asymmetric5(double tol = 1e-12, int max_iter = 120) {
    const auto line3 = solve_line(3);
    std::vector<std::array<double, 3>> seeds;
    const std::array<double, 5> deltas{0.0, 0.8, -0.8, 1.6, -1.6};
    for (double d1 : deltas)
        for (double d2 : deltas)
            for (double d3 : deltas) {
                if (d1 == -d3 && d2 == 0.0) continue; // stays in the symmetric subspace
                seeds.push_back({0.9 * line3[0] + d1, 0.9 * line3[1] + d2, 0.9 * line3[2] + d3});
            }
    for (auto seed : seeds) {
        std::sort(seed.begin(), seed.end());
        if (seed[1] - seed[0] < 0.3 || seed[2] - seed[1] < 0.3) continue;
        auto x = seed;
        if (!detail::asym5_newton(x, tol, max_iter)) continue;
        if (std::abs(x[0] + x[1] + x[2]) < 1e-6) continue; // symmetric zero
        double alpha = -(x[0] + x[1] + x[2]) / 2.0;
        if (alpha > 0.0) { // mirror to the canonical representative
            std::array<double, 3> xm{-x[2], -x[1], -x[0]};
            x = xm;
            alpha = -alpha;
        }
        Asym5 out;
        out.x = x;
        out.alpha = alpha;
        out.beta = detail::asym5_beta(x, alpha);
        out.asymmetric = true;
        return out;
    }
    std::array<double, 3> x{0.9 * line3[0], 0.9 * line3[1], 0.9 * line3[2]};
    if (!detail::asym5_newton(x, tol, max_iter))
        throw std::runtime_error("solve_asymmetric5: Newton failed from the collinear seed");
    Asym5 out;
    out.x = x;
    out.alpha = -(x[0] + x[1] + x[2]) / 2.0;
    out.beta = detail::asym5_beta(x, out.alpha);
    out.asymmetric = std::abs(out.alpha) > 1e-6;
    return out;
}

} // namespace kslab::config
