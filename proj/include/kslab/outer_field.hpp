#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

// Outer region: the singular elliptic problem for the far field around a
// symmetric pair of peaks at (+-2, 0), the companion Z problem, and the
// closed-form singular basis used for matching.

namespace kslab::outer {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm2(Vec2 a) { return a.x * a.x + a.y * a.y; }
inline double norm(Vec2 a) { return std::sqrt(norm2(a)); }

// Value, gradient, Laplacian bundle for closed-form pieces.
struct Field3 {
    double v = 0.0;
    Vec2 g{};
    double lap = 0.0;
};

inline Field3& operator+=(Field3& a, const Field3& b) {
    a.v += b.v;
    a.g = a.g + b.g;
    a.lap += b.lap;
    return a;
}

namespace detail {

inline double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}

// f = c (a.Y)^k / |Y|^m with closed-form gradient and Laplacian.
inline Field3 power_term(Vec2 a, Vec2 Y, int k, int m, double c) {
    const double r2 = norm2(Y);
    const double q = dot(a, Y);
    const double rm = c * std::pow(r2, -0.5 * m);
    const double qk = ipow(q, k);
    Field3 f;
    f.v = qk * rm;
    const double qk1 = (k > 0) ? k * ipow(q, k - 1) : 0.0;
    f.g = {qk1 * rm * a.x - m * qk * rm / r2 * Y.x,
           qk1 * rm * a.y - m * qk * rm / r2 * Y.y};
    const double qk2 = (k > 1) ? k * (k - 1) * ipow(q, k - 2) : 0.0;
    f.lap = qk2 * norm2(a) * rm + (m * m - 2.0 * k * m) * qk * rm / r2;
    return f;
}

inline Field3 log_term(Vec2 Y, double c) {
    const double r2 = norm2(Y);
    Field3 f;
    f.v = 0.5 * c * std::log(r2);
    f.g = {c * Y.x / r2, c * Y.y / r2};
    f.lap = 0.0;
    return f;
}

// C4 cutoff: 1 for rho <= 1, 0 for rho >= 2 (ninth-order smoothstep).
struct Cutoff {
    double v = 0.0, d1 = 0.0, d2 = 0.0;
};

inline Cutoff eta(double rho) {
    if (rho <= 1.0) return {1.0, 0.0, 0.0};
    if (rho >= 2.0) return {0.0, 0.0, 0.0};
    const double t = rho - 1.0, u = 1.0 - t;
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
    const double u3 = u * u * u, u4 = u3 * u;
    const double s = t4 * t * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))));
    return {1.0 - s, -630.0 * t4 * u4, -2520.0 * t3 * u3 * (1.0 - 2.0 * t)};
}

// Apply the cutoff window to a singular piece.
inline Field3 windowed(const Field3& f, Vec2 Y) {
    const double rho = norm(Y);
    const Cutoff e = eta(rho);
    if (e.v == 1.0) return f;
    Field3 w;
    w.v = f.v * e.v;
    const Vec2 yhat = (1.0 / rho) * Y;
    w.g = {e.v * f.g.x + f.v * e.d1 * yhat.x, e.v * f.g.y + f.v * e.d1 * yhat.y};
    w.lap = e.v * f.lap + 2.0 * e.d1 * dot(yhat, f.g) + f.v * (e.d2 + e.d1 / rho);
    return w;
}

} // namespace detail

// Singular basis around a peak, |a| = 2.
struct SingularBasis {
    Vec2 a{2.0, 0.0};

    double inv_r4(Vec2 Y) const { return 1.0 / (norm2(Y) * norm2(Y)); }
    double psi1(Vec2 Y) const {
        const double r2 = norm2(Y), q = dot(a, Y);
        return (2.0 / r2 + q * q / (r2 * r2)) / 16.0;
    }
    double psi2(Vec2 Y) const {
        const double r2 = norm2(Y), q = dot(a, Y);
        return q / (96.0 * r2) * (3.0 - q * q / r2);
    }
    double psi3(Vec2 Y) const {
        const double r2 = norm2(Y), q = dot(a, Y);
        return q * q * q * q / (256.0 * r2 * r2);
    }

    // 1/r^4 + Psi1 + sgn Psi2 + Psi3 (sgn = +1 at +a, -1 at -a).
    Field3 omega_bracket(Vec2 Y, double sgn) const {
        using detail::power_term;
        Field3 f = power_term(a, Y, 0, 4, 1.0);
        f += power_term(a, Y, 0, 2, 1.0 / 8.0);
        f += power_term(a, Y, 2, 4, 1.0 / 16.0);
        f += power_term(a, Y, 1, 2, sgn / 32.0);
        f += power_term(a, Y, 3, 4, -sgn / 96.0);
        f += power_term(a, Y, 4, 4, 1.0 / 256.0);
        return f;
    }

    // -1/(2 r^2) + (1/8) log r - (1/16) (a.Y)^2 / r^2, the Z singular data.
    Field3 z_bracket(Vec2 Y) const {
        using detail::power_term;
        Field3 f = power_term(a, Y, 0, 2, -0.5);
        f += detail::log_term(Y, 1.0 / 8.0);
        f += power_term(a, Y, 2, 2, -1.0 / 16.0);
        return f;
    }
};

inline Vec2 w0_grad(Vec2 y, Vec2 a = {2.0, 0.0}) {
    const Vec2 p = y - a, q = y + a;
    const double p2 = norm2(p), q2 = norm2(q);
    if (p2 == 0.0 || q2 == 0.0) throw std::invalid_argument("w0_grad: singular point");
    return {-4.0 * (p.x / p2 + q.x / q2), -4.0 * (p.y / p2 + q.y / q2)};
}

// Taylor terms of w0_grad(a + Y) through cubic order in Y.
inline Vec2 w0_taylor_cubic(Vec2 Y, Vec2 a = {2.0, 0.0}) {
    const double r2 = norm2(Y), q = dot(a, Y);
    const double a2 = norm2(a), a4 = a2 * a2, a6 = a4 * a2, a8 = a4 * a4;
    Vec2 t = (-4.0 / r2) * Y;
    t = t + (-2.0 / a2) * a;
    t = t + (-1.0 / a2) * Y;
    t = t + (2.0 * q / a4) * a;
    t = t + (r2 / (2.0 * a4)) * a;
    t = t + (-2.0 * q * q / a6) * a;
    t = t + (q / a4) * Y;
    t = t + (-q * r2 / a6) * a;
    t = t + (2.0 * q * q * q / a8) * a;
    t = t + (r2 / (4.0 * a4)) * Y;
    t = t + (-q * q / a6) * Y;
    return t;
}

inline double g_closed(Vec2 Y) {
    const double r2 = norm2(Y);
    if (r2 == 0.0) throw std::invalid_argument("g_closed: Y = 0");
    const double lg = 0.5 * std::log(r2);
    const double cos2t = (Y.x * Y.x - Y.y * Y.y) / r2;
    return -0.25 / r2 - lg * lg / 8.0 + cos2t / 32.0;
}

// ---------------------------------------------------------------------------
// Discretization: graded tensor mesh on the upper half of B_R minus the two
// excised disks, Neumann on the symmetry axis, Shortley-Weller cut arms.

struct MeshParams {
    double delta = 0.05;
    double R = 20.0;
    double h_core = 0.0125;
    double grade = 0.16;
    double h_max = 0.6;
    int refine = 0; // bisections applied after marching the base lines
};

struct Mesh {
    MeshParams prm;
    std::vector<double> xs, ys;
    std::array<Vec2, 2> peak{{{2.0, 0.0}, {-2.0, 0.0}}};
    std::vector<int> stat; // unknown index, or -1 outside the domain
    std::size_t nx = 0, ny = 0, unknowns = 0;

    std::size_t id(std::size_t i, std::size_t j) const { return j * nx + i; }
    bool active(std::size_t i, std::size_t j) const { return stat[id(i, j)] >= 0; }
    Vec2 at(std::size_t i, std::size_t j) const { return {xs[i], ys[j]}; }
};

namespace detail {

template <class Spacing>
std::vector<double> march(double a, double b, const Spacing& sp) {
    std::vector<double> p{a};
    double x = a;
    while (true) {
        const double h = sp(x);
        if (x + 1.45 * h >= b) {
            const double rem = b - x;
            if (rem > 1.05 * h) p.push_back(x + 0.5 * rem);
            p.push_back(b);
            break;
        }
        x += h;
        p.push_back(x);
    }
    return p;
}

// Bisect every cell; refined meshes nest in the coarse ones, so refinement
// ladders see a clean truncation decay.
inline std::vector<double> bisect(const std::vector<double>& c, int times) {
    std::vector<double> out = c;
    for (int t = 0; t < times; ++t) {
        std::vector<double> next;
        next.reserve(2 * out.size());
        for (std::size_t i = 0; i + 1 < out.size(); ++i) {
            next.push_back(out[i]);
            next.push_back(0.5 * (out[i] + out[i + 1]));
        }
        next.push_back(out.back());
        out.swap(next);
    }
    return out;
}

} // namespace detail

inline Mesh build_mesh(const MeshParams& prm) {
    Mesh m;
    m.prm = prm;
    const auto hx = [&](double x) {
        const double d = std::min(std::abs(x - 2.0), std::abs(x + 2.0));
        return std::clamp(prm.grade * d, prm.h_core, prm.h_max);
    };
    const auto hy = [&](double y) { return std::clamp(prm.grade * y, prm.h_core, prm.h_max); };

    auto lo = detail::march(0.0, 2.0, hx);
    auto hi = detail::march(2.0, prm.R, hx);
    std::vector<double> pos(lo.begin(), lo.end());
    pos.insert(pos.end(), hi.begin() + 1, hi.end());
    pos = detail::bisect(pos, prm.refine);
    m.xs.assign(pos.rbegin(), pos.rend() - 1);
    for (auto& x : m.xs) x = -x;
    m.xs.insert(m.xs.end(), pos.begin(), pos.end());
    m.ys = detail::bisect(detail::march(0.0, prm.R, hy), prm.refine);

    m.nx = m.xs.size();
    m.ny = m.ys.size();
    m.stat.assign(m.nx * m.ny, -1);
    int next = 0;
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const Vec2 p = m.at(i, j);
            const bool in = norm2(p - m.peak[0]) > prm.delta * prm.delta &&
                            norm2(p - m.peak[1]) > prm.delta * prm.delta &&
                            norm2(p) < prm.R * prm.R;
            if (in) m.stat[m.id(i, j)] = next++;
        }
    m.unknowns = static_cast<std::size_t>(next);
    return m;
}

// Advection coefficient of the outer operator at y (away from the peaks).
inline Vec2 advection(const Mesh& m, Vec2 p) {
    const Vec2 Y1 = p - m.peak[0], Y2 = p - m.peak[1];
    const double r1 = norm2(Y1), r2 = norm2(Y2);
    return {-0.5 * p.x + 4.0 * Y1.x / r1 + 4.0 * Y2.x / r2,
            -0.5 * p.y + 4.0 * Y1.y / r1 + 4.0 * Y2.y / r2};
}

namespace detail {

struct Arm {
    double h = 0.0;
    int link = -1;  // unknown index, or -1 for a Dirichlet cut
    int which = -1; // 0: excision +a, 1: excision -a, 2: outer circle
    Vec2 at{};      // boundary crossing point for Dirichlet cuts
};

// Shorten the arm from p along direction d (full length h) at the first
// boundary circle it crosses.
inline Arm cut_arm(const Mesh& m, Vec2 p, Vec2 d, double h) {
    double tmin = std::numeric_limits<double>::infinity();
    int which = -1;
    const double dd = norm2(d);
    for (int k = 0; k < 2; ++k) {
        const Vec2 w = p - m.peak[k];
        const double b = 2.0 * dot(d, w);
        const double c = norm2(w) - m.prm.delta * m.prm.delta;
        const double disc = b * b - 4.0 * dd * c;
        if (disc < 0.0) continue;
        const double t = (-b - std::sqrt(disc)) / (2.0 * dd);
        if (t > 0.0 && t <= 1.0 && t < tmin) {
            tmin = t;
            which = k;
        }
    }
    {
        const double b = 2.0 * dot(d, p);
        const double c = norm2(p) - m.prm.R * m.prm.R;
        const double disc = b * b - 4.0 * dd * c;
        if (disc >= 0.0) {
            const double t = (-b + std::sqrt(disc)) / (2.0 * dd);
            if (t > 0.0 && t <= 1.0 && t < tmin) {
                tmin = t;
                which = 2;
            }
        }
    }
    if (which < 0) { // crossing lost to roundoff; treat as touching the far end
        tmin = 1.0;
        which = 2;
    }
    const double t = std::max(tmin, 0.05);
    return {t * h, -1, which, p + t * d};
}

} // namespace detail

struct CutArm {
    int row = 0;
    double coef = 0.0;
    int which = 0;
    Vec2 at{};
};

struct LinearSystem {
    const Mesh* mesh = nullptr;
    Eigen::SparseMatrix<double> A;
    std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu;
    std::vector<CutArm> arms;
};

inline LinearSystem build_system(const Mesh& m) {
    LinearSystem sys;
    sys.mesh = &m;
    using T = Eigen::Triplet<double>;
    std::vector<T> trip;
    trip.reserve(5 * m.unknowns);

    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const int row = m.stat[m.id(i, j)];
            if (row < 0) continue;
            const Vec2 p = m.at(i, j);

            auto probe = [&](std::ptrdiff_t di, std::ptrdiff_t dj) -> detail::Arm {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
                const Vec2 q = m.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                const double h = (di != 0) ? std::abs(q.x - p.x) : std::abs(q.y - p.y);
                const int link = m.stat[m.id(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj))];
                if (link >= 0) return {h, link, -1};
                detail::Arm a = detail::cut_arm(m, p, q - p, h);
                return a;
            };

            const detail::Arm W = probe(-1, 0), E = probe(+1, 0), N = probe(0, +1);
            const bool axis = (j == 0);
            const detail::Arm S = axis ? N : probe(0, -1);

            const Vec2 b = advection(m, p);
            const double hW = W.h, hE = E.h, hS = S.h, hN = N.h;

            const double cW = 2.0 / (hW * (hW + hE)) - b.x * hE / (hW * (hW + hE));
            const double cE = 2.0 / (hE * (hW + hE)) + b.x * hW / (hE * (hW + hE));
            const double cS = 2.0 / (hS * (hS + hN)) - b.y * hN / (hS * (hS + hN));
            const double cN = 2.0 / (hN * (hN + hS)) + b.y * hS / (hN * (hN + hS));
            const double cC = -2.0 / (hW * hE) - 2.0 / (hS * hN) +
                              b.x * (hE - hW) / (hW * hE) + b.y * (hN - hS) / (hS * hN) - 1.0;

            trip.emplace_back(row, row, cC);
            auto place = [&](const detail::Arm& a, double c) {
                if (a.link >= 0)
                    trip.emplace_back(row, a.link, c);
                else
                    sys.arms.push_back({row, c, a.which, a.at});
            };
            place(W, cW);
            place(E, cE);
            place(N, axis ? cN + cS : cN);
            if (!axis) place(S, cS);
        }

    sys.A.resize(static_cast<Eigen::Index>(m.unknowns), static_cast<Eigen::Index>(m.unknowns));
    sys.A.setFromTriplets(trip.begin(), trip.end());
    sys.A.makeCompressed();
    sys.lu = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    sys.lu->compute(sys.A);
    if (sys.lu->info() != Eigen::Success) throw std::runtime_error("outer: factorization failed");
    return sys;
}

// Analytic L applied to the windowed singular bracket around peak k.
inline double l_omega_bracket(const Mesh& m, const SingularBasis& basis, Vec2 p, int k) {
    const Vec2 Y = p - m.peak[k];
    if (norm2(Y) >= 4.0) return 0.0;
    const double sgn = (k == 0) ? 1.0 : -1.0;
    const Field3 f = detail::windowed(basis.omega_bracket(Y, sgn), Y);
    return f.lap + dot(advection(m, p), f.g) - f.v;
}

inline double l_z_bracket(const Mesh& m, const SingularBasis& basis, Vec2 p, int k) {
    const Vec2 Y = p - m.peak[k];
    if (norm2(Y) >= 4.0) return 0.0;
    const Field3 f = detail::windowed(basis.z_bracket(Y), Y);
    return f.lap + dot(advection(m, p), f.g) - f.v;
}

// Windowed singular value (no derivatives), for field reconstruction.
inline double omega_bracket_value(const Mesh& m, const SingularBasis& basis, Vec2 p, int k) {
    const Vec2 Y = p - m.peak[k];
    if (norm2(Y) >= 4.0) return 0.0;
    const double sgn = (k == 0) ? 1.0 : -1.0;
    return basis.omega_bracket(Y, sgn).v * detail::eta(norm(Y)).v;
}

inline double z_bracket_value(const Mesh& m, const SingularBasis& basis, Vec2 p, int k) {
    const Vec2 Y = p - m.peak[k];
    if (norm2(Y) >= 4.0) return 0.0;
    return basis.z_bracket(Y).v * detail::eta(norm(Y)).v;
}

// Solve L(phi) = src with Dirichlet data on the excision circles and zero on
// the outer circle. src is evaluated per active node as src(point, id); data
// is evaluated per boundary crossing as data(which, point).
template <class Source, class Data>
std::vector<double> solve_remainder_with(const LinearSystem& sys, const Source& src,
                                         const Data& data) {
    const Mesh& m = *sys.mesh;
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(m.unknowns));
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const int row = m.stat[m.id(i, j)];
            if (row >= 0) rhs[row] = src(m.at(i, j), m.id(i, j));
        }
    for (const CutArm& a : sys.arms) {
        const double g = (a.which < 2) ? data(a.which, a.at) : 0.0;
        rhs[a.row] -= a.coef * g;
    }
    const Eigen::VectorXd u = sys.lu->solve(rhs);
    std::vector<double> full(m.nx * m.ny, 0.0);
    for (std::size_t n = 0; n < m.nx * m.ny; ++n)
        if (m.stat[n] >= 0) full[n] = u[m.stat[n]];
    return full;
}

template <class Source>
std::vector<double> solve_remainder(const LinearSystem& sys, const Source& src,
                                    const std::array<double, 2>& exc) {
    return solve_remainder_with(
        sys, src, [&exc](int which, Vec2) { return exc[static_cast<std::size_t>(which)]; });
}

// Bilinear interpolation on the tensor mesh, reflecting y < 0 to y > 0.
inline double interpolate(const Mesh& m, const std::vector<double>& f, Vec2 p) {
    const double y = std::abs(p.y);
    auto cell = [](const std::vector<double>& c, double v) {
        auto it = std::upper_bound(c.begin(), c.end(), v);
        std::size_t i = static_cast<std::size_t>(it - c.begin());
        if (i == 0) i = 1;
        if (i >= c.size()) i = c.size() - 1;
        return i - 1;
    };
    const std::size_t i = cell(m.xs, p.x), j = cell(m.ys, y);
    const double tx = (p.x - m.xs[i]) / (m.xs[i + 1] - m.xs[i]);
    const double ty = (y - m.ys[j]) / (m.ys[j + 1] - m.ys[j]);
    return (1.0 - tx) * (1.0 - ty) * f[m.id(i, j)] + tx * (1.0 - ty) * f[m.id(i + 1, j)] +
           (1.0 - tx) * ty * f[m.id(i, j + 1)] + tx * ty * f[m.id(i + 1, j + 1)];
}

// Angular mean and first Fourier coefficient of f/D on the circle |y-c| = s.
struct ProbeRing {
    double mean = 0.0;
    double c1 = 0.0;
};

inline ProbeRing probe_ring(const Mesh& m, const std::vector<double>& f, Vec2 c, double s,
                            double D, int nang) {
    double sum = 0.0, sumc = 0.0;
    for (int t = 0; t < nang; ++t) {
        const double th = 2.0 * M_PI * (t + 0.5) / nang;
        const double v = interpolate(m, f, {c.x + s * std::cos(th), c.y + s * std::sin(th)});
        sum += v;
        sumc += v * std::cos(th);
    }
    return {sum / (nang * D), 2.0 * sumc / (nang * D)};
}

namespace detail {

inline Eigen::VectorXd lsq(const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
    return M.householderQr().solve(b);
}

// Fit means over probe radii to {1, s, s^2, (delta/s)^4}; the constant is the
// matching value. Returns {value, rms of fit residual}.
inline std::array<double, 2> fit_constant(const std::vector<double>& s,
                                          const std::vector<double>& mean, double delta) {
    const auto n = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd M(n, 4);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double si = s[static_cast<std::size_t>(i)];
        M(i, 0) = 1.0;
        M(i, 1) = si;
        M(i, 2) = si * si;
        M(i, 3) = ipow(delta / si, 4);
        b(i) = mean[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd c = lsq(M, b);
    const double rms = std::sqrt((M * c - b).squaredNorm() / static_cast<double>(n));
    return {c(0), rms};
}

// Exponent of the growing n = +-1 mode from the first Fourier coefficient on
// probe rings. c1(s) = alpha s^p + beta s + smaller terms; the double
// difference F(s) = c1(2s) - 2 c1(s) = alpha (2^p - 2) s^p cancels the linear
// forced response exactly, so p = log2(F(6d) / F(3d)) using the rings at
// {3, 6, 12} delta, far enough out that the decaying layer is negligible.
inline double fit_exponent(const std::vector<double>& s, const std::vector<double>& c1,
                           double delta) {
    const auto at = [&](double target) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.size(); ++i)
            if (std::abs(s[i] - target) < std::abs(s[best] - target)) best = i;
        return c1[best];
    };
    const double F1 = at(6 * delta) - 2.0 * at(3 * delta);
    const double F2 = at(12 * delta) - 2.0 * at(6 * delta);
    if (F1 != 0.0 && F2 / F1 > 0.0) return std::log2(F2 / F1);
    // Degenerate double difference: fall back to a scan with the fixed
    // nuisance columns (linear response, decaying indicial mode).
    const auto n = static_cast<Eigen::Index>(s.size());
    const double down = 2.0 + std::sqrt(5.0);
    double best_p = 0.0, best_ssr = std::numeric_limits<double>::infinity();
    for (double p = 0.05; p <= 0.50001; p += 0.0025) {
        Eigen::MatrixXd M(n, 3);
        Eigen::VectorXd b(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double si = s[static_cast<std::size_t>(i)];
            M(i, 0) = std::pow(si, p);
            M(i, 1) = si;
            M(i, 2) = std::pow(delta / si, down);
            b(i) = c1[static_cast<std::size_t>(i)];
        }
        const Eigen::VectorXd c = lsq(M, b);
        const double ssr = (M * c - b).squaredNorm();
        if (ssr < best_ssr) {
            best_ssr = ssr;
            best_p = p;
        }
    }
    return best_p;
}

// Richardson extrapolation of ring means at {2d, 4d, 8d} assuming the
// remainder decays with the known exponent sqrt(5) - 2. Returns the
// extrapolated constant and the spread between the two octave panels.
inline std::array<double, 2> richardson_constant(double m2, double m4, double m8) {
    const double q = std::pow(2.0, std::sqrt(5.0) - 2.0) - 1.0;
    const double r24 = m2 - (m4 - m2) / q;
    const double r48 = m4 - (m8 - m4) / q;
    return {r24, std::abs(r24 - r48)};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Level driver.

struct OuterParams {
    double D1 = 8.0;
    double D2 = 8.0;
    double delta = 0.05;
    double R = 20.0;
    int levels = 3;
    double h_core0 = 0.00625;
    double grade0 = 0.08;
    double h_max0 = 0.3;
    int probe_angles = 64;
};

struct LevelRecord {
    int level = 0;
    double h_core = 0.0;
    std::size_t unknowns = 0;
    double A1_pass1 = 0.0, A1 = 0.0, A2 = 0.0;
    double A1_lsq = 0.0;
    double A_s_err = 0.0;
    double fit_rms = 0.0;
    double exponent = 0.0;
    double decay = 0.0;
    bool has_z = false;
    double B1_pass1 = 0.0, B1 = 0.0, B2 = 0.0;
    double B1_lsq = 0.0;
    double B_s_err = 0.0;
    double z_fit_rms = 0.0;
};

struct LevelData {
    Mesh mesh;
    std::vector<double> phi;   // remainder of Omega after the windowed brackets
    std::vector<double> omega; // reconstructed full field
    std::vector<double> zeta;  // remainder of Z (when solved)
};

struct OuterSolution {
    OuterParams prm;
    SingularBasis basis;
    std::vector<LevelRecord> history;
    std::vector<std::shared_ptr<LevelData>> data;
    double A = 0.0, A_err = 0.0, A_peak_delta = 0.0;
    double exponent = 0.0;
    double decay = 0.0;
    double symmetry_err = 0.0;
    bool has_z = false;
    double B = 0.0, B_err = 0.0, B_peak_delta = 0.0;
};

namespace detail {

inline std::vector<double> probe_radii(double delta) {
    std::vector<double> s;
    for (double k : {2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0}) s.push_back(k * delta);
    return s;
}

struct PeakFit {
    double value = 0.0; // Richardson in s at {2d, 4d, 8d}, exponent sqrt(5)-2
    double s_err = 0.0; // spread between the two Richardson panels
    double lsq = 0.0;   // cross-check: least-squares constant over all rings
    double rms = 0.0;
};

inline void solve_z_level(const OuterParams& p, const LinearSystem& sys, LevelRecord& rec,
                          LevelData& dat, const SingularBasis& basis);

inline PeakFit extract(const Mesh& m, const std::vector<double>& f, Vec2 c, double D, int nang) {
    const auto radii = probe_radii(m.prm.delta);
    std::vector<double> mean(radii.size());
    for (std::size_t k = 0; k < radii.size(); ++k)
        mean[k] = probe_ring(m, f, c, radii[k], D, nang).mean;
    const auto rich = richardson_constant(mean[0], mean[3], mean[6]);
    const auto fit = fit_constant(radii, mean, m.prm.delta);
    return {rich[0], rich[1], fit[0], fit[1]};
}

// Decay root of the n = 1 near-peak mode, excited directly by cos(theta)
// excision data on the source-free problem. The growing root is suppressed
// by delta^(2+sqrt5), so the ring coefficients isolate the decaying one; the
// two roots sum to -4 (indicial equation alpha^2 + 4 alpha - 1 = 0).
inline double mode_decay(const LinearSystem& sys, int nang) {
    const Mesh& m = *sys.mesh;
    const auto w = solve_remainder_with(
        sys, [](Vec2, std::size_t) { return 0.0; },
        [&m](int which, Vec2 at) {
            if (which != 0) return 0.0;
            const Vec2 Y = at - m.peak[0];
            return Y.x / std::max(norm(Y), 1e-300);
        });
    const double d = m.prm.delta;
    std::vector<double> s, c1;
    for (double k : {2.0, 2.5, 3.0, 4.0, 5.0, 6.0}) {
        s.push_back(k * d);
        c1.push_back(probe_ring(m, w, m.peak[0], k * d, 1.0, nang).c1);
    }
    const auto n = static_cast<Eigen::Index>(s.size());
    const double up = std::sqrt(5.0) - 2.0;
    double best_q = 0.0, best_ssr = std::numeric_limits<double>::infinity();
    for (double q = 3.0; q <= 5.50001; q += 0.0025) {
        Eigen::MatrixXd M(n, 2);
        Eigen::VectorXd b(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double si = s[static_cast<std::size_t>(i)];
            M(i, 0) = std::pow(d / si, q);
            M(i, 1) = std::pow(si, up);
            b(i) = c1[static_cast<std::size_t>(i)];
        }
        const Eigen::VectorXd c = lsq(M, b);
        const double ssr = (M * c - b).squaredNorm();
        if (ssr < best_ssr) {
            best_ssr = ssr;
            best_q = q;
        }
    }
    return best_q;
}

inline void run_level(const OuterParams& p, int level, bool with_z, LevelRecord& rec,
                      LevelData& dat, const SingularBasis& basis) {
    MeshParams mp{p.delta, p.R, p.h_core0, p.grade0, p.h_max0, level - 1};
    dat.mesh = build_mesh(mp);
    const Mesh& m = dat.mesh;
    rec.level = level;
    rec.h_core = mp.h_core * std::pow(0.5, level - 1);
    rec.unknowns = m.unknowns;

    const LinearSystem sys = build_system(m);
    const std::array<double, 2> D{p.D1, p.D2};

    const auto omega_src = [&](Vec2 q, std::size_t) {
        return -D[0] * l_omega_bracket(m, basis, q, 0) - D[1] * l_omega_bracket(m, basis, q, 1);
    };

    // Pass 1: excision data carries only the singular bracket.
    std::vector<double> phi = solve_remainder(sys, omega_src, {0.0, 0.0});
    const PeakFit f1 = extract(m, phi, m.peak[0], D[0], p.probe_angles);
    rec.A1_pass1 = f1.value;
    const PeakFit f2 =
        (D[1] != 0.0) ? extract(m, phi, m.peak[1], D[1], p.probe_angles) : PeakFit{};

    // Pass 2: refresh the excision data with the matched constant, removing
    // the (delta/s)^4 boundary layer from the probe means.
    phi = solve_remainder(sys, omega_src, {f1.lsq * D[0], f2.lsq * D[1]});
    const PeakFit g1 = extract(m, phi, m.peak[0], D[0], p.probe_angles);
    const PeakFit g2 =
        (D[1] != 0.0) ? extract(m, phi, m.peak[1], D[1], p.probe_angles) : PeakFit{};
    rec.A1 = g1.value;
    rec.A2 = g2.value;
    rec.A1_lsq = g1.lsq;
    rec.A_s_err = g1.s_err;
    rec.fit_rms = g1.rms;
    {
        const auto radii = probe_radii(m.prm.delta);
        std::vector<double> c1(radii.size());
        for (std::size_t k = 0; k < radii.size(); ++k)
            c1[k] = probe_ring(m, phi, m.peak[0], radii[k], D[0], p.probe_angles).c1;
        rec.exponent = fit_exponent(radii, c1, m.prm.delta);
    }
    rec.decay = mode_decay(sys, p.probe_angles);

    dat.phi = phi;
    dat.omega.assign(m.nx * m.ny, 0.0);
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const std::size_t n = m.id(i, j);
            if (m.stat[n] < 0) continue;
            const Vec2 q = m.at(i, j);
            dat.omega[n] = phi[n] + D[0] * omega_bracket_value(m, basis, q, 0) +
                           D[1] * omega_bracket_value(m, basis, q, 1);
        }

    if (!with_z) return;
    solve_z_level(p, sys, rec, dat, basis);
}

inline void solve_z_level(const OuterParams& p, const LinearSystem& sys, LevelRecord& rec,
                          LevelData& dat, const SingularBasis& basis) {
    const Mesh& m = *sys.mesh;
    const std::array<double, 2> D{p.D1, p.D2};
    const auto z_src = [&](Vec2 q, std::size_t n) {
        return 2.0 * dat.omega[n] - D[0] * l_z_bracket(m, basis, q, 0) -
               D[1] * l_z_bracket(m, basis, q, 1);
    };

    std::vector<double> zeta = solve_remainder(sys, z_src, {0.0, 0.0});
    const PeakFit f1 = extract(m, zeta, m.peak[0], D[0], p.probe_angles);
    rec.B1_pass1 = f1.value;
    const PeakFit f2 =
        (D[1] != 0.0) ? extract(m, zeta, m.peak[1], D[1], p.probe_angles) : PeakFit{};

    zeta = solve_remainder(sys, z_src, {f1.lsq * D[0], f2.lsq * D[1]});
    const PeakFit g1 = extract(m, zeta, m.peak[0], D[0], p.probe_angles);
    const PeakFit g2 =
        (D[1] != 0.0) ? extract(m, zeta, m.peak[1], D[1], p.probe_angles) : PeakFit{};
    rec.B1 = g1.value;
    rec.B2 = g2.value;
    rec.B1_lsq = g1.lsq;
    rec.B_s_err = g1.s_err;
    rec.z_fit_rms = g1.rms;
    rec.has_z = true;
    dat.zeta = std::move(zeta);
}

// Mirror asymmetry of the remainder field on the finest mesh (x -> -x); the
// mesh is built symmetric, so mirrored coordinates are nodes.
inline double mirror_asymmetry(const Mesh& m, const std::vector<double>& f) {
    double worst = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            if (m.stat[m.id(i, j)] < 0) continue;
            scale = std::max(scale, std::abs(f[m.id(i, j)]));
            const std::size_t im = m.nx - 1 - i;
            if (m.stat[m.id(im, j)] < 0) continue;
            worst = std::max(worst, std::abs(f[m.id(i, j)] - f[m.id(im, j)]));
        }
    return (scale > 0.0) ? worst / scale : 0.0;
}

inline void extrapolate(const std::vector<double>& per_level, double rms, double& out,
                        double& err) {
    const std::size_t n = per_level.size();
    if (n == 1) {
        out = per_level[0];
        err = std::max(rms, 1e-12);
        return;
    }
    const double step = (per_level[n - 1] - per_level[n - 2]) / 3.0;
    out = per_level[n - 1] + step;
    err = std::max(std::abs(step), rms);
}

} // namespace detail

inline OuterSolution solve_full(const OuterParams& p, bool with_z) {
    OuterSolution sol;
    sol.prm = p;
    sol.has_z = with_z;
    std::vector<double> As, A2s, Bs, B2s;
    for (int level = 1; level <= p.levels; ++level) {
        LevelRecord rec;
        auto dat = std::make_shared<LevelData>();
        detail::run_level(p, level, with_z, rec, *dat, sol.basis);
        sol.history.push_back(rec);
        sol.data.push_back(dat);
        As.push_back(rec.A1);
        A2s.push_back(rec.A2);
        if (with_z) {
            Bs.push_back(rec.B1);
            B2s.push_back(rec.B2);
        }
    }
    const LevelRecord& last = sol.history.back();
    const double a_floor = std::max(last.A_s_err, std::abs(last.A1 - last.A1_lsq));
    detail::extrapolate(As, a_floor, sol.A, sol.A_err);
    sol.exponent = last.exponent;
    sol.decay = last.decay;
    if (p.D2 != 0.0) {
        double a2, e2;
        detail::extrapolate(A2s, a_floor, a2, e2);
        sol.A_peak_delta = std::abs(sol.A - a2);
    }
    if (with_z) {
        const double b_floor = std::max(last.B_s_err, std::abs(last.B1 - last.B1_lsq));
        detail::extrapolate(Bs, b_floor, sol.B, sol.B_err);
        if (p.D2 != 0.0) {
            double b2, e2;
            detail::extrapolate(B2s, b_floor, b2, e2);
            sol.B_peak_delta = std::abs(sol.B - b2);
        }
    }
    if (p.D1 == p.D2)
        sol.symmetry_err = detail::mirror_asymmetry(sol.data.back()->mesh, sol.data.back()->phi);
    return sol;
}

inline OuterSolution solve_omega(const OuterParams& p) { return solve_full(p, false); }

// Z-variant on an existing Omega solution: rebuilds each level's system and
// solves L(Z) = 2 Omega with the logarithmic singular data.
inline OuterSolution solve_Z(const OuterSolution& om) {
    OuterSolution sol = om;
    std::vector<double> Bs, B2s;
    for (std::size_t l = 0; l < sol.data.size(); ++l) {
        const LinearSystem sys = build_system(sol.data[l]->mesh);
        detail::solve_z_level(sol.prm, sys, sol.history[l], *sol.data[l], sol.basis);
        Bs.push_back(sol.history[l].B1);
        B2s.push_back(sol.history[l].B2);
    }
    sol.has_z = true;
    const LevelRecord& last = sol.history.back();
    const double b_floor = std::max(last.B_s_err, std::abs(last.B1 - last.B1_lsq));
    detail::extrapolate(Bs, b_floor, sol.B, sol.B_err);
    if (sol.prm.D2 != 0.0) {
        double b2, e2;
        detail::extrapolate(B2s, b_floor, b2, e2);
        sol.B_peak_delta = std::abs(sol.B - b2);
    }
    return sol;
}

// Discrete operator applied to a full-grid field; NaN where the stencil is not
// complete (cut cells and excluded nodes).
inline std::vector<double> l_apply(const Mesh& m, const std::vector<double>& f) {
    std::vector<double> out(m.nx * m.ny, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            if (!m.active(i, j) || i == 0 || i + 1 == m.nx || j + 1 == m.ny) continue;
            const bool axis = (j == 0);
            if (!m.active(i - 1, j) || !m.active(i + 1, j) || !m.active(i, j + 1)) continue;
            if (!axis && !m.active(i, j - 1)) continue;
            const Vec2 p = m.at(i, j);
            const double hW = m.xs[i] - m.xs[i - 1], hE = m.xs[i + 1] - m.xs[i];
            const double hN = m.ys[j + 1] - m.ys[j];
            const double hS = axis ? hN : m.ys[j] - m.ys[j - 1];
            const double fW = f[m.id(i - 1, j)], fE = f[m.id(i + 1, j)];
            const double fN = f[m.id(i, j + 1)];
            const double fS = axis ? fN : f[m.id(i, j - 1)];
            const double fC = f[m.id(i, j)];
            const Vec2 b = advection(m, p);
            const double fxx = 2.0 * (hW * fE + hE * fW - (hW + hE) * fC) / (hW * hE * (hW + hE));
            const double fyy = 2.0 * (hS * fN + hN * fS - (hS + hN) * fC) / (hS * hN * (hS + hN));
            const double fx = (hW * hW * fE - hE * hE * fW + (hE * hE - hW * hW) * fC) /
                              (hW * hE * (hW + hE));
            const double fy = axis ? 0.0
                                   : (hS * hS * fN - hN * hN * fS + (hN * hN - hS * hS) * fC) /
                                         (hS * hN * (hS + hN));
            out[m.id(i, j)] = fxx + fyy + b.x * fx + b.y * fy - fC;
        }
    return out;
}

} // namespace kslab::outer
