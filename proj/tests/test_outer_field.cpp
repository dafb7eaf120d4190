#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "kslab/outer_field.hpp"

using namespace kslab::outer;
using Catch::Approx;

namespace {

constexpr double kSqrt5 = 2.2360679774997896;

double fd_laplacian(double (*f)(Vec2), Vec2 p, double h) {
    return (f({p.x + h, p.y}) + f({p.x - h, p.y}) + f({p.x, p.y + h}) + f({p.x, p.y - h}) -
            4.0 * f(p)) /
           (h * h);
}

// One small driven solve shared by the solver-facing assertions.
const OuterSolution& small_solution() {
    static const OuterSolution sol = [] {
        OuterParams p;
        p.R = 12.0;
        p.levels = 2;
        return solve_full(p, true);
    }();
    return sol;
}

} // namespace

TEST_CASE("cutoff window is a C2 bridge from 1 to 0") {
    CHECK(detail::eta(0.3).v == 1.0);
    CHECK(detail::eta(1.0).v == 1.0);
    CHECK(detail::eta(2.0).v == 0.0);
    CHECK(detail::eta(2.7).v == 0.0);
    double prev = 1.0;
    for (double r = 1.0; r <= 2.0001; r += 0.01) {
        const double v = detail::eta(r).v;
        CHECK(v <= prev + 1e-14);
        prev = v;
    }
    for (double r : {1.2, 1.5, 1.83}) {
        const auto e = detail::eta(r);
        const double h1 = 1e-5, h2 = 1e-4;
        const double d1 = (detail::eta(r + h1).v - detail::eta(r - h1).v) / (2.0 * h1);
        const double d2 = (detail::eta(r + h2).v - 2.0 * e.v + detail::eta(r - h2).v) / (h2 * h2);
        CHECK(e.d1 == Approx(d1).margin(1e-8));
        CHECK(e.d2 == Approx(d2).margin(1e-4));
    }
    CHECK(std::abs(detail::eta(1.0 + 1e-9).d1) < 1e-6);
    CHECK(std::abs(detail::eta(2.0 - 1e-9).d1) < 1e-6);
}

TEST_CASE("analytic term derivatives match finite differences") {
    const Vec2 a{2.0, 0.0};
    std::mt19937 rng(41);
    std::uniform_real_distribution<double> U(-1.5, 1.5);
    const double h = 1e-5;
    for (int t = 0; t < 25; ++t) {
        Vec2 Y{U(rng), U(rng)};
        if (norm(Y) < 0.3) Y = {0.8, -0.6};
        const auto f = [&](Vec2 q) { return detail::power_term(a, q, 2, 4, 0.37).v; };
        const auto F = detail::power_term(a, Y, 2, 4, 0.37);
        CHECK(F.g.x == Approx((f({Y.x + h, Y.y}) - f({Y.x - h, Y.y})) / (2 * h)).epsilon(1e-5).margin(1e-8));
        CHECK(F.g.y == Approx((f({Y.x, Y.y + h}) - f({Y.x, Y.y - h})) / (2 * h)).epsilon(1e-5).margin(1e-8));
        const double lap = (f({Y.x + h, Y.y}) + f({Y.x - h, Y.y}) + f({Y.x, Y.y + h}) +
                            f({Y.x, Y.y - h}) - 4.0 * f(Y)) /
                           (h * h);
        CHECK(F.lap == Approx(lap).epsilon(1e-4).margin(1e-4));

        const auto g = [&](Vec2 q) { return detail::log_term(q, 0.91).v; };
        const auto G = detail::log_term(Y, 0.91);
        CHECK(G.g.x == Approx((g({Y.x + h, Y.y}) - g({Y.x - h, Y.y})) / (2 * h)).epsilon(1e-5).margin(1e-8));
        CHECK(std::abs(G.lap) < 1e-12); // harmonic away from 0

        const auto wf = [&](Vec2 q) { return detail::windowed(detail::power_term(a, q, 0, 2, 1.0), q).v; };
        const Vec2 W{1.1 + 0.3 * U(rng), 0.9};
        const auto WF = detail::windowed(detail::power_term(a, W, 0, 2, 1.0), W);
        CHECK(WF.g.x == Approx((wf({W.x + h, W.y}) - wf({W.x - h, W.y})) / (2 * h)).epsilon(1e-4).margin(1e-7));
        const double wlap = (wf({W.x + h, W.y}) + wf({W.x - h, W.y}) + wf({W.x, W.y + h}) +
                             wf({W.x, W.y - h}) - 4.0 * wf(W)) /
                            (h * h);
        CHECK(WF.lap == Approx(wlap).epsilon(1e-3).margin(1e-3));
    }
}

TEST_CASE("singular bracket assembles the four basis pieces") {
    SingularBasis basis;
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (int t = 0; t < 50; ++t) {
        Vec2 Y{U(rng), U(rng)};
        if (norm(Y) < 0.1) Y = {0.5, 0.5};
        const double plus = basis.inv_r4(Y) + basis.psi1(Y) + basis.psi2(Y) + basis.psi3(Y);
        const double minus = basis.inv_r4(Y) + basis.psi1(Y) - basis.psi2(Y) + basis.psi3(Y);
        CHECK(basis.omega_bracket(Y, +1.0).v == Approx(plus).epsilon(1e-12));
        CHECK(basis.omega_bracket(Y, -1.0).v == Approx(minus).epsilon(1e-12));
        const double r2 = norm2(Y), q = dot(basis.a, Y);
        const double z = -0.5 / r2 + std::log(r2) / 16.0 - q * q / (16.0 * r2);
        CHECK(basis.z_bracket(Y).v == Approx(z).epsilon(1e-12));
    }
}

TEST_CASE("closed-form G inverts the truncated bracket") {
    std::mt19937 rng(43);
    std::uniform_real_distribution<double> U(-3.0, 3.0);
    SingularBasis basis;
    int done = 0;
    while (done < 100) {
        const Vec2 Y{U(rng), U(rng)};
        const double r = norm(Y);
        if (r < 0.3 || r > 3.0) continue;
        ++done;
        const double lhs = -fd_laplacian(&g_closed, Y, 1e-4 * std::max(r, 1.0));
        const double rhs = basis.inv_r4(Y) + basis.psi1(Y);
        CHECK(lhs == Approx(rhs).epsilon(1e-6).margin(1e-6));
    }
}

TEST_CASE("stationary gradient and its cubic Taylor expansion") {
    CHECK_THROWS(w0_grad({2.0, 0.0}));
    CHECK(w0_grad({0.0, 1.0}).x == Approx(0.0).margin(1e-14));
    CHECK(w0_grad({0.0, -3.0}).x == Approx(0.0).margin(1e-14));

    std::mt19937 rng(44);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const Vec2 a{2.0, 0.0};
    for (int t = 0; t < 20; ++t) {
        Vec2 dir{U(rng), U(rng)};
        const double n = norm(dir);
        if (n < 0.1) continue;
        dir = (1.0 / n) * dir;
        const auto err = [&](double s) {
            const Vec2 Y{s * dir.x, s * dir.y};
            const Vec2 d = w0_grad(a + Y) - w0_taylor_cubic(Y);
            return norm(d);
        };
        CHECK(err(0.1) < 1e-3);
        if (err(0.1) > 1e-12) {
            const double order = std::log2(err(0.2) / err(0.1));
            CHECK(order > 3.0);
            CHECK(order < 5.0);
        }
    }
}

TEST_CASE("decaying radial mode of the single-peak operator is exact") {
    // f = 16/r^4 + 4/r^2 solves f'' + 5 f'/r - r f'/2 - f = 0; through the
    // analytic term machinery this pins the gradient/Laplacian algebra to a
    // closed-form solution of the model operator.
    const Vec2 a{2.0, 0.0};
    std::mt19937 rng(45);
    std::uniform_real_distribution<double> U(0.05, 5.0);
    for (int t = 0; t < 50; ++t) {
        const double r = U(rng);
        const double c = std::cos(0.7 + t), s = std::sin(0.7 + t);
        const Vec2 Y{r * c, r * s};
        Field3 f = detail::power_term(a, Y, 0, 4, 16.0);
        f += detail::power_term(a, Y, 0, 2, 4.0);
        const Vec2 adv{(4.0 / norm2(Y) - 0.5) * Y.x, (4.0 / norm2(Y) - 0.5) * Y.y};
        const double res = f.lap + dot(adv, f.g) - f.v;
        const double scale = std::abs(f.lap) + std::abs(f.v) + 1.0;
        CHECK(std::abs(res) <= 1e-12 * scale);
    }
}

TEST_CASE("graded mesh: symmetry, key lines, nesting") {
    MeshParams prm;
    prm.R = 12.0;
    const Mesh m0 = build_mesh(prm);
    REQUIRE(m0.nx > 10);
    REQUIRE(m0.ys[0] == 0.0);
    for (std::size_t i = 0; i < m0.nx; ++i)
        CHECK(m0.xs[i] == Approx(-m0.xs[m0.nx - 1 - i]).margin(0.0));
    const auto has = [&](const std::vector<double>& c, double v) {
        for (double x : c)
            if (x == v) return true;
        return false;
    };
    CHECK(has(m0.xs, 2.0));
    CHECK(has(m0.xs, -2.0));
    CHECK(has(m0.xs, 0.0));
    for (std::size_t i = 1; i < m0.nx; ++i) CHECK(m0.xs[i] > m0.xs[i - 1]);

    MeshParams fine = prm;
    fine.refine = 1;
    const Mesh m1 = build_mesh(fine);
    for (double x : m0.xs) CHECK(has(m1.xs, x));
    for (double y : m0.ys) CHECK(has(m1.ys, y));
    const double growth = static_cast<double>(m1.unknowns) / static_cast<double>(m0.unknowns);
    CHECK(growth > 3.4);
    CHECK(growth < 4.6);

    // nodes inside the excised disks are not unknowns
    for (std::size_t j = 0; j < m0.ny; ++j)
        for (std::size_t i = 0; i < m0.nx; ++i) {
            const Vec2 p = m0.at(i, j);
            if (norm2(p - m0.peak[0]) < prm.delta * prm.delta) CHECK(!m0.active(i, j));
        }
}

TEST_CASE("discrete operator is exact on axis-even quadratics") {
    MeshParams prm;
    prm.R = 12.0;
    const Mesh m = build_mesh(prm);
    std::vector<double> f(m.nx * m.ny, 0.0);
    const auto q = [](Vec2 p) { return 0.3 + 0.7 * p.x + 0.2 * p.x * p.x + 0.4 * p.y * p.y; };
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) f[m.id(i, j)] = q(m.at(i, j));
    const auto lf = l_apply(m, f);
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const double v = lf[m.id(i, j)];
            if (std::isnan(v)) continue;
            const Vec2 p = m.at(i, j);
            const Vec2 b = advection(m, p);
            const double exact = 1.2 + b.x * (0.7 + 0.4 * p.x) + b.y * (0.8 * p.y) - q(p);
            worst = std::max(worst, std::abs(v - exact) / (1.0 + std::abs(exact)));
            ++checked;
        }
    REQUIRE(checked > 1000);
    CHECK(worst < 1e-9);
}

TEST_CASE("bracket corrections cancel the cubic-order residual") {
    MeshParams prm;
    prm.R = 12.0;
    const Mesh m = build_mesh(prm);
    SingularBasis basis;

    const auto ring_max = [&](double rho, bool full) {
        double worst = 0.0;
        for (int t = 0; t < 128; ++t) {
            const double th = 2.0 * M_PI * t / 128.0;
            const Vec2 p{2.0 + rho * std::cos(th), rho * std::sin(th)};
            double r;
            if (full) {
                r = l_omega_bracket(m, basis, p, 0);
            } else {
                const Vec2 Y = p - m.peak[0];
                Field3 f = detail::power_term(basis.a, Y, 0, 4, 1.0);
                f += detail::power_term(basis.a, Y, 0, 2, 1.0 / 8.0);
                f += detail::power_term(basis.a, Y, 2, 4, 1.0 / 16.0);
                const Field3 w = detail::windowed(f, Y);
                r = w.lap + dot(advection(m, p), w.g) - w.v;
            }
            worst = std::max(worst, std::abs(r));
        }
        return worst;
    };

    // without the odd corrections the residual follows the 1/(4 rho^3) law
    CHECK(ring_max(0.08, false) * 0.08 * 0.08 * 0.08 == Approx(0.25).margin(0.07));
    CHECK(ring_max(0.1, false) * 0.001 == Approx(0.25).margin(0.07));
    // the full bracket removes it: O(1) residual all the way to the peak
    for (double rho : {0.08, 0.1, 0.2, 0.4, 0.8}) CHECK(ring_max(rho, true) < 2.0);
    CHECK(ring_max(0.1, false) / ring_max(0.1, true) > 100.0);
    // inside the cutoff annulus the window derivatives dominate but stay tame
    for (double rho : {1.2, 1.5, 1.9}) CHECK(ring_max(rho, true) < 10.0);

    // outside the window the bracket contributes nothing
    CHECK(l_omega_bracket(m, basis, {6.0, 1.0}, 0) == 0.0);
    CHECK(omega_bracket_value(m, basis, {6.0, 1.0}, 0) == 0.0);
    CHECK(z_bracket_value(m, basis, {-6.0, 1.0}, 1) == 0.0);
}

TEST_CASE("interpolation and ring probes") {
    MeshParams prm;
    prm.R = 12.0;
    const Mesh m = build_mesh(prm);
    std::vector<double> f(m.nx * m.ny, 0.0);
    for (std::size_t j = 0; j < m.ny; ++j)
        for (std::size_t i = 0; i < m.nx; ++i) {
            const Vec2 p = m.at(i, j);
            f[m.id(i, j)] = 1.5 * p.x + 2.0 * p.y;
        }
    std::mt19937 rng(46);
    std::uniform_real_distribution<double> U(-5.0, 5.0);
    for (int t = 0; t < 100; ++t) {
        const Vec2 p{U(rng), U(rng)};
        CHECK(interpolate(m, f, p) == Approx(1.5 * p.x + 2.0 * std::abs(p.y)).margin(1e-12));
    }
    std::vector<double> c(m.nx * m.ny, 3.25);
    const auto ring = probe_ring(m, c, {0.0, 2.0}, 0.5, 6.5, 32);
    CHECK(ring.mean == Approx(0.5).epsilon(1e-12));
    CHECK(ring.c1 == Approx(0.0).margin(1e-12));
}

TEST_CASE("fit helpers recover synthetic expansions") {
    const double d = 0.05;
    std::vector<double> s;
    for (double k : {2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0}) s.push_back(k * d);

    // Richardson in s with exponent sqrt(5)-2 is exact on the modelled decay.
    const double p0 = kSqrt5 - 2.0;
    const auto rich = detail::richardson_constant(-0.7 + 0.3 * std::pow(2 * d, p0),
                                                  -0.7 + 0.3 * std::pow(4 * d, p0),
                                                  -0.7 + 0.3 * std::pow(8 * d, p0));
    CHECK(rich[0] == Approx(-0.7).margin(1e-12));
    CHECK(rich[1] < 1e-12);

    std::vector<double> mean, c1;
    for (double si : s) {
        mean.push_back(-0.4 + 0.2 * si - 0.05 * si * si + 0.7 * detail::ipow(d / si, 4));
        c1.push_back(-0.02 * std::pow(si, p0) - 0.004 * si);
    }
    const auto fc = detail::fit_constant(s, mean, d);
    CHECK(fc[0] == Approx(-0.4).margin(1e-10));
    CHECK(fc[1] < 1e-10);

    // the double difference cancels the linear column exactly
    CHECK(detail::fit_exponent(s, c1, d) == Approx(p0).margin(1e-9));
    for (double p : {0.15, 0.35}) {
        std::vector<double> v;
        for (double si : s) v.push_back(0.1 * std::pow(si, p) + 0.9 * si);
        CHECK(detail::fit_exponent(s, v, d) == Approx(p).margin(1e-9));
    }

    CHECK(detail::bisect({0.0, 1.0, 3.0}, 1) == std::vector<double>{0.0, 0.5, 1.0, 2.0, 3.0});
}

TEST_CASE("manufactured interior solution converges at second order") {
    const Vec2 c{0.0, 4.0};
    const auto u = [&](Vec2 p) { return std::exp(-0.5 * norm2(p - c)); };
    double err[2];
    for (int lev = 0; lev < 2; ++lev) {
        MeshParams prm;
        prm.R = 12.0;
        prm.h_core = 0.025;
        prm.refine = lev;
        const Mesh m = build_mesh(prm);
        const LinearSystem sys = build_system(m);
        const auto src = [&](Vec2 p, std::size_t) {
            const Vec2 g = p - c;
            const double v = u(p);
            const double lap = (norm2(g) - 2.0) * v;
            const Vec2 b = advection(m, p);
            return lap - b.x * g.x * v - b.y * g.y * v - v;
        };
        const auto phi = solve_remainder(sys, src, {0.0, 0.0});
        double worst = 0.0;
        for (std::size_t j = 0; j < m.ny; ++j)
            for (std::size_t i = 0; i < m.nx; ++i) {
                if (!m.active(i, j)) continue;
                const Vec2 p = m.at(i, j);
                if (norm(p - m.peak[0]) < 1.0 || norm(p - m.peak[1]) < 1.0) continue;
                worst = std::max(worst, std::abs(phi[m.id(i, j)] - u(p)));
            }
        err[lev] = worst;
    }
    CHECK(err[0] < 0.05);
    CHECK(err[1] < err[0] / 2.5);
}

TEST_CASE("driven outer solve: matching constants and mode structure") {
    const OuterSolution& sol = small_solution();
    REQUIRE(sol.history.size() == 2);

    // A is small and negative: the two-peak interaction scale, far below the
    // O(1) magnitude a first reading of the construction might suggest.
    CHECK(sol.A > -0.011);
    CHECK(sol.A < -0.008);
    CHECK(sol.A_err > 1e-6);
    CHECK(sol.A_err < 2e-3);
    CHECK(sol.A_peak_delta < 1e-9);
    CHECK(std::abs(sol.A) > 5.0 * sol.A_err);

    CHECK(sol.has_z);
    CHECK(std::isfinite(sol.B));
    CHECK(sol.B > -0.06);
    CHECK(sol.B < -0.02);
    CHECK(sol.B_err < 2e-2);
    CHECK(sol.B_peak_delta < 1e-9);

    CHECK(sol.symmetry_err < 1e-8);

    // growing and decaying indicial roots of the n = 1 near-peak mode
    CHECK(sol.exponent == Approx(kSqrt5 - 2.0).epsilon(0.10));
    CHECK(sol.decay == Approx(kSqrt5 + 2.0).epsilon(0.02));

    const LevelRecord& r0 = sol.history[0];
    const LevelRecord& r1 = sol.history[1];
    const double growth = static_cast<double>(r1.unknowns) / static_cast<double>(r0.unknowns);
    CHECK(growth > 3.4);
    CHECK(growth < 4.6);
    CHECK(std::abs(r1.A1 - r0.A1) < 1e-3);
    CHECK(r1.fit_rms < 1e-5);
    CHECK(std::abs(r1.A1 - r1.A1_lsq) < 1e-3);

    // ring means of the remainder sit flat at A over the probe span
    const Mesh& m = sol.data[1]->mesh;
    for (double k : {2.0, 3.0, 4.0, 6.0}) {
        const auto ring =
            probe_ring(m, sol.data[1]->phi, m.peak[0], k * sol.prm.delta, sol.prm.D1, 64);
        CHECK(ring.mean == Approx(r1.A1).margin(3e-3));
    }
}

TEST_CASE("reconstructed field satisfies the homogeneous equation") {
    const OuterSolution& sol = small_solution();
    double worst[2];
    for (int lev = 0; lev < 2; ++lev) {
        const Mesh& m = sol.data[static_cast<std::size_t>(lev)]->mesh;
        const auto lf = l_apply(m, sol.data[static_cast<std::size_t>(lev)]->omega);
        double w = 0.0;
        for (std::size_t j = 0; j < m.ny; ++j)
            for (std::size_t i = 0; i < m.nx; ++i) {
                const double v = lf[m.id(i, j)];
                if (std::isnan(v)) continue;
                const Vec2 p = m.at(i, j);
                if (norm(p - m.peak[0]) < 1.0 || norm(p - m.peak[1]) < 1.0) continue;
                if (norm(p) > sol.prm.R - 1.0) continue;
                w = std::max(w, std::abs(v));
            }
        worst[lev] = w;
    }
    // The only residual away from the peaks is bracket truncation error. It
    // concentrates where the cutoff switches on and its spacing-jump part
    // halves per bisection, so the decay sits between first and second order.
    CHECK(worst[1] < worst[0] / 1.8);
    CHECK(worst[1] < 3.0);
}

TEST_CASE("solve respects the scaling and decoupled-Z paths") {
    OuterParams p;
    p.R = 12.0;
    p.levels = 1;
    const OuterSolution base = solve_full(p, true);

    OuterParams dbl = p;
    dbl.D1 = dbl.D2 = 16.0;
    const OuterSolution twice = solve_full(dbl, false);
    CHECK(twice.A == Approx(base.history[0].A1).margin(1e-10));

    const OuterSolution redo = solve_Z(solve_omega(p));
    CHECK(redo.has_z);
    CHECK(redo.B == Approx(base.B).margin(1e-12));
    CHECK(redo.A == Approx(base.A).margin(0.0));

    // remainder stays O(D) over the whole domain
    const Mesh& m = base.data[0]->mesh;
    double big = 0.0;
    for (double v : base.data[0]->phi) big = std::max(big, std::abs(v));
    CHECK(big < 10.0 * p.D1);
    CHECK(m.unknowns > 1000);
}
