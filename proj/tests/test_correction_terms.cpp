#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <random>

#include "kslab/correction_terms.hpp"

using namespace kslab;
using Catch::Approx;

namespace {

const LogGrid& shared_grid() {
    static LogGrid g(1e-3, 1e3, 4097);
    return g;
}

const modes::ModeSet& modeset(int L) {
    static std::map<int, modes::ModeSet> cache;
    auto it = cache.find(L);
    if (it == cache.end()) it = cache.emplace(L, modes::build_modeset(L, shared_grid())).first;
    return it->second;
}

// eps = 1e-2 with a slow-time derivative consistent with the width law at
// tau = 100 (alpha evaluated at A = -0.95).
constexpr double kAlpha = 3.922690;
constexpr double kTau = 100.0;

corr::CorrectionParams default_params() {
    const double eps = 1e-2;
    const double eps_tau = -kAlpha * eps / (2.0 * std::sqrt(kTau));
    return corr::CorrectionParams::from_matching(eps, eps_tau);
}

std::vector<double> random_radii(unsigned seed, std::size_t n, double lo, double hi) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(std::log(lo), std::log(hi));
    std::vector<double> r(n);
    for (auto& x : r) x = std::exp(d(rng));
    return r;
}

} // namespace

TEST_CASE("g1 vanishes at the origin and matches its far field") {
    const auto p = default_params();
    const double X = p.X();
    REQUIRE(corr::g1(0.0, p) == 0.0);
    REQUIRE(corr::Q21(0.0, p) == 0.0);
    REQUIRE(corr::Q21(1e3, p) * 1e6 / X == Approx(-2.0).epsilon(0.02));
    REQUIRE(corr::V21_prime(1e3, p) * 1e3 / X - std::log(1e6) == Approx(-2.0).epsilon(0.05));

    const auto f = corr::sample_g1(shared_grid(), p);
    REQUIRE(corr::fd_deviation(shared_grid(), f) < 1e-6);
    for (std::size_t i : {std::size_t{100}, std::size_t{2048}, std::size_t{4000}}) {
        const double r = shared_grid().r[i];
        REQUIRE(f.val[i] == Approx(corr::g1(r, p)).epsilon(1e-9));
        REQUIRE(f.der[i] == Approx(corr::g1_prime(r, p)).epsilon(1e-9));
    }
}

TEST_CASE("closed pairs solve the homogeneous layer systems") {
    const auto p = default_params();
    const auto c23 = corr::pair_Q23(p.B23);
    const auto c3 = corr::pair_Q3(corr::CorrectionParams::matched_B3(p.eps));
    for (double r : random_radii(7, 50, 1e-2, 1e2)) {
        REQUIRE(corr::pair_residual(c23, r) < 1e-10);
        REQUIRE(corr::pair_residual(c3, r) < 1e-10);
    }

    const auto [q0, v0] = corr::Q23_V23(0.0, p.B23);
    REQUIRE(q0 == 0.0);
    REQUIRE(v0 == 0.0);
    const auto [q30, v30] = corr::Q3_V3(0.0, 1.0);
    REQUIRE(q30 == 0.0);
    REQUIRE(v30 == 0.0);

    const auto [qf, vf] = corr::Q23_V23(1e3, p.B23);
    REQUIRE(vf / 1e6 == Approx(p.B23).margin(1e-6));
    const double B3 = corr::CorrectionParams::matched_B3(p.eps);
    const auto [q3f, v3f] = corr::Q3_V3(1e3, B3);
    REQUIRE(v3f / (2.0 * B3 * 1e9) == Approx(1.0).epsilon(1e-5));

    const auto [qa, va] = corr::Q23_V23(3.7, 2.0 * p.B23);
    const auto [qb, vb] = corr::Q23_V23(3.7, p.B23);
    REQUIRE(qa == 2.0 * qb);
    REQUIRE(va == 2.0 * vb);
}

TEST_CASE("U421 balances the quadratic mass flux") {
    const auto p = default_params();
    const auto [u0, w0] = corr::U421(0.0, p.B23);
    REQUIRE(u0 == 0.0);
    REQUIRE(w0 == 0.0);
    for (double r : random_radii(11, 50, 1e-2, 1e2)) {
        REQUIRE(corr::u421_balance_residual(r, p.B23) < 1e-9);
        REQUIRE(corr::u421_flux_residual(r, p.B23) < 1e-9);
    }
    const auto [ua, wa] = corr::U421(2.5, 2.0 * p.B23);
    const auto [ub, wb] = corr::U421(2.5, p.B23);
    REQUIRE(ua == 4.0 * ub);
    REQUIRE(wa == 4.0 * wb);
}

TEST_CASE("sources reproduce their near and far asymptotics") {
    const auto p = default_params();
    const double B = p.B23, Xt = p.Xtilde();
    const double amp = 3.0 * p.X() * B - p.B23_tau * p.eps * p.eps;

    const auto near = corr::sources(1e-2, p);
    REQUIRE(near.G2 / 1e-4 == Approx(24.0 * amp).epsilon(0.01));
    REQUIRE(near.G3 / 1e-8 == Approx(768.0 * B * B).epsilon(0.01));

    const auto far = corr::sources(1e2, p);
    REQUIRE(far.G3 * 1e4 == Approx(32.0 * B * B).epsilon(0.01));
    REQUIRE(far.G2 * 1e4 / (-8.0 * B) == Approx(Xt).epsilon(0.02));

    const double scale = std::abs(corr::source_G2(1.0, p));
    for (double r : random_radii(13, 40, 1e-2, 1e2)) {
        REQUIRE(corr::source_G2_assembled(r, p) ==
                Approx(corr::source_G2(r, p)).margin(1e-10 * scale).epsilon(1e-10));
    }

    const auto G2v = corr::sample_G2(shared_grid(), p);
    const auto G3v = corr::sample_G3(shared_grid(), B);
    for (std::size_t i : {std::size_t{500}, std::size_t{2000}, std::size_t{3500}}) {
        const double r = shared_grid().r[i];
        REQUIRE(G2v[i] == Approx(corr::source_G2(r, p)).epsilon(1e-10).margin(1e-12 * scale));
        REQUIRE(G3v[i] == Approx(corr::source_G3(r, B)).epsilon(1e-10));
    }

    REQUIRE(corr::source_G3(5.0, 2.0 * B) == 4.0 * corr::source_G3(5.0, B));
}

TEST_CASE("Q422 reproduces the forced L=2 far-field structure") {
    const auto p = default_params();
    const auto& ms = modeset(2);
    const auto q = corr::solve_Q422(p, ms);
    const double B = p.B23, Xt = p.Xtilde();
    const double amp = 3.0 * p.X() * B - p.B23_tau * p.eps * p.eps;

    REQUIRE(q.b1_smallr == Approx(-amp / 16.0).epsilon(0.02));
    REQUIRE(q.b1_log == Approx(B * Xt / 2.0).epsilon(0.05));
    REQUIRE(q.v_r2log == Approx(B * Xt / 2.0).epsilon(0.05));
    REQUIRE(q.q_const / (B * Xt) == Approx(-2.0).epsilon(0.05));
    REQUIRE(q.residual < 1e-6);
    REQUIRE(std::isfinite(q.B42));
    REQUIRE(corr::fd_deviation(ms.grid, q.Q) < 1e-6);
    REQUIRE(corr::fd_deviation(ms.grid, q.V) < 1e-6);

    corr::CorrectionParams doubled = p;
    doubled.B23 *= 2.0;
    doubled.B23_tau *= 2.0;
    const auto q2 = corr::solve_Q422(doubled, ms);
    REQUIRE(q2.B42 == 2.0 * q.B42);
    REQUIRE(q2.b[0][2048] == 2.0 * q.b[0][2048]);
}

TEST_CASE("Q423 reproduces the forced L=4 far-field structure") {
    const auto p = default_params();
    const auto& ms = modeset(4);
    const auto q = corr::solve_Q423(p, ms);

    REQUIRE(q.G3_coeff == Approx(32.0).epsilon(0.01));
    REQUIRE(q.D41_coeff == Approx(-1280.0 * std::sqrt(5.0)).epsilon(0.05));
    REQUIRE(q.c1_tail == Approx(1.0 / 6.0).epsilon(0.10));
    REQUIRE(q.v_r4 / (3.0 * q.c1_inf) == Approx(1.0).epsilon(0.02));
    REQUIRE(q.residual < 1e-6);
    REQUIRE(corr::fd_deviation(ms.grid, q.Q) < 1e-6);
    REQUIRE(corr::fd_deviation(ms.grid, q.V) < 1e-6);

    corr::CorrectionParams doubled = p;
    doubled.B23 *= 2.0;
    const auto q4 = corr::solve_Q423(doubled, ms);
    REQUIRE(q4.c1_inf == 4.0 * q.c1_inf);
    REQUIRE(q4.c3_inf == 4.0 * q.c3_inf);

    corr::CorrectionParams off = p;
    off.B23 = 0.0;
    const auto q0 = corr::solve_Q423(off, ms);
    for (int m = 0; m < 4; ++m)
        for (std::size_t i = 0; i < ms.grid.n; i += 512) REQUIRE(q0.c[m][i] == 0.0);
    REQUIRE(q0.c1_inf == 0.0);
    for (std::size_t i = 0; i < ms.grid.n; i += 512) REQUIRE(q0.Q.val[i] == 0.0);
}

TEST_CASE("g2 far field carries the slow-time forcing") {
    const auto p = default_params();
    const double eps = p.eps, eps_tau = p.eps_tau;
    const double eps_tautau =
        eps * (kAlpha * kAlpha / (4.0 * kTau) + kAlpha / (4.0 * kTau * std::sqrt(kTau)));
    const double X_tau = 2.0 * eps_tau * eps_tau + 2.0 * eps * (eps_tautau - eps_tau);

    const auto sol = corr::solve_g2(p, X_tau, shared_grid());
    REQUIRE(sol.r2log_unit_b == Approx(0.25).epsilon(0.10));
    REQUIRE(sol.r2_unit_a == Approx(-0.125).epsilon(0.10));
    REQUIRE(sol.r2_unit_b == Approx(-7.0 / 16.0).epsilon(0.10));
    REQUIRE(sol.r2log_total == Approx(eps * eps * X_tau / 4.0).epsilon(0.10));
    REQUIRE(sol.residual < 1e-6);
    REQUIRE(corr::fd_deviation(shared_grid(), sol.g2) < 1e-6);

    const auto frozen = corr::solve_g2(p, 0.0, shared_grid());
    REQUIRE(std::abs(frozen.r2log_total) <
            0.01 * std::abs(p.X() * p.X() * frozen.r2_unit_a));
}
