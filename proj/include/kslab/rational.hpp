#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace kslab {

namespace poly {

using Poly = std::vector<double>; // ascending coefficients

inline double eval(const Poly& p, double u) {
    double v = 0.0;
    for (std::size_t i = p.size(); i-- > 0;) v = v * u + p[i];
    return v;
}

inline Poly add(const Poly& a, const Poly& b) {
    Poly r(std::max(a.size(), b.size()), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] += a[i];
    for (std::size_t i = 0; i < b.size(); ++i) r[i] += b[i];
    return r;
}

inline Poly mul(const Poly& a, const Poly& b) {
    Poly r(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
    return r;
}

inline Poly scale(const Poly& a, double s) {
    Poly r = a;
    for (auto& c : r) c *= s;
    return r;
}

inline Poly deriv(const Poly& a) {
    if (a.size() <= 1) return {0.0};
    Poly r(a.size() - 1);
    for (std::size_t i = 1; i < a.size(); ++i) r[i - 1] = a[i] * static_cast<double>(i);
    return r;
}

} // namespace poly

// f(r) = r^s N(u) / (1+u)^m with u = r^2. Closed under d/dr and products,
// which keeps derivatives of the profile functions exact.
struct PowerRational {
    double s = 0.0;
    poly::Poly num{0.0};
    int m = 0;

    double operator()(double r) const {
        const double u = r * r;
        return std::pow(r, s) * poly::eval(num, u) / std::pow(1.0 + u, m);
    }

    PowerRational deriv() const {
        // (1+u) (s N + 2u N') - 2 m u N, with exponent s-1 and weight m+1
        poly::Poly t = poly::add(poly::scale(num, s), poly::mul({0.0, 2.0}, poly::deriv(num)));
        poly::Poly r = poly::add(poly::mul({1.0, 1.0}, t), poly::mul({0.0, -2.0 * m}, num));
        return {s - 1.0, r, m + 1};
    }

    PowerRational times(const PowerRational& o) const {
        return {s + o.s, poly::mul(num, o.num), m + o.m};
    }

    PowerRational scaled(double c) const { return {s, poly::scale(num, c), m}; }

    PowerRational plus(const PowerRational& o) const {
        // requires equal s; weights may differ
        const int mm = std::max(m, o.m);
        poly::Poly a = num, b = o.num;
        for (int i = m; i < mm; ++i) a = poly::mul(a, {1.0, 1.0});
        for (int i = o.m; i < mm; ++i) b = poly::mul(b, {1.0, 1.0});
        return {s, poly::add(a, b), mm};
    }
};

} // namespace kslab
