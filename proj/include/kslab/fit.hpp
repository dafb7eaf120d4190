#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace kslab::fit {

// Least-squares coefficients for y ~ sum_k c_k basis_k(x).
inline std::vector<double> lsq(const std::vector<double>& x, const std::vector<double>& y,
                               const std::vector<std::function<double(double)>>& basis) {
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto k = static_cast<Eigen::Index>(basis.size());
    if (x.size() != y.size() || x.size() < basis.size())
        throw std::invalid_argument("fit::lsq: bad sample dimensions");
    Eigen::MatrixXd A(n, k);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        b(i) = y[i];
        for (Eigen::Index j = 0; j < k; ++j) A(i, j) = basis[j](x[i]);
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
    return {c.data(), c.data() + k};
}

struct Line {
    double slope = 0.0;
    double intercept = 0.0;
};

// Ordinary least-squares straight line y ~ slope*x + intercept.
inline Line line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit::line: bad samples");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double det = n * sxx - sx * sx;
    return {(n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det};
}

// Fits |y| ~ C x^p on a log-log scale; returns {p, log C}.
inline Line loglog(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx(x.size()), ly(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        lx[i] = std::log(x[i]);
        ly[i] = std::log(std::abs(y[i]));
    }
    return line(lx, ly);
}

} // namespace kslab::fit
