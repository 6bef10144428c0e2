#include "ivor/variance.hpp"

#include <algorithm>
#include <cmath>

#include "ivor/errors.hpp"
#include "ivor/kernels.hpp"

namespace ivor {

std::size_t ScoreStack::dim() const {
    std::size_t d = 0;
    for (const auto& b : blocks) d += b.dim;
    return d;
}

Matrix ScoreStack::eval_rows(std::span<const double> theta_at) const {
    Matrix out(n, dim());
    std::size_t col = 0;
    for (const auto& b : blocks) {
        b.eval(theta_at, out, col);
        col += b.dim;
    }
    return out;
}

Vec ScoreStack::mean_scores(std::span<const double> theta_at) const {
    Matrix rows = eval_rows(theta_at);
    const std::size_t d = dim();
    Vec mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += rows(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    return mean;
}

double ScoreStack::score_sum_norm() const {
    Vec mean = mean_scores(theta);
    double norm = 0.0;
    for (double v : mean) norm = std::max(norm, std::abs(v) * static_cast<double>(n));
    return norm;
}

Matrix fd_mean_jacobian(const ScoreStack& stack, std::span<const double> theta) {
    const std::size_t d = stack.dim();
    Matrix jac(d, d);
    Vec work(theta.begin(), theta.end());
    for (std::size_t j = 0; j < d; ++j) {
        double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
        double orig = work[j];
        work[j] = orig + h;
        Vec up = stack.mean_scores(work);
        work[j] = orig - h;
        Vec dn = stack.mean_scores(work);
        work[j] = orig;
        for (std::size_t i = 0; i < d; ++i) jac(i, j) = (up[i] - dn[i]) / (2.0 * h);
    }
    return jac;
}

SandwichResult sandwich_cov(const ScoreStack& stack) {
    const std::size_t d = stack.dim();
    const double n = static_cast<double>(stack.n);

    SandwichResult res;
    res.bread = stack.mean_jacobian ? stack.mean_jacobian(stack.theta)
                                    : fd_mean_jacobian(stack, stack.theta);

    Matrix rows = stack.eval_rows(stack.theta);
    res.meat = Matrix(d, d);
    for (std::size_t i = 0; i < stack.n; ++i) {
        auto r = rows.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            if (r[a] == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) res.meat(a, b) += r[a] * r[b];
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            res.meat(a, b) /= n;
            res.meat(b, a) = res.meat(a, b);
        }

    Matrix binv = inverse_lu(res.bread);  // throws SingularBread
    Matrix v = matmul(matmul(binv, res.meat), binv.transposed());
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) v(a, b) /= n;
    res.vcov = psd_floor(std::move(v));
    return res;
}

double influence_se(std::span<const double> influence) {
    const double n = static_cast<double>(influence.size());
    if (influence.empty()) return 0.0;
    double mean = kernels::sum(influence) / n;
    double ss = 0.0;
    for (double v : influence) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / n / n);
}

}  // namespace ivor
