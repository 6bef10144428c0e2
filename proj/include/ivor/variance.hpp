#pragma once

#include <functional>
#include <string>

#include "ivor/linalg.hpp"

namespace ivor {

// One block of stacked per-subject estimating functions. `eval` writes the
// n x dim block into `out` starting at column `col0`, as a function of the
// FULL stacked parameter vector (blocks may depend on upstream nuisance
// parameters).
struct ScoreBlock {
    std::string name;
    std::size_t dim = 0;
    std::function<void(std::span<const double> theta, Matrix& out, std::size_t col0)>
        eval;
};

struct ScoreStack {
    std::size_t n = 0;
    Vec theta;  // concatenated solution
    std::vector<ScoreBlock> blocks;

    // Analytic Jacobian of the mean estimating function at theta; when
    // absent the sandwich falls back to central finite differences.
    std::function<Matrix(std::span<const double>)> mean_jacobian;

    std::size_t dim() const;
    Matrix eval_rows(std::span<const double> theta_at) const;  // n x dim
    Vec mean_scores(std::span<const double> theta_at) const;

    // Largest |block sum| over all coordinates at the solution.
    double score_sum_norm() const;
};

// Central finite differences of the mean estimating function,
// h = 1e-6 * max(1, |theta_j|) per coordinate.
Matrix fd_mean_jacobian(const ScoreStack& stack, std::span<const double> theta);

struct SandwichResult {
    Matrix vcov;   // full covariance of theta-hat (already divided by n)
    Matrix bread;  // mean Jacobian
    Matrix meat;   // empirical second moment of stacked scores
};

// Empirical sandwich: bread^-1 * meat * bread^-T / n, symmetrized and
// eigen-floored at zero. Throws Error(SingularBread).
SandwichResult sandwich_cov(const ScoreStack& stack);

// sqrt(empirical variance / n) of a per-subject influence vector.
double influence_se(std::span<const double> influence);

}  // namespace ivor
