#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "ivor/dataset.hpp"
#include "ivor/formula.hpp"
#include "ivor/linalg.hpp"

namespace ivor {

struct FitResult {
    Vec beta;
    Matrix vcov_model;  // inverse observed information / OLS form
    double score_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::uint64_t design_hash = 0;
    Link link = Link::Logit;
    std::vector<std::string> coef_names;
    double sigma2 = 0.0;  // identity link: residual variance (RSS/n)

    double coef(const std::string& name) const;
    double se_model(std::size_t j) const { return std::sqrt(vcov_model(j, j)); }
};

struct GlmOptions {
    int max_iterations = 100;
    double score_tol = 1e-10;
    double coef_tol = 1e-12;
    // |linear predictor| beyond this at convergence failure flags separation
    double separation_eta = 30.0;
    std::optional<Vec> weights;   // prior weights
    std::optional<Vec> offset;    // fixed offset added to the linear predictor
};

// Deterministic ML fit: IRLS with step-halving for logit/probit, exact
// least squares for the identity link.
FitResult fit_glm(const Dataset& data, const ModelSpec& spec,
                  const GlmOptions& options = {});

// Same fit on an already-materialized design (two-stage estimators build
// regressors, like predicted exposures, that are not dataset columns).
FitResult fit_glm_design(const Design& design, const Vec& response, Link link,
                         const GlmOptions& options = {});

// Link-inverse of the linear predictor per row; the model spec must hash-match
// the one the fit was produced from.
Vec predict_mean(const FitResult& fit, const Dataset& data, const ModelSpec& spec);

// Per-subject score rows (n x p) at beta; canonical logit score for the
// logit link, generalized least squares score for probit, residual score
// for identity. Shared with the sandwich stacking machinery.
Matrix glm_score_rows(const Design& design, const Vec& response, Link link,
                      std::span<const double> beta,
                      const std::optional<Vec>& weights = std::nullopt,
                      const std::optional<Vec>& offset = std::nullopt);

// Analytic observed information (negative Jacobian of the summed score).
Matrix glm_observed_information(const Design& design, const Vec& response,
                                Link link, std::span<const double> beta,
                                const std::optional<Vec>& weights = std::nullopt,
                                const std::optional<Vec>& offset = std::nullopt);

}  // namespace ivor
