#pragma once

#include <cmath>

namespace ivor {

// Two-sided z for 95% intervals, fixed rather than recomputed.
inline constexpr double kZ95 = 1.959964;

// Attenuation constant of the logistic-by-probit approximation,
// beta{sigma^2} = beta (c^2 sigma^2 + 1)^(-1/2). Used only in tests and
// documentation of the approximate estimators; no estimator consumes it.
inline const double kExpitNormalScale = 16.0 * std::sqrt(3.0) / (15.0 * M_PI);

// Probit-to-logit slope conversion used by the probit estimator.
inline constexpr double kProbitLogitScale = 0.6071;

// Overflow-stable logistic function.
inline double expit(double t) {
    if (t >= 0.0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    double e = std::exp(t);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Standard normal cdf via erfc; keeps tail accuracy the probit link needs.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// Two-sided normal p-value for a z statistic.
inline double normal_p_value(double z) { return std::erfc(std::abs(z) * M_SQRT1_2); }

// Linear predictors are clamped here before composing counterfactual
// probabilities; expit saturates numerically far inside this range.
inline constexpr double kLinearPredictorClamp = 30.0;

inline double clamp_eta(double eta) {
    if (eta > kLinearPredictorClamp) return kLinearPredictorClamp;
    if (eta < -kLinearPredictorClamp) return -kLinearPredictorClamp;
    return eta;
}

}  // namespace ivor
