#pragma once

#include <map>

#include "ivor/estimators.hpp"

namespace ivor {

enum class MarginalMode { Exact, Approximate };

// Extended structural-mean fit: one psi per exposure reference level
// (Exact) or the level-0 psi reused everywhere (Approximate).
struct ExtendedSMMFit {
    std::map<double, double> psi_by_x;
    std::vector<double> x_levels;
    MarginalMode mode = MarginalMode::Approximate;
    FitResult assoc_fit;
    ModelSpec assoc_spec;
    ModelSpec m_spec;
};

struct ExtendedOptions {
    SmmOptions smm;
    int shift_bins = 50;  // quantile bins for observed-shift level sets
};

ExtendedSMMFit extended_smm(const Dataset& data, const ModelSpec& assoc_spec,
                            const ModelSpec& m_spec, std::vector<double> x_levels,
                            MarginalMode mode, const ExtendedOptions& options = {});

struct MeanTarget {
    enum class Kind { FixedLevel, ObservedPlusOne, ObservedTimes, Observed };
    Kind kind = Kind::Observed;
    double level = 0.0;
    double factor = 1.1;

    static MeanTarget fixed(double x) { return {Kind::FixedLevel, x, 0.0}; }
    static MeanTarget plus_one() { return {Kind::ObservedPlusOne, 0.0, 0.0}; }
    static MeanTarget times(double f) { return {Kind::ObservedTimes, 0.0, f}; }
    static MeanTarget observed() { return {Kind::Observed, 0.0, 0.0}; }
};

// Average counterfactual outcome under the target exposure assignment.
double counterfactual_mean(const ExtendedSMMFit& fit, const Dataset& data,
                           const MeanTarget& target);

struct Contrast {
    enum class Kind { FixedLevels, AdditiveShift, MultiplicativeShift };
    Kind kind = Kind::FixedLevels;
    double x0 = 0.0, x1 = 1.0;
    double factor = 1.1;

    static Contrast fixed_levels(double x0, double x1) {
        return {Kind::FixedLevels, x0, x1, 0.0};
    }
    static Contrast plus_one() { return {Kind::AdditiveShift, 0.0, 0.0, 0.0}; }
    static Contrast times(double f) {
        return {Kind::MultiplicativeShift, 0.0, 0.0, f};
    }
};

struct MarginalEffect {
    double log_or = 0.0;
    double risk_diff = 0.0;
    double rel_risk = 1.0;
    double mu_low = 0.0, mu_high = 0.0;
    double se_log_or = 0.0;
    double se_risk_diff = 0.0;
    double se_rel_risk = 0.0;
    double ci_low = 0.0, ci_high = 0.0;  // Wald on the log-odds scale
    Contrast contrast;
    // score-inversion interval mapped through the marginal transformation;
    // available for approximate-mode fixed-level contrasts
    bool has_inversion_ci = false;
    double inv_ci_low = 0.0, inv_ci_high = 0.0;
};

// Marginal causal contrast with influence-function standard errors for the
// log odds ratio and delta-method errors for the risk difference and
// relative risk.
MarginalEffect marginal_contrast(const ExtendedSMMFit& fit, const Dataset& data,
                                 const Contrast& contrast);

// Level set a contrast needs under the given data (distinct shifted
// exposures, quantile-binned for continuous exposures).
std::vector<double> contrast_levels(const Dataset& data, const Contrast& contrast,
                                    int bins = 50);

struct GmmOptions {
    int max_iterations = 50;
    int max_halvings = 10;  // step scaled down to 2^-10
    double tol = 1e-8;      // sup-norm of the moment sum, per subject
};

// Just-identified GMM for the marginal causal odds ratio: moments
// (1, Z, C) * {Y - expit(b0 + psi X + b C)} solved by damped Newton from
// the logistic-regression start.
CausalFit gmm_marginal(const Dataset& data, const ModelSpec& spec,
                       const GmmOptions& options = {});

}  // namespace ivor
