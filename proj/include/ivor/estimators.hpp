#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ivor/dataset.hpp"
#include "ivor/errors.hpp"
#include "ivor/formula.hpp"
#include "ivor/glm.hpp"
#include "ivor/variance.hpp"

namespace ivor {

enum class EstimatorKind {
    StandardIV,
    AdjustedIV,
    LogisticSMM,
    ClosedFormBinary,
    ProbitNormalSMM,
    GMMMarginal,
};

const char* estimator_name(EstimatorKind kind);

struct CurvePoint {
    double psi, lhs, rhs;
};

struct RootDiagnostics {
    enum class Multiplicity { Unique, Two, None };
    Multiplicity multiplicity = Multiplicity::Unique;
    std::vector<double> roots;        // sorted candidate psi values
    std::vector<double> implied_ey0;  // mean counterfactual outcome at each root
    double bracket_lo = 0.0, bracket_hi = 0.0;
    std::vector<CurvePoint> curve;
};

struct CausalFit {
    double psi = 0.0;  // log conditional causal odds ratio (lead coefficient)
    Vec psi_vec;       // full m(C;psi) coefficient vector
    double se = 0.0;   // stacked sandwich standard error
    double se_model = 0.0;  // second-stage model-based SE (IV estimators)
    double ci_low = 0.0, ci_high = 0.0;
    double p_value = 1.0;
    EstimatorKind estimator = EstimatorKind::LogisticSMM;
    std::string ci_method;  // "wald" or "score"
    RootDiagnostics diagnostics;
    std::vector<FitResult> nuisance;

    // ProbitNormalSMM extras
    double phi_probit = 0.0;
    bool outcome_mean_out_of_range = false;
};

// Thrown when the estimating function has constant sign over the search
// bracket; carries the evaluated curve for inspection.
class NoRootError : public Error {
public:
    NoRootError(ErrorCode code, const std::string& what, RootDiagnostics diag)
        : Error(code, what), diagnostics(std::move(diag)) {}
    RootDiagnostics diagnostics;
};

struct IvOptions {
    enum class FirstStagePopulation { All, ControlsOnly };
    FirstStagePopulation first_stage_population = FirstStagePopulation::All;
    double weak_delta_tol = 1e-8;
    double weak_t_tol = 1e-6;
    // CI/p-value source: the stacked sandwich SE, or the second-stage
    // model-based SE (what standard software reports for two-stage fits).
    enum class CiSe { Sandwich, ModelBased };
    CiSe ci_se = CiSe::Sandwich;
};

// Two-stage IV: linear first stage for E(X|Z,C), logistic second stage of
// Y on covariates and m(C;psi)*Xhat.
CausalFit standard_iv(const Dataset& data, const ModelSpec& first_stage,
                      const ModelSpec& m_spec, const IvOptions& options = {});

// Control-function variant: adds first-stage residual terms to the second
// stage. residual_terms lists the basis multiplying R (default: "~ 1",
// a linear main effect of R).
CausalFit adjusted_iv(const Dataset& data, const ModelSpec& first_stage,
                      const ModelSpec& m_spec, const ModelSpec& residual_terms,
                      const IvOptions& options = {});

// log(or_yz) / delta_xz for a dichotomous instrument.
double wald_ratio(double or_yz, double delta_xz, double tol = 1e-12);

// Counterfactual no-exposure prediction H(psi, beta-hat) per subject.
Vec counterfactual_predict(std::span<const double> psi, const FitResult& assoc_fit,
                           const ModelSpec& assoc_spec, const ModelSpec& m_spec,
                           const Dataset& data);

struct SmmOptions {
    double bracket_lo = -10.0;
    double bracket_hi = 10.0;
    double grid_step = 0.25;
    double root_tol = 1e-10;
    enum class RootSelection { SmallerAbs, Smallest, Largest };
    RootSelection selection = RootSelection::SmallerAbs;
    enum class CiMethod { ScoreInversion, Wald };
    CiMethod ci_method = CiMethod::ScoreInversion;
    bool congeniality_override = false;
    bool capture_curve = false;
};

// Logistic structural mean model estimator: fits the association model by
// ML, then solves the mean-independence estimating equation for psi with
// d(Z,C) = Z centered at its sample mean (no covariates) or at fitted
// values of a linear regression of Z on C.
CausalFit logistic_smm(const Dataset& data, const ModelSpec& assoc_spec,
                       const ModelSpec& m_spec, const SmmOptions& options = {});

// Closed-form psi for dichotomous exposure and instrument: the quadratic
// in exp(psi) implied by the same estimating equation, with cell
// probabilities from the fitted association model. Standard errors and
// diagnostics match logistic_smm on the expanded data.
CausalFit closed_form_binary(const CountTable2x2x2& table,
                             const ModelSpec& assoc_spec,
                             const SmmOptions& options = {});

// (psi, lhs, rhs) triples over a grid: the two instrument-group means of
// H for a dichotomous instrument without covariates, else the estimating
// function value against zero.
std::vector<CurvePoint> estimating_curve(const Dataset& data,
                                         const FitResult& assoc_fit,
                                         const ModelSpec& assoc_spec,
                                         const ModelSpec& m_spec,
                                         std::span<const double> psi_grid);

struct ProbitOptions {
    double weak_alpha_tol = 1e-8;
    double weak_t_tol = 1e-6;
};

// Probit-link structural mean estimator under conditionally normal
// exposure: phi-hat = lambda1 * sqrt(1 + theta1^2 sigma^2) / alpha1,
// reported on the log-odds scale through the probit-logit slope constant.
CausalFit probit_normal_smm(const Dataset& data, const ModelSpec& first_stage,
                            const ModelSpec& assoc_spec,
                            const ModelSpec& reduced_spec,
                            const ProbitOptions& options = {});

namespace detail {

// Internals shared with the marginal-effect estimators.
struct SmmEngine {
    const Dataset* data = nullptr;
    ModelSpec assoc_spec;
    ModelSpec m_spec;
    FitResult assoc_fit;
    Design assoc_design;
    Design m_design;
    Vec assoc_eta;   // clamped linear predictor
    Vec d_centered;  // instrument minus its conditional-mean fit
    Vec mu_assoc;    // association-model fitted means
    Matrix info_assoc;  // mean information of the association block

    static SmmEngine prepare(const Dataset& data, const ModelSpec& assoc_spec,
                             const ModelSpec& m_spec, bool congeniality_override);

    // Same, but reuses an existing association fit instead of refitting.
    static SmmEngine from_fit(const Dataset& data, const ModelSpec& assoc_spec,
                              const ModelSpec& m_spec, FitResult assoc_fit);

    // H_i(psi) with the exposure shifted by reference level x0.
    Vec counterfactual(std::span<const double> psi, double x0) const;

    // Sum of the estimating function at psi (scalar m only) for exposure
    // reference x0.
    double estimating_sum(double psi, double x0) const;
    double estimating_derivative(double psi, double x0) const;

    // Per-subject estimating rows with conditional-mean centering of H.
    Vec estimating_rows(std::span<const double> psi, double x0) const;

    // Propagated score statistic z(psi) for inversion intervals.
    double score_stat(double psi, double x0) const;

    std::vector<double> solve_roots(double x0, const SmmOptions& options,
                                    RootDiagnostics& diag) const;
    double select_root(const std::vector<double>& roots, double x0,
                       const SmmOptions& options, RootDiagnostics& diag) const;

    // Full stack (assoc block + psi block) for the sandwich at psi.
    ScoreStack build_stack(double psi, double x0) const;
};

}  // namespace detail

}  // namespace ivor
