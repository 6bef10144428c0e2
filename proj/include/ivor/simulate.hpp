#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivor/dataset.hpp"
#include "ivor/estimators.hpp"
#include "ivor/integrate.hpp"
#include "ivor/rng.hpp"

namespace ivor {

enum class Experiment { A, B, C, D, E };

const char* experiment_name(Experiment e);
Experiment experiment_from_name(const std::string& name);

enum class NormalConvention { Variance2, Sd2 };

struct DGPConfig {
    Experiment experiment = Experiment::A;
    std::size_t n = 1000;
    double psi_true = 1.0;
    double target_ey = 0.5;
    double beta_z = 1.0;
    double allele_freq = 0.3;
    NormalConvention convention = NormalConvention::Variance2;
    double interaction_coeff = 1.0;  // exposure-instrument interaction (experiment e)
    int gamma_shape_offset = 1;      // experiment d: Gamma(shape z + offset)
    std::uint64_t seed = 0;

    // Canonical per-experiment configuration of the study design.
    static DGPConfig for_experiment(Experiment e, double target_ey, double psi_true,
                                    std::size_t n = 1000, std::uint64_t seed = 0);

    double sigma() const {
        return convention == NormalConvention::Variance2 ? std::sqrt(2.0) : 2.0;
    }
};

// Solved outcome-model coefficients plus design diagnostics.
struct DGPParams {
    double beta0 = 0.0;
    double beta_x = 0.0;
    double max_discrepancy = 0.0;  // counterfactual-mean spread across z
    bool no_exact_solution = false;
    double achieved_ey = 0.0;
};

// Instrument copies 0/1/2 under Hardy-Weinberg equilibrium.
Vec gen_instrument(std::size_t n, double allele_freq, Philox& rng);

// Exposure draw given the instrument, per experiment.
Vec gen_exposure(const Vec& z, const DGPConfig& config, Philox& rng);

// beta_x making the instrument-weighted counterfactual mean contrast
// vanish (exact mean independence for location-family exposures); beta0
// depends on it for the non-location designs, so the current value is an
// input.
double solve_beta_x(const DGPConfig& config, double beta0);

// beta0 hitting the target outcome mean given beta_x.
double solve_beta_0(const DGPConfig& config, double beta_x);

// Joint alternating solve with constancy diagnostics.
DGPParams solve_dgp(const DGPConfig& config);

// One replicate's dataset from the per-replicate substream.
Dataset gen_dataset(const DGPConfig& config, const DGPParams& params,
                    std::uint64_t replicate);

// Population marginal log odds ratios under the generating law (exposure
// set to x1 vs x0 uniformly; observed-plus-one vs observed).
double true_marginal_log_or(const DGPConfig& config, const DGPParams& params,
                            double x0, double x1);
double true_marginal_log_or_shift(const DGPConfig& config, const DGPParams& params);

enum class SimEstimator {
    StandardIV,
    AdjustedIV,
    LogisticSMM,
    Mlor1Approx,
    Mlor1Exact,
    Mlor2Approx,
    Mlor2Exact,
    GMMMarginal,
};

const char* sim_estimator_name(SimEstimator e);

struct SimCell {
    SimEstimator estimator;
    double truth = 0.0;
    double bias = 0.0;
    double ese = 0.0;       // empirical SD of estimates
    double sse = 0.0;       // mean reported SE
    double coverage = 0.0;  // fraction of CIs covering the truth
    double mc_se_bias = 0.0;
    int n_fail = 0;
    int n_used = 0;
};

struct SimulationReport {
    DGPConfig config;
    DGPParams params;
    int reps = 0;
    std::vector<SimCell> cells;
};

struct RunOptions {
    std::vector<SimEstimator> estimators = {
        SimEstimator::StandardIV, SimEstimator::AdjustedIV,
        SimEstimator::LogisticSMM};
    // CI source for the two-stage estimators: the stacked sandwich, or the
    // second-stage model-based SE (what standard two-stage software
    // reports, and the convention the reference tables reflect).
    IvOptions::CiSe iv_ci = IvOptions::CiSe::Sandwich;
    SmmOptions::CiMethod smm_ci = SmmOptions::CiMethod::Wald;
    // Association model for the structural-mean fits; empty uses the
    // per-experiment default (x-z interaction included for experiment e).
    std::string assoc_formula;
};

std::string default_assoc_formula(Experiment e);

SimulationReport run_experiment(const DGPConfig& config, int reps,
                                const RunOptions& options = {});

}  // namespace ivor
