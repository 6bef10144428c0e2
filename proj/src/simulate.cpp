#include "ivor/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "ivor/brent.hpp"
#include "ivor/kernels.hpp"
#include "ivor/marginal.hpp"
#include "ivor/special.hpp"

namespace ivor {

const char* experiment_name(Experiment e) {
    switch (e) {
        case Experiment::A: return "a";
        case Experiment::B: return "b";
        case Experiment::C: return "c";
        case Experiment::D: return "d";
        case Experiment::E: return "e";
    }
    return "?";
}

Experiment experiment_from_name(const std::string& name) {
    if (name == "a") return Experiment::A;
    if (name == "b") return Experiment::B;
    if (name == "c") return Experiment::C;
    if (name == "d") return Experiment::D;
    if (name == "e") return Experiment::E;
    fail(ErrorCode::InvalidArgument, "unknown experiment '" + name + "'");
}

const char* sim_estimator_name(SimEstimator e) {
    switch (e) {
        case SimEstimator::StandardIV: return "standard-iv";
        case SimEstimator::AdjustedIV: return "adjusted-iv";
        case SimEstimator::LogisticSMM: return "logistic-smm";
        case SimEstimator::Mlor1Approx: return "mlor1-approx";
        case SimEstimator::Mlor1Exact: return "mlor1";
        case SimEstimator::Mlor2Approx: return "mlor2-approx";
        case SimEstimator::Mlor2Exact: return "mlor2";
        case SimEstimator::GMMMarginal: return "gmm-marginal";
    }
    return "?";
}

DGPConfig DGPConfig::for_experiment(Experiment e, double target_ey, double psi_true,
                                    std::size_t n, std::uint64_t seed) {
    DGPConfig c;
    c.experiment = e;
    c.target_ey = target_ey;
    c.psi_true = psi_true;
    c.n = n;
    c.seed = seed;
    switch (e) {
        case Experiment::A:
        case Experiment::E: c.beta_z = 1.0; break;
        case Experiment::B:
        case Experiment::C: c.beta_z = 2.0; break;
        case Experiment::D: c.beta_z = -2.0; break;
    }
    return c;
}

std::string default_assoc_formula(Experiment e) {
    // The structural-mean association model matches the generator's term
    // structure; only experiment e has the exposure-instrument interaction.
    return e == Experiment::E ? "y ~ x + z + x:z" : "y ~ x + z";
}

Vec gen_instrument(std::size_t n, double allele_freq, Philox& rng) {
    if (!(allele_freq > 0.0 && allele_freq < 1.0))
        fail(ErrorCode::InvalidArgument, "allele frequency must lie in (0,1)");
    // cell probabilities (p^2, 2p(1-p), (1-p)^2): z counts copies of the
    // major allele, matching the reference design's (0.09, 0.42, 0.49)
    double p0 = allele_freq * allele_freq;
    double p1 = 2.0 * allele_freq * (1.0 - allele_freq);
    Vec z(n);
    for (std::size_t i = 0; i < n; ++i)
        z[i] = static_cast<double>(rng.multinomial3(p0, p1));
    return z;
}

Vec gen_exposure(const Vec& z, const DGPConfig& config, Philox& rng) {
    Vec x(z.size());
    switch (config.experiment) {
        case Experiment::A:
        case Experiment::B:
        case Experiment::E: {
            double s = config.sigma();
            for (std::size_t i = 0; i < z.size(); ++i)
                x[i] = z[i] + s * rng.normal();
            break;
        }
        case Experiment::C:
            for (std::size_t i = 0; i < z.size(); ++i)
                x[i] = z[i] + rng.student_t2();
            break;
        case Experiment::D:
            for (std::size_t i = 0; i < z.size(); ++i) {
                int shape = static_cast<int>(z[i]) + config.gamma_shape_offset;
                x[i] = rng.gamma_int_shape(shape);
            }
            break;
    }
    return x;
}

namespace {

struct ZLaw {
    double prob[3];
    double zbar;
};

ZLaw z_law(double allele_freq) {
    ZLaw law;
    law.prob[0] = allele_freq * allele_freq;
    law.prob[1] = 2.0 * allele_freq * (1.0 - allele_freq);
    law.prob[2] = (1.0 - allele_freq) * (1.0 - allele_freq);
    law.zbar = law.prob[1] + 2.0 * law.prob[2];
    return law;
}

// E[ g(X) | Z = z ] under the experiment's exposure law.
double exposure_expectation(const DGPConfig& config, int z,
                            const std::function<double(double)>& g) {
    switch (config.experiment) {
        case Experiment::A:
        case Experiment::B:
        case Experiment::E:
            return expect_exposure(ExposureLaw::NormalLocation, z, config.sigma(), 0,
                                   g);
        case Experiment::C:
            return expect_exposure(ExposureLaw::StudentT2, z, 0.0, 0, g);
        case Experiment::D:
            return expect_exposure(ExposureLaw::GammaShape, 0.0, 0.0,
                                   z + config.gamma_shape_offset, g);
    }
    fail(ErrorCode::InvalidArgument, "unknown experiment");
}

double outcome_lin(const DGPConfig& config, double beta0, double beta_x, double x,
                   int z) {
    double lin = beta0 + beta_x * x + config.beta_z * z;
    if (config.experiment == Experiment::E)
        lin += config.interaction_coeff * x * z;
    return lin;
}

// E{Y(0) | Z = z} under the structural model at the design psi.
double counterfactual_mean_z(const DGPConfig& config, double beta0, double beta_x,
                             int z) {
    return exposure_expectation(config, z, [&](double x) {
        return expit(outcome_lin(config, beta0, beta_x, x, z) -
                     config.psi_true * x);
    });
}

bool location_family_exact(const DGPConfig& config) {
    switch (config.experiment) {
        case Experiment::A:
        case Experiment::B:
        case Experiment::C: return true;
        case Experiment::E: return config.interaction_coeff == 0.0;
        case Experiment::D: return false;
    }
    return false;
}

}  // namespace

double solve_beta_x(const DGPConfig& config, double beta0) {
    if (location_family_exact(config)) return config.psi_true - config.beta_z;

    ZLaw law = z_law(config.allele_freq);
    auto contrast = [&](double bx) {
        double c = 0.0;
        for (int z = 0; z < 3; ++z)
            c += law.prob[z] * (z - law.zbar) *
                 counterfactual_mean_z(config, beta0, bx, z);
        return c;
    };
    double center = config.psi_true - config.beta_z;
    auto brackets = scan_brackets(contrast, center - 15.0, center + 15.0, 0.5);
    if (brackets.empty())
        fail(ErrorCode::NoExactSolution,
             "no beta_x equates the weighted counterfactual means");
    const auto& b = brackets.front();
    return (b.lo == b.hi) ? b.lo : brent_root(contrast, b.lo, b.hi, 1e-13);
}

double solve_beta_0(const DGPConfig& config, double beta_x) {
    if (!(config.target_ey > 0.0 && config.target_ey < 1.0))
        fail(ErrorCode::BracketFailure, "target outcome mean must lie in (0,1)");
    ZLaw law = z_law(config.allele_freq);
    auto ey = [&](double b0) {
        double m = 0.0;
        for (int z = 0; z < 3; ++z)
            m += law.prob[z] * exposure_expectation(config, z, [&](double x) {
                     return expit(outcome_lin(config, b0, beta_x, x, z));
                 });
        return m - config.target_ey;
    };
    if (ey(-45.0) > 0.0 || ey(45.0) < 0.0)
        fail(ErrorCode::BracketFailure, "outcome mean target unattainable");
    return brent_root(ey, -45.0, 45.0, 1e-12);
}

DGPParams solve_dgp(const DGPConfig& config) {
    DGPParams params;
    params.beta_x = config.psi_true - config.beta_z;
    params.beta0 = logit(config.target_ey);
    const int rounds = location_family_exact(config) ? 1 : 10;
    for (int it = 0; it < rounds; ++it) {
        params.beta_x = solve_beta_x(config, params.beta0);
        params.beta0 = solve_beta_0(config, params.beta_x);
    }
    double g0 = counterfactual_mean_z(config, params.beta0, params.beta_x, 0);
    params.max_discrepancy = 0.0;
    for (int z = 1; z < 3; ++z)
        params.max_discrepancy = std::max(
            params.max_discrepancy,
            std::abs(counterfactual_mean_z(config, params.beta0, params.beta_x, z) -
                     g0));
    params.no_exact_solution = params.max_discrepancy > 1e-3;
    ZLaw law = z_law(config.allele_freq);
    params.achieved_ey = 0.0;
    for (int z = 0; z < 3; ++z)
        params.achieved_ey +=
            law.prob[z] * exposure_expectation(config, z, [&](double x) {
                return expit(outcome_lin(config, params.beta0, params.beta_x, x, z));
            });
    return params;
}

Dataset gen_dataset(const DGPConfig& config, const DGPParams& params,
                    std::uint64_t replicate) {
    Philox rng(config.seed, replicate + 1);
    Vec z = gen_instrument(config.n, config.allele_freq, rng);
    Vec x = gen_exposure(z, config, rng);
    Vec y(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        double p = expit(outcome_lin(config, params.beta0, params.beta_x, x[i],
                                     static_cast<int>(z[i])));
        y[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    }
    return Dataset::make(std::move(y), std::move(x), std::move(z));
}

double true_marginal_log_or(const DGPConfig& config, const DGPParams& params,
                            double x0, double x1) {
    ZLaw law = z_law(config.allele_freq);
    auto mu_at = [&](double xref) {
        double m = 0.0;
        for (int z = 0; z < 3; ++z)
            m += law.prob[z] * exposure_expectation(config, z, [&](double x) {
                     return expit(outcome_lin(config, params.beta0, params.beta_x, x,
                                              z) +
                                  config.psi_true * (xref - x));
                 });
        return m;
    };
    return logit(mu_at(x1)) - logit(mu_at(x0));
}

double true_marginal_log_or_shift(const DGPConfig& config, const DGPParams& params) {
    ZLaw law = z_law(config.allele_freq);
    double mu1 = 0.0;
    for (int z = 0; z < 3; ++z)
        mu1 += law.prob[z] * exposure_expectation(config, z, [&](double x) {
                   return expit(
                       outcome_lin(config, params.beta0, params.beta_x, x, z) +
                       config.psi_true);
               });
    return logit(mu1) - logit(params.achieved_ey);
}

namespace {

struct CellAccumulator {
    std::vector<double> estimates;
    std::vector<double> ses;
    int covered = 0;
    int n_fail = 0;
};

void finish_cell(SimCell& cell, const CellAccumulator& acc) {
    const int n_used = static_cast<int>(acc.estimates.size());
    cell.n_used = n_used;
    cell.n_fail = acc.n_fail;
    if (n_used == 0) return;
    double mean = kernels::sum(acc.estimates) / n_used;
    double ss = 0.0;
    for (double e : acc.estimates) ss += (e - mean) * (e - mean);
    cell.bias = mean - cell.truth;
    cell.ese = n_used > 1 ? std::sqrt(ss / (n_used - 1)) : 0.0;
    cell.sse = kernels::sum(acc.ses) / n_used;
    cell.coverage = static_cast<double>(acc.covered) / n_used;
    cell.mc_se_bias = n_used > 1 ? cell.ese / std::sqrt(n_used) : 0.0;
}

}  // namespace

SimulationReport run_experiment(const DGPConfig& config, int reps,
                                const RunOptions& options) {
    if (reps < 1) fail(ErrorCode::InvalidArgument, "reps must be >= 1");
    SimulationReport report;
    report.config = config;
    report.reps = reps;
    report.params = solve_dgp(config);

    std::string assoc = options.assoc_formula.empty()
                            ? default_assoc_formula(config.experiment)
                            : options.assoc_formula;
    ModelSpec assoc_spec = parse_formula(assoc, Link::Logit);
    ModelSpec first_stage = parse_formula("x ~ z", Link::Identity);
    ModelSpec resid_terms = parse_formula("~ r", Link::Identity);
    ModelSpec m_scalar = m_spec_scalar();
    ModelSpec gmm_spec = parse_formula("y ~ x", Link::Logit);

    IvOptions iv_opts;
    iv_opts.ci_se = options.iv_ci;
    SmmOptions smm_opts;
    smm_opts.ci_method = options.smm_ci;

    const double truth_cond = config.psi_true;
    const double truth_mlor1 =
        true_marginal_log_or(config, report.params, 0.0, 1.0);
    const double truth_mlor2 =
        true_marginal_log_or_shift(config, report.params);

    std::vector<CellAccumulator> acc(options.estimators.size());

    for (int r = 0; r < reps; ++r) {
        Dataset data = gen_dataset(config, report.params, r);
        for (std::size_t e = 0; e < options.estimators.size(); ++e) {
            SimEstimator which = options.estimators[e];
            try {
                double est = 0, se = 0, lo = 0, hi = 0, truth = truth_cond;
                switch (which) {
                    case SimEstimator::StandardIV: {
                        CausalFit f = standard_iv(data, first_stage, m_scalar, iv_opts);
                        est = f.psi; se = f.se; lo = f.ci_low; hi = f.ci_high;
                        break;
                    }
                    case SimEstimator::AdjustedIV: {
                        CausalFit f =
                            adjusted_iv(data, first_stage, m_scalar, resid_terms, iv_opts);
                        est = f.psi; se = f.se; lo = f.ci_low; hi = f.ci_high;
                        break;
                    }
                    case SimEstimator::LogisticSMM: {
                        CausalFit f = logistic_smm(data, assoc_spec, m_scalar, smm_opts);
                        est = f.psi; se = f.se; lo = f.ci_low; hi = f.ci_high;
                        break;
                    }
                    case SimEstimator::GMMMarginal: {
                        CausalFit f = gmm_marginal(data, gmm_spec);
                        est = f.psi; se = f.se; lo = f.ci_low; hi = f.ci_high;
                        truth = truth_mlor1;
                        break;
                    }
                    case SimEstimator::Mlor1Approx:
                    case SimEstimator::Mlor1Exact: {
                        MarginalMode mode = which == SimEstimator::Mlor1Approx
                                                ? MarginalMode::Approximate
                                                : MarginalMode::Exact;
                        ExtendedOptions ext;
                        ext.smm = smm_opts;
                        ExtendedSMMFit f = extended_smm(data, assoc_spec, m_scalar,
                                                        {0.0, 1.0}, mode, ext);
                        MarginalEffect m =
                            marginal_contrast(f, data, Contrast::fixed_levels(0, 1));
                        est = m.log_or; se = m.se_log_or; lo = m.ci_low; hi = m.ci_high;
                        truth = truth_mlor1;
                        break;
                    }
                    case SimEstimator::Mlor2Approx:
                    case SimEstimator::Mlor2Exact: {
                        MarginalMode mode = which == SimEstimator::Mlor2Approx
                                                ? MarginalMode::Approximate
                                                : MarginalMode::Exact;
                        ExtendedOptions ext;
                        ext.smm = smm_opts;
                        Contrast contrast = Contrast::plus_one();
                        std::vector<double> levels =
                            mode == MarginalMode::Approximate
                                ? std::vector<double>{0.0}
                                : contrast_levels(data, contrast, ext.shift_bins);
                        ExtendedSMMFit f = extended_smm(data, assoc_spec, m_scalar,
                                                        levels, mode, ext);
                        MarginalEffect m = marginal_contrast(f, data, contrast);
                        est = m.log_or; se = m.se_log_or; lo = m.ci_low; hi = m.ci_high;
                        truth = truth_mlor2;
                        break;
                    }
                }
                if (!std::isfinite(est) || !std::isfinite(se))
                    fail(ErrorCode::Nonconvergence, "non-finite estimate");
                acc[e].estimates.push_back(est);
                acc[e].ses.push_back(se);
                if (lo <= truth && truth <= hi) ++acc[e].covered;
            } catch (const Error&) {
                ++acc[e].n_fail;
            }
        }
    }

    for (std::size_t e = 0; e < options.estimators.size(); ++e) {
        SimCell cell;
        cell.estimator = options.estimators[e];
        switch (cell.estimator) {
            case SimEstimator::Mlor1Approx:
            case SimEstimator::Mlor1Exact:
            case SimEstimator::GMMMarginal: cell.truth = truth_mlor1; break;
            case SimEstimator::Mlor2Approx:
            case SimEstimator::Mlor2Exact: cell.truth = truth_mlor2; break;
            default: cell.truth = truth_cond; break;
        }
        finish_cell(cell, acc[e]);
        report.cells.push_back(cell);
    }
    return report;
}

}  // namespace ivor
