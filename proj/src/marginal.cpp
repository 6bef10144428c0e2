#include "ivor/marginal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ivor/brent.hpp"
#include "ivor/kernels.hpp"
#include "ivor/special.hpp"

namespace ivor {

namespace {

using detail::SmmEngine;

// Solved level backing a target level: exactly psi_0 in Approximate mode,
// the nearest solved bin representative otherwise. Fixed-level targets
// must hit a solved level exactly.
double solved_level_near(const ExtendedSMMFit& fit, double level,
                         bool allow_nearest) {
    if (fit.psi_by_x.empty()) fail(ErrorCode::MissingLevel, "fit has no levels");
    if (fit.mode == MarginalMode::Approximate) return 0.0;
    auto it = fit.psi_by_x.lower_bound(level);
    double nearest;
    if (it == fit.psi_by_x.end())
        nearest = std::prev(it)->first;
    else if (it == fit.psi_by_x.begin())
        nearest = it->first;
    else {
        auto prev = std::prev(it);
        nearest = (level - prev->first <= it->first - level) ? prev->first : it->first;
    }
    if (!allow_nearest && std::abs(nearest - level) > 1e-9)
        fail(ErrorCode::MissingLevel,
             "fit does not cover exposure level " + std::to_string(level));
    return nearest;
}

double psi_at_level(const ExtendedSMMFit& fit, double level, bool allow_nearest) {
    return fit.psi_by_x.at(solved_level_near(fit, level, allow_nearest));
}

// Per-subject exposure target level under a mean target.
Vec target_levels(const Dataset& data, const MeanTarget& target) {
    Vec levels(data.n);
    switch (target.kind) {
        case MeanTarget::Kind::FixedLevel:
            std::fill(levels.begin(), levels.end(), target.level);
            break;
        case MeanTarget::Kind::ObservedPlusOne:
            for (std::size_t i = 0; i < data.n; ++i) levels[i] = data.x[i] + 1.0;
            break;
        case MeanTarget::Kind::ObservedTimes:
            for (std::size_t i = 0; i < data.n; ++i)
                levels[i] = data.x[i] * target.factor;
            break;
        case MeanTarget::Kind::Observed:
            levels = data.x;
            break;
    }
    return levels;
}

}  // namespace

std::vector<double> contrast_levels(const Dataset& data, const Contrast& contrast,
                                    int bins) {
    std::vector<double> raw;
    switch (contrast.kind) {
        case Contrast::Kind::FixedLevels:
            return {contrast.x0, contrast.x1};
        case Contrast::Kind::AdditiveShift:
            raw = data.x;
            for (double& v : raw) v += 1.0;
            break;
        case Contrast::Kind::MultiplicativeShift:
            raw = data.x;
            for (double& v : raw) v *= contrast.factor;
            break;
    }
    std::sort(raw.begin(), raw.end());
    raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
    if (static_cast<int>(raw.size()) <= bins) return raw;
    // quantile-bin representatives
    std::vector<double> out;
    out.reserve(bins);
    const double m = static_cast<double>(raw.size() - 1);
    for (int b = 0; b < bins; ++b) {
        double q = (b + 0.5) / bins;
        out.push_back(raw[static_cast<std::size_t>(q * m + 0.5)]);
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

ExtendedSMMFit extended_smm(const Dataset& data, const ModelSpec& assoc_spec,
                            const ModelSpec& m_spec, std::vector<double> x_levels,
                            MarginalMode mode, const ExtendedOptions& options) {
    auto engine = SmmEngine::prepare(data, assoc_spec, m_spec,
                                     options.smm.congeniality_override);
    if (engine.m_design.p() != 1)
        fail(ErrorCode::InvalidArgument,
             "extended fits cover scalar m(C;psi) only");

    ExtendedSMMFit fit;
    fit.mode = mode;
    fit.assoc_fit = engine.assoc_fit;
    fit.assoc_spec = assoc_spec;
    fit.m_spec = m_spec;

    std::vector<double> levels;
    if (mode == MarginalMode::Approximate) {
        levels = {0.0};
        fit.x_levels = std::move(x_levels);  // recorded, all mapped to psi_0
    } else {
        levels = x_levels;
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        fit.x_levels = levels;
    }

    for (double x : levels) {
        RootDiagnostics diag;
        std::vector<double> roots;
        try {
            roots = engine.solve_roots(x, options.smm, diag);
            fit.psi_by_x[x] = engine.select_root(roots, x, options.smm, diag);
        } catch (const NoRootError& e) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%g", x);
            throw NoRootError(ErrorCode::NoRoot,
                              std::string("no root at exposure level x=") + buf,
                              e.diagnostics);
        }
    }
    return fit;
}

double counterfactual_mean(const ExtendedSMMFit& fit, const Dataset& data,
                           const MeanTarget& target) {
    if (target.kind == MeanTarget::Kind::Observed)
        return kernels::sum(data.y) / static_cast<double>(data.n);

    auto engine = SmmEngine::from_fit(data, fit.assoc_spec, fit.m_spec, fit.assoc_fit);
    Vec levels = target_levels(data, target);
    bool nearest_ok = target.kind != MeanTarget::Kind::FixedLevel;
    double total = 0.0;
    for (std::size_t i = 0; i < data.n; ++i) {
        double psi = psi_at_level(fit, levels[i], nearest_ok);
        total += expit(engine.assoc_eta[i] - psi * (data.x[i] - levels[i]));
    }
    return total / static_cast<double>(data.n);
}

namespace {

// One arm's counterfactual mean and per-subject influence, with nuisance
// (beta, psi-per-level) propagation.
struct ArmInfluence {
    double mu = 0.0;
    Vec influence;
};

ArmInfluence arm_influence(const SmmEngine& engine, const ExtendedSMMFit& fit,
                           const Dataset& data, const MeanTarget& target) {
    const std::size_t n = data.n;
    ArmInfluence arm;
    arm.influence.assign(n, 0.0);

    if (target.kind == MeanTarget::Kind::Observed) {
        arm.mu = kernels::sum(data.y) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            arm.influence[i] = data.y[i] - arm.mu;
        return arm;
    }

    const std::size_t p = engine.assoc_design.p();
    Vec levels = target_levels(data, target);
    bool nearest_ok = target.kind != MeanTarget::Kind::FixedLevel;

    // H per subject and grouping by solved level
    Vec h(n);
    std::map<double, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        double psi = psi_at_level(fit, levels[i], nearest_ok);
        h[i] = expit(engine.assoc_eta[i] - psi * (data.x[i] - levels[i]));
        groups[solved_level_near(fit, levels[i], nearest_ok)].push_back(i);
    }
    arm.mu = kernels::sum(h) / static_cast<double>(n);

    // first-piece and beta-propagation
    Vec j_beta(p, 0.0);
    Vec hw(n);
    for (std::size_t i = 0; i < n; ++i) {
        arm.influence[i] = h[i] - arm.mu;
        double dclamp =
            (std::abs(engine.assoc_eta[i]) < kLinearPredictorClamp) ? 1.0 : 0.0;
        hw[i] = h[i] * (1.0 - h[i]) * dclamp;
    }
    for (std::size_t j = 0; j < p; ++j)
        j_beta[j] = kernels::dot(hw, engine.assoc_design.cols[j]) /
                    static_cast<double>(n);
    // influence of beta-hat applied to j_beta: info^-1 * score rows
    Vec corr = solve_spd(engine.info_assoc, j_beta);
    for (std::size_t i = 0; i < n; ++i) {
        double resid = data.y[i] - engine.mu_assoc[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < p; ++j)
            acc += corr[j] * engine.assoc_design.cols[j][i] * resid;
        arm.influence[i] += acc;
    }

    // psi-propagation per solved level
    for (const auto& [sx, members] : groups) {
        double psi = fit.psi_by_x.at(sx);

        // J_psi for this arm: mean over all subjects of dH/dpsi, nonzero
        // only for members (the others do not use this level's psi)
        double j_psi = 0.0;
        for (std::size_t i : members)
            j_psi += -h[i] * (1.0 - h[i]) * (data.x[i] - levels[i]);
        j_psi /= static_cast<double>(n);
        if (j_psi == 0.0) continue;

        // influence of psi-hat solved at level sx:
        //   -(u_i + dU/dbeta . IF_beta_i) / (dU/dpsi)
        Vec hs = engine.counterfactual({&psi, 1}, sx);
        Vec us = engine.estimating_rows({&psi, 1}, sx);
        double du = engine.estimating_derivative(psi, sx) / static_cast<double>(n);
        Vec dudb(p, 0.0);
        Vec dsw(n);
        for (std::size_t i = 0; i < n; ++i) {
            double dclamp =
                (std::abs(engine.assoc_eta[i]) < kLinearPredictorClamp) ? 1.0 : 0.0;
            dsw[i] = engine.d_centered[i] * hs[i] * (1.0 - hs[i]) * dclamp;
        }
        for (std::size_t j = 0; j < p; ++j)
            dudb[j] = kernels::dot(dsw, engine.assoc_design.cols[j]) /
                      static_cast<double>(n);
        Vec corr_b = solve_spd(engine.info_assoc, dudb);
        for (std::size_t i = 0; i < n; ++i) {
            double resid = data.y[i] - engine.mu_assoc[i];
            double prop = 0.0;
            for (std::size_t j = 0; j < p; ++j)
                prop += corr_b[j] * engine.assoc_design.cols[j][i] * resid;
            double if_psi = -(us[i] + prop) / du;
            arm.influence[i] += j_psi * if_psi;
        }
    }
    return arm;
}

}  // namespace

MarginalEffect marginal_contrast(const ExtendedSMMFit& fit, const Dataset& data,
                                 const Contrast& contrast) {
    auto engine = SmmEngine::from_fit(data, fit.assoc_spec, fit.m_spec, fit.assoc_fit);

    MeanTarget low_target, high_target;
    switch (contrast.kind) {
        case Contrast::Kind::FixedLevels:
            low_target = MeanTarget::fixed(contrast.x0);
            high_target = MeanTarget::fixed(contrast.x1);
            break;
        case Contrast::Kind::AdditiveShift:
            low_target = MeanTarget::observed();
            high_target = MeanTarget::plus_one();
            break;
        case Contrast::Kind::MultiplicativeShift:
            low_target = MeanTarget::observed();
            high_target = MeanTarget::times(contrast.factor);
            break;
    }

    ArmInfluence low = arm_influence(engine, fit, data, low_target);
    ArmInfluence high = arm_influence(engine, fit, data, high_target);

    MarginalEffect eff;
    eff.contrast = contrast;
    eff.mu_low = low.mu;
    eff.mu_high = high.mu;
    eff.log_or = logit(high.mu) - logit(low.mu);
    eff.risk_diff = high.mu - low.mu;
    eff.rel_risk = high.mu / low.mu;

    const std::size_t n = data.n;
    Vec if_eta(n), if_rd(n), if_logrr(n);
    double dl = low.mu * (1.0 - low.mu);
    double dh = high.mu * (1.0 - high.mu);
    for (std::size_t i = 0; i < n; ++i) {
        if_eta[i] = high.influence[i] / dh - low.influence[i] / dl;
        if_rd[i] = high.influence[i] - low.influence[i];
        if_logrr[i] = high.influence[i] / high.mu - low.influence[i] / low.mu;
    }
    eff.se_log_or = influence_se(if_eta);
    eff.se_risk_diff = influence_se(if_rd);
    eff.se_rel_risk = eff.rel_risk * influence_se(if_logrr);
    eff.ci_low = eff.log_or - kZ95 * eff.se_log_or;
    eff.ci_high = eff.log_or + kZ95 * eff.se_log_or;

    // inversion interval mapped through the marginal transformation
    if (contrast.kind == Contrast::Kind::FixedLevels &&
        fit.mode == MarginalMode::Approximate) {
        double psi0 = fit.psi_by_x.at(0.0);
        SmmOptions opts;
        auto excess = [&](double p) {
            return std::abs(engine.score_stat(p, 0.0)) - kZ95;
        };
        auto eta_of = [&](double p) {
            Vec h0 = engine.counterfactual({&p, 1}, contrast.x0);
            Vec h1 = engine.counterfactual({&p, 1}, contrast.x1);
            double m0 = kernels::sum(h0) / static_cast<double>(n);
            double m1 = kernels::sum(h1) / static_cast<double>(n);
            return logit(m1) - logit(m0);
        };
        const double step = 0.1;
        double prev = psi0, prev_f = excess(psi0);
        for (double p = psi0 + step; p <= opts.bracket_hi + 4.0; p += step) {
            double f = excess(p);
            if (prev_f < 0.0 && f >= 0.0) {
                double bound = brent_root(excess, prev, p, 1e-10);
                eff.inv_ci_high = eta_of(bound);
                eff.has_inversion_ci = true;
                break;
            }
            prev = p;
            prev_f = f;
        }
        bool got_low = false;
        prev = psi0;
        prev_f = excess(psi0);
        for (double p = psi0 - step; p >= opts.bracket_lo - 4.0; p -= step) {
            double f = excess(p);
            if (prev_f < 0.0 && f >= 0.0) {
                double bound = brent_root(excess, p, prev, 1e-10);
                eff.inv_ci_low = eta_of(bound);
                got_low = true;
                break;
            }
            prev = p;
            prev_f = f;
        }
        eff.has_inversion_ci = eff.has_inversion_ci && got_low;
        if (eff.has_inversion_ci && eff.inv_ci_low > eff.inv_ci_high)
            std::swap(eff.inv_ci_low, eff.inv_ci_high);
    }
    return eff;
}

CausalFit gmm_marginal(const Dataset& data, const ModelSpec& spec,
                       const GmmOptions& options) {
    if (spec.link != Link::Logit)
        fail(ErrorCode::InvalidArgument, "marginal model must use the logit link");
    if (!spec.has_intercept() || !spec.has_main_effect("x"))
        fail(ErrorCode::InvalidArgument,
             "marginal model needs an intercept and an exposure main effect");

    // parameter design (1, x, C); moment design swaps x for z
    Design pd = build_design(data, spec);
    ModelSpec moment_spec = spec;
    for (Term& t : moment_spec.terms) {
        if (t.kind == Term::Kind::Main && t.a == "x") t.a = "z";
        if (t.kind == Term::Kind::Interaction) {
            if (t.a == "x") t.a = "z";
            if (t.b == "x") t.b = "z";
        }
    }
    Design md = build_design(data, moment_spec);
    if (md.p() != pd.p())
        fail(ErrorCode::InvalidArgument, "moment conditions must be just-identified");

    const std::size_t n = data.n, p = pd.p();
    const double n_d = static_cast<double>(n);

    FitResult start = fit_glm(data, spec);
    Vec beta = start.beta;

    auto moments = [&](const Vec& b) {
        Vec eta = pd.linear_predictor(b);
        Vec g(p, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double resid = data.y[i] - expit(eta[i]);
            for (std::size_t j = 0; j < p; ++j) g[j] += md.cols[j][i] * resid;
        }
        return g;
    };
    auto sup = [](const Vec& v) {
        double s = 0.0;
        for (double t : v) s = std::max(s, std::abs(t));
        return s;
    };

    Vec g = moments(beta);
    double gn = sup(g);
    int iter = 0;
    std::string trace;
    bool converged = gn < options.tol * n_d;
    for (; iter < options.max_iterations && !converged; ++iter) {
        // Jacobian: -sum md_i w_i pd_i^T
        Vec eta = pd.linear_predictor(beta);
        Matrix jac(p, p);
        for (std::size_t i = 0; i < n; ++i) {
            double mu = expit(eta[i]);
            double w = mu * (1.0 - mu);
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b)
                    jac(a, b) -= md.cols[a][i] * w * pd.cols[b][i];
        }
        Matrix jinv;
        try {
            jinv = inverse_lu(jac);
        } catch (const Error&) {
            fail(ErrorCode::Nonconvergence,
                 "singular moment Jacobian at iteration " + std::to_string(iter));
        }
        Vec step = matvec(jinv, g);
        double scale = 1.0;
        bool improved = false;
        for (int half = 0; half <= options.max_halvings; ++half) {
            Vec cand(p);
            for (std::size_t j = 0; j < p; ++j) cand[j] = beta[j] - scale * step[j];
            Vec gc = moments(cand);
            double gcn = sup(gc);
            if (gcn < gn) {
                beta = std::move(cand);
                g = std::move(gc);
                gn = gcn;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        trace += (trace.empty() ? "" : ",") + std::to_string(gn / n_d);
        if (!improved) break;
        converged = gn < options.tol * n_d;
    }
    if (!converged)
        fail(ErrorCode::Nonconvergence,
             "moment solver stalled after " + std::to_string(iter) +
                 " iterations (|g|/n trace: " + trace + ")");

    // an irreconcilable moment system can still zero out numerically once
    // expit saturates; treat runaway coefficients as nonconvergence
    for (std::size_t j = 0; j < p; ++j) {
        double rms = std::sqrt(kernels::sumsq(pd.cols[j]) / n_d);
        if (std::abs(beta[j]) * rms > 30.0)
            fail(ErrorCode::Nonconvergence,
                 "moment solution diverged (saturated coefficients)");
    }

    // sandwich
    ScoreStack stack;
    stack.n = n;
    stack.theta = beta;
    stack.blocks = {{"moments", p,
                     [&](std::span<const double> th, Matrix& out, std::size_t c0) {
                         Vec eta = pd.linear_predictor(th.subspan(0, p));
                         for (std::size_t i = 0; i < n; ++i) {
                             double resid = data.y[i] - expit(eta[i]);
                             for (std::size_t j = 0; j < p; ++j)
                                 out(i, c0 + j) = md.cols[j][i] * resid;
                         }
                     }}};
    stack.mean_jacobian = [&](std::span<const double> th) {
        Vec eta = pd.linear_predictor(th.subspan(0, p));
        Matrix jac(p, p);
        for (std::size_t i = 0; i < n; ++i) {
            double mu = expit(eta[i]);
            double w = mu * (1.0 - mu);
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b)
                    jac(a, b) -= md.cols[a][i] * w * pd.cols[b][i] / n_d;
        }
        return jac;
    };
    SandwichResult sand = sandwich_cov(stack);

    std::size_t ix = 0;
    for (std::size_t j = 0; j < pd.names.size(); ++j)
        if (pd.names[j] == "x") ix = j;

    CausalFit fit;
    fit.estimator = EstimatorKind::GMMMarginal;
    fit.psi = beta[ix];
    fit.psi_vec = beta;
    fit.se = std::sqrt(sand.vcov(ix, ix));
    fit.ci_low = fit.psi - kZ95 * fit.se;
    fit.ci_high = fit.psi + kZ95 * fit.se;
    fit.p_value = fit.se > 0 ? normal_p_value(fit.psi / fit.se) : 1.0;
    fit.ci_method = "wald";
    fit.nuisance = {start};
    return fit;
}

}  // namespace ivor
