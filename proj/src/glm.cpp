#include "ivor/glm.hpp"

#include <algorithm>
#include <cmath>

#include "ivor/errors.hpp"
#include "ivor/kernels.hpp"
#include "ivor/special.hpp"

namespace ivor {

double FitResult::coef(const std::string& name) const {
    for (std::size_t j = 0; j < coef_names.size(); ++j)
        if (coef_names[j] == name) return beta[j];
    fail(ErrorCode::MissingColumn, "no coefficient named '" + name + "'");
}

namespace {

bool is_binary(const Vec& v) {
    for (double t : v)
        if (t != 0.0 && t != 1.0) return false;
    return true;
}

Vec add_offset(Vec eta, const std::optional<Vec>& offset) {
    if (offset) {
        for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += (*offset)[i];
    }
    return eta;
}

double neg_loglik(const Vec& eta, const Vec& y, Link link, const Vec& w) {
    double nll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double e = std::clamp(eta[i], -36.0, 36.0);
        double ll;
        if (link == Link::Logit) {
            // y*eta - log(1+exp(eta)), stable softplus
            double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
            ll = y[i] * e - softplus;
        } else {
            double mu = norm_cdf(e);
            ll = y[i] * std::log(mu) + (1.0 - y[i]) * std::log1p(-mu);
        }
        nll -= w[i] * ll;
    }
    return nll;
}

// Working weights and score residuals per subject for one IRLS pass.
void link_terms(Link link, const Vec& eta, const Vec& y, const Vec& w,
                Vec& score_resid, Vec& info_weight) {
    const std::size_t n = eta.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (link == Link::Logit) {
            double mu = expit(eta[i]);
            score_resid[i] = w[i] * (y[i] - mu);
            info_weight[i] = w[i] * mu * (1.0 - mu);
        } else {
            double mu = norm_cdf(eta[i]);
            double den = std::max(mu * (1.0 - mu), 1e-300);
            double phi = norm_pdf(eta[i]);
            score_resid[i] = w[i] * (y[i] - mu) * phi / den;
            info_weight[i] = w[i] * phi * phi / den;  // expected information
        }
    }
}

Matrix xtwx(const Design& design, const Vec& w) {
    const std::size_t p = design.p();
    Matrix m(p, p);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = j; k < p; ++k) {
            double v = kernels::wdot(design.cols[j], design.cols[k], w);
            m(j, k) = v;
            m(k, j) = v;
        }
    return m;
}

FitResult fit_ols(const Design& design, const Vec& y, const GlmOptions& options) {
    const std::size_t n = design.n, p = design.p();
    Vec w = options.weights.value_or(Vec(n, 1.0));
    Vec target = y;
    if (options.offset)
        for (std::size_t i = 0; i < n; ++i) target[i] -= (*options.offset)[i];

    Matrix xtx = xtwx(design, w);
    Vec xty(p);
    for (std::size_t j = 0; j < p; ++j)
        xty[j] = kernels::wdot(design.cols[j], target, w);

    FitResult fit;
    fit.link = Link::Identity;
    fit.beta = solve_spd(xtx, xty);
    fit.iterations = 1;
    fit.converged = true;

    Vec eta = design.linear_predictor(fit.beta);
    double rss = 0.0;
    double score_norm = 0.0;
    Vec resid(n);
    for (std::size_t i = 0; i < n; ++i) {
        resid[i] = target[i] - eta[i];
        rss += w[i] * resid[i] * resid[i];
    }
    for (std::size_t j = 0; j < p; ++j)
        score_norm = std::max(score_norm,
                              std::abs(kernels::wdot(design.cols[j], resid, w)));
    fit.score_norm = score_norm;
    fit.sigma2 = rss / static_cast<double>(n);
    double dof = static_cast<double>(n > p ? n - p : 1);
    Matrix vcov = inverse_spd(xtx);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) vcov(i, j) *= rss / dof;
    fit.vcov_model = vcov;
    fit.coef_names = design.names;
    return fit;
}

}  // namespace

Matrix glm_score_rows(const Design& design, const Vec& response, Link link,
                      std::span<const double> beta,
                      const std::optional<Vec>& weights,
                      const std::optional<Vec>& offset) {
    const std::size_t n = design.n, p = design.p();
    Vec w = weights.value_or(Vec(n, 1.0));
    Vec eta = add_offset(design.linear_predictor(beta), offset);
    Matrix rows(n, p);
    Vec resid(n);
    if (link == Link::Identity) {
        for (std::size_t i = 0; i < n; ++i) resid[i] = w[i] * (response[i] - eta[i]);
    } else {
        Vec iw(n);
        link_terms(link, eta, response, w, resid, iw);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j)
            rows(i, j) = design.cols[j][i] * resid[i];
    return rows;
}

Matrix glm_observed_information(const Design& design, const Vec& response,
                                Link link, std::span<const double> beta,
                                const std::optional<Vec>& weights,
                                const std::optional<Vec>& offset) {
    const std::size_t n = design.n;
    Vec w = weights.value_or(Vec(n, 1.0));
    Vec eta = add_offset(design.linear_predictor(beta), offset);
    Vec iw(n);
    switch (link) {
        case Link::Identity:
            iw = w;
            break;
        case Link::Logit:
            for (std::size_t i = 0; i < n; ++i) {
                double mu = expit(eta[i]);
                iw[i] = w[i] * mu * (1.0 - mu);
            }
            break;
        case Link::Probit:
            for (std::size_t i = 0; i < n; ++i) {
                double mu = norm_cdf(eta[i]);
                double den = std::max(mu * (1.0 - mu), 1e-300);
                double phi = norm_pdf(eta[i]);
                // d/deta of the score residual, with the (y-mu)-carrying
                // curvature term that distinguishes observed from expected
                double g_prime =
                    phi * (-eta[i] * den - phi * (1.0 - 2.0 * mu)) / (den * den);
                double ds = -phi * phi / den + (response[i] - mu) * g_prime;
                iw[i] = -w[i] * ds;
            }
            break;
    }
    return xtwx(design, iw);
}

FitResult fit_glm(const Dataset& data, const ModelSpec& spec,
                  const GlmOptions& options) {
    Design design = build_design(data, spec);
    const Vec& response = data.column(spec.response);
    FitResult fit = fit_glm_design(design, response, spec.link, options);
    fit.design_hash = design_hash(data, spec);
    return fit;
}

FitResult fit_glm_design(const Design& design, const Vec& response, Link link,
                         const GlmOptions& options) {
    const std::size_t n = design.n, p = design.p();
    if (p == 0) fail(ErrorCode::InvalidArgument, "empty model");
    if (p > n) fail(ErrorCode::RankDeficient, "more parameters than observations");

    FitResult fit;
    if (link == Link::Identity) {
        return fit_ols(design, response, options);
    }

    if (!is_binary(response))
        fail(ErrorCode::NonBinaryResponse,
             "binary response required for " + std::string(link_name(link)) +
                 " link");
    Vec w = options.weights.value_or(Vec(n, 1.0));

    // a constant response separates any model with an intercept; the score
    // can cross the tolerance before the coefficient norm gives it away
    {
        double wsum = 0.0, wy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            wsum += w[i];
            wy += w[i] * response[i];
        }
        if (wy == 0.0 || wy == wsum)
            fail(ErrorCode::Separation,
                 "fitted probabilities pinned at 0/1 (constant response)");
    }

    Vec beta(p, 0.0);
    Vec eta = add_offset(design.linear_predictor(beta), options.offset);
    double nll = neg_loglik(eta, response, link, w);
    Vec score_resid(n), info_weight(n);
    double score_norm = 0.0;
    bool converged = false;
    int iter = 0;

    for (; iter < options.max_iterations; ++iter) {
        link_terms(link, eta, response, w, score_resid, info_weight);
        Vec score(p);
        score_norm = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            score[j] = kernels::dot(design.cols[j], score_resid);
            score_norm = std::max(score_norm, std::abs(score[j]));
        }
        if (score_norm < options.score_tol) {
            converged = true;
            break;
        }
        Matrix info = xtwx(design, info_weight);
        Vec step;
        try {
            step = solve_spd(info, score);
        } catch (const Error&) {
            double max_eta = 0.0;
            for (double e : eta) max_eta = std::max(max_eta, std::abs(e));
            if (max_eta > options.separation_eta)
                fail(ErrorCode::Separation,
                     "fitted probabilities pinned at 0/1 (diverging coefficients)");
            throw;
        }

        // step-halving on the objective
        double scale = 1.0;
        Vec cand(p);
        double cand_nll = 0.0;
        Vec cand_eta;
        bool accepted = false;
        for (int half = 0; half < 30; ++half) {
            for (std::size_t j = 0; j < p; ++j) cand[j] = beta[j] + scale * step[j];
            cand_eta = add_offset(design.linear_predictor(cand), options.offset);
            cand_nll = neg_loglik(cand_eta, response, link, w);
            if (cand_nll <= nll + 1e-12 * (1.0 + std::abs(nll))) {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;

        double max_rel_change = 0.0;
        for (std::size_t j = 0; j < p; ++j)
            max_rel_change = std::max(
                max_rel_change, std::abs(cand[j] - beta[j]) / (1.0 + std::abs(cand[j])));
        beta = cand;
        eta = std::move(cand_eta);
        nll = cand_nll;
        if (max_rel_change < options.coef_tol) {
            link_terms(link, eta, response, w, score_resid, info_weight);
            score_norm = 0.0;
            for (std::size_t j = 0; j < p; ++j)
                score_norm = std::max(
                    score_norm, std::abs(kernels::dot(design.cols[j], score_resid)));
            converged = score_norm < options.score_tol;
            break;
        }
    }

    if (!converged) {
        double max_eta = 0.0;
        for (double e : eta) max_eta = std::max(max_eta, std::abs(e));
        if (max_eta > options.separation_eta)
            fail(ErrorCode::Separation,
                 "fitted probabilities pinned at 0/1 (diverging coefficients)");
        fail(ErrorCode::Nonconvergence, "IRLS did not converge");
    }

    // A separated fit can satisfy the score tolerance once expit/Phi
    // saturate; a coefficient worth >separation_eta log-odds per rms unit
    // of its regressor means the MLE ran off to infinity.
    for (std::size_t j = 0; j < p; ++j) {
        double rms = std::sqrt(kernels::sumsq(design.cols[j]) / static_cast<double>(n));
        if (std::abs(beta[j]) * rms > options.separation_eta)
            fail(ErrorCode::Separation,
                 "fitted probabilities pinned at 0/1 (diverging coefficients)");
    }

    fit.beta = beta;
    fit.link = link;
    fit.score_norm = score_norm;
    fit.iterations = iter + 1;
    fit.converged = converged;
    fit.coef_names = design.names;

    Matrix obs_info =
        glm_observed_information(design, response, link, beta, w, options.offset);
    try {
        fit.vcov_model = inverse_spd(obs_info);
    } catch (const Error&) {
        // observed information can lose definiteness in extreme probit
        // fits; expected information is the fallback
        link_terms(link, eta, response, w, score_resid, info_weight);
        fit.vcov_model = inverse_spd(xtwx(design, info_weight));
    }
    return fit;
}

Vec predict_mean(const FitResult& fit, const Dataset& data, const ModelSpec& spec) {
    if (fit.design_hash != design_hash(data, spec))
        fail(ErrorCode::SpecMismatch,
             "fit was produced from a different dataset/model spec");
    Design design = build_design(data, spec);
    Vec eta = design.linear_predictor(fit.beta);
    switch (fit.link) {
        case Link::Identity:
            return eta;
        case Link::Logit:
            for (double& e : eta) e = expit(e);
            return eta;
        case Link::Probit:
            for (double& e : eta) e = norm_cdf(e);
            return eta;
    }
    fail(ErrorCode::InvalidArgument, "unknown link");
}

}  // namespace ivor
