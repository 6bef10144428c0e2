#include "ivor/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ivor/brent.hpp"
#include "ivor/kernels.hpp"
#include "ivor/special.hpp"

namespace ivor {

const char* estimator_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::StandardIV: return "standard-iv";
        case EstimatorKind::AdjustedIV: return "adjusted-iv";
        case EstimatorKind::LogisticSMM: return "logistic-smm";
        case EstimatorKind::ClosedFormBinary: return "closed-form";
        case EstimatorKind::ProbitNormalSMM: return "probit-normal-smm";
        case EstimatorKind::GMMMarginal: return "gmm-marginal";
    }
    return "?";
}

double wald_ratio(double or_yz, double delta_xz, double tol) {
    if (!(or_yz > 0.0))
        fail(ErrorCode::InvalidArgument, "odds ratio must be positive");
    if (std::abs(delta_xz) < tol)
        fail(ErrorCode::WeakInstrument,
             "exposure shift between instrument levels is zero to tolerance");
    return std::log(or_yz) / delta_xz;
}

Vec counterfactual_predict(std::span<const double> psi, const FitResult& assoc_fit,
                           const ModelSpec& assoc_spec, const ModelSpec& m_spec,
                           const Dataset& data) {
    if (!assoc_fit.converged)
        fail(ErrorCode::Nonconvergence, "association fit did not converge");
    if (assoc_fit.design_hash != design_hash(data, assoc_spec))
        fail(ErrorCode::SpecMismatch,
             "association fit does not belong to this dataset/spec");
    Design assoc = build_design(data, assoc_spec);
    Design m = build_design(data, m_spec);
    if (psi.size() != m.p())
        fail(ErrorCode::InvalidArgument, "psi length does not match m(C;psi) terms");
    Vec eta = assoc.linear_predictor(assoc_fit.beta);
    Vec h(data.n);
    for (std::size_t i = 0; i < data.n; ++i) {
        double mpsi = 0.0;
        for (std::size_t k = 0; k < m.p(); ++k) mpsi += psi[k] * m.cols[k][i];
        h[i] = expit(clamp_eta(eta[i]) - mpsi * data.x[i]);
    }
    return h;
}

namespace detail {

namespace {

// Centering design for d(Z,C) and for E(H|C): intercept plus covariate
// main effects.
Design centering_design(const Dataset& data) {
    Design d;
    d.n = data.n;
    d.cols.emplace_back(data.n, 1.0);
    d.names.emplace_back("(intercept)");
    for (std::size_t k = 0; k < data.covariates.size(); ++k) {
        d.cols.push_back(data.covariates[k]);
        d.names.push_back(data.covariate_names[k]);
    }
    return d;
}

Vec project_residual(const Design& cd, const Vec& v) {
    const std::size_t p = cd.p();
    Matrix xtx(p, p);
    Vec xty(p);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t k = j; k < p; ++k) {
            double s = kernels::dot(cd.cols[j], cd.cols[k]);
            xtx(j, k) = s;
            xtx(k, j) = s;
        }
        xty[j] = kernels::dot(cd.cols[j], v);
    }
    Vec coef = solve_spd(xtx, xty);
    Vec out = v;
    for (std::size_t j = 0; j < p; ++j) kernels::axpy(-coef[j], cd.cols[j], out);
    return out;
}

}  // namespace

SmmEngine SmmEngine::prepare(const Dataset& data, const ModelSpec& assoc_spec,
                             const ModelSpec& m_spec, bool congeniality_override) {
    if (assoc_spec.link != Link::Logit)
        fail(ErrorCode::InvalidArgument, "association model must use the logit link");
    if (!congeniality_override) {
        if (!assoc_spec.has_intercept())
            fail(ErrorCode::InvalidArgument,
                 "association model must contain an intercept (override to force)");
        if (!assoc_spec.has_main_effect("z"))
            fail(ErrorCode::InvalidArgument,
                 "association model must contain a main effect of the instrument "
                 "(override to force)");
    }

    return from_fit(data, assoc_spec, m_spec, fit_glm(data, assoc_spec));
}

SmmEngine SmmEngine::from_fit(const Dataset& data, const ModelSpec& assoc_spec,
                              const ModelSpec& m_spec, FitResult assoc_fit) {
    if (assoc_fit.design_hash != design_hash(data, assoc_spec))
        fail(ErrorCode::SpecMismatch,
             "association fit does not belong to this dataset/spec");
    SmmEngine e;
    e.data = &data;
    e.assoc_spec = assoc_spec;
    e.m_spec = m_spec;
    e.assoc_fit = std::move(assoc_fit);
    e.assoc_design = build_design(data, assoc_spec);
    e.m_design = build_design(data, m_spec);

    e.assoc_eta = e.assoc_design.linear_predictor(e.assoc_fit.beta);
    e.mu_assoc.resize(data.n);
    for (std::size_t i = 0; i < data.n; ++i) {
        e.mu_assoc[i] = expit(e.assoc_eta[i]);
        e.assoc_eta[i] = clamp_eta(e.assoc_eta[i]);
    }

    Design cd = centering_design(data);
    e.d_centered = project_residual(cd, data.z);

    const std::size_t p = e.assoc_design.p();
    Vec w(data.n);
    for (std::size_t i = 0; i < data.n; ++i)
        w[i] = e.mu_assoc[i] * (1.0 - e.mu_assoc[i]);
    e.info_assoc = Matrix(p, p);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = j; k < p; ++k) {
            double s = kernels::wdot(e.assoc_design.cols[j], e.assoc_design.cols[k], w) /
                       static_cast<double>(data.n);
            e.info_assoc(j, k) = s;
            e.info_assoc(k, j) = s;
        }
    return e;
}

Vec SmmEngine::counterfactual(std::span<const double> psi, double x0) const {
    const std::size_t n = data->n;
    Vec h(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mpsi = 0.0;
        for (std::size_t k = 0; k < m_design.p(); ++k)
            mpsi += psi[k] * m_design.cols[k][i];
        h[i] = expit(assoc_eta[i] - mpsi * (data->x[i] - x0));
    }
    return h;
}

double SmmEngine::estimating_sum(double psi, double x0) const {
    Vec h = counterfactual({&psi, 1}, x0);
    return kernels::dot(d_centered, h);
}

double SmmEngine::estimating_derivative(double psi, double x0) const {
    Vec h = counterfactual({&psi, 1}, x0);
    double s = 0.0;
    for (std::size_t i = 0; i < data->n; ++i)
        s -= d_centered[i] * h[i] * (1.0 - h[i]) * (data->x[i] - x0);
    return s;
}

Vec SmmEngine::estimating_rows(std::span<const double> psi, double x0) const {
    Vec h = counterfactual(psi, x0);
    Design cd = centering_design(*data);
    Vec hc = project_residual(cd, h);
    Vec rows(data->n);
    for (std::size_t i = 0; i < data->n; ++i) rows[i] = d_centered[i] * hc[i];
    return rows;
}

double SmmEngine::score_stat(double psi, double x0) const {
    const std::size_t n = data->n, p = assoc_design.p();
    Vec h = counterfactual({&psi, 1}, x0);
    Design cd = centering_design(*data);
    Vec hc = project_residual(cd, h);

    // J_b = mean_i d_i * dH_i/dbeta  (clamped etas have zero derivative)
    Vec jb(p, 0.0);
    Vec dw(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deriv = (std::abs(assoc_eta[i]) < kLinearPredictorClamp) ? 1.0 : 0.0;
        dw[i] = d_centered[i] * h[i] * (1.0 - h[i]) * deriv;
    }
    for (std::size_t j = 0; j < p; ++j)
        jb[j] = kernels::dot(dw, assoc_design.cols[j]) / static_cast<double>(n);

    Vec correction = solve_spd(info_assoc, jb);

    double total = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double u = d_centered[i] * hc[i];
        double prop = 0.0;
        double resid = data->y[i] - mu_assoc[i];
        for (std::size_t j = 0; j < p; ++j)
            prop += correction[j] * assoc_design.cols[j][i] * resid;
        double full = u + prop;
        total += full;
        ss += full * full;
    }
    if (ss <= 0.0) return 0.0;
    return total / std::sqrt(ss);
}

std::vector<double> SmmEngine::solve_roots(double x0, const SmmOptions& options,
                                           RootDiagnostics& diag) const {
    auto f = [&](double psi) { return estimating_sum(psi, x0); };
    auto fprime = [&](double psi) { return estimating_derivative(psi, x0); };
    diag.bracket_lo = options.bracket_lo;
    diag.bracket_hi = options.bracket_hi;

    auto brackets = scan_brackets(f, options.bracket_lo, options.bracket_hi,
                                  options.grid_step);

    // A pair of roots can sit between adjacent grid nodes with equal signs;
    // where the derivative changes sign, check the enclosed extremum.
    for (double lo = options.bracket_lo; lo < options.bracket_hi - 0.5 * options.grid_step;
         lo += options.grid_step) {
        double hi = lo + options.grid_step;
        double flo = f(lo), fhi = f(hi);
        if (flo == 0.0 || fhi == 0.0 || (flo > 0.0) != (fhi > 0.0)) continue;
        double dlo = fprime(lo), dhi = fprime(hi);
        if (dlo == 0.0 || dhi == 0.0 || (dlo > 0.0) == (dhi > 0.0)) continue;
        double xm = brent_root(fprime, lo, hi, 1e-12);
        double fm = f(xm);
        if (fm == 0.0) {
            brackets.push_back({xm, xm});
        } else if ((fm > 0.0) != (flo > 0.0)) {
            brackets.push_back({lo, xm});
            brackets.push_back({xm, hi});
        }
    }

    std::vector<double> roots;
    for (const auto& b : brackets) {
        double root = (b.lo == b.hi) ? b.lo : brent_root(f, b.lo, b.hi, options.root_tol);
        // derivative polish, keeping only steps that shrink the residual
        for (int it = 0; it < 2; ++it) {
            double fr = f(root);
            double d = estimating_derivative(root, x0);
            if (std::abs(d) < 1e-300) break;
            double step = fr / d;
            if (!std::isfinite(step) || std::abs(step) > options.grid_step) break;
            double cand = root - step;
            if (std::abs(f(cand)) > std::abs(fr)) break;
            root = cand;
        }
        bool dup = false;
        for (double r : roots)
            if (std::abs(r - root) < 1e-7) dup = true;
        if (!dup) roots.push_back(root);
    }
    std::sort(roots.begin(), roots.end());
    diag.roots = roots;
    diag.implied_ey0.clear();
    for (double r : roots) {
        Vec h = counterfactual({&r, 1}, x0);
        diag.implied_ey0.push_back(kernels::sum(h) / static_cast<double>(data->n));
    }
    if (roots.empty())
        diag.multiplicity = RootDiagnostics::Multiplicity::None;
    else if (roots.size() == 1)
        diag.multiplicity = RootDiagnostics::Multiplicity::Unique;
    else
        diag.multiplicity = RootDiagnostics::Multiplicity::Two;
    return roots;
}

double SmmEngine::select_root(const std::vector<double>& roots, double x0,
                              const SmmOptions& options,
                              RootDiagnostics& diag) const {
    if (roots.empty()) {
        // attach the evaluated curve so no-root cases can be inspected
        Vec grid;
        for (double p = options.bracket_lo; p <= options.bracket_hi + 1e-9;
             p += options.grid_step)
            grid.push_back(p);
        diag.curve.clear();
        for (double p : grid) {
            double u = estimating_sum(p, x0) / static_cast<double>(data->n);
            diag.curve.push_back({p, u, 0.0});
        }
        throw NoRootError(ErrorCode::NoRoot,
                          "estimating function has constant sign over the bracket",
                          diag);
    }
    if (roots.size() == 1) return roots[0];
    switch (options.selection) {
        case SmmOptions::RootSelection::Smallest:
            return roots.front();
        case SmmOptions::RootSelection::Largest:
            return roots.back();
        case SmmOptions::RootSelection::SmallerAbs: {
            double best = roots[0];
            for (double r : roots)
                if (std::abs(r) < std::abs(best)) best = r;
            for (double r : roots)
                if (r != best && std::abs(std::abs(r) - std::abs(best)) < 1e-9)
                    throw NoRootError(
                        ErrorCode::MultipleRootsAmbiguous,
                        "two roots tie under the smaller-|psi| selection rule", diag);
            return best;
        }
    }
    return roots[0];
}

ScoreStack SmmEngine::build_stack(double psi, double x0) const {
    const std::size_t n = data->n, p = assoc_design.p();
    ScoreStack stack;
    stack.n = n;
    stack.theta = assoc_fit.beta;
    stack.theta.push_back(psi);

    const Dataset& d = *data;
    const Design& ad = assoc_design;
    const Design& md = m_design;

    ScoreBlock assoc_block;
    assoc_block.name = "association";
    assoc_block.dim = p;
    assoc_block.eval = [&d, &ad, p](std::span<const double> theta, Matrix& out,
                                    std::size_t col0) {
        Vec eta = ad.linear_predictor(theta.subspan(0, p));
        for (std::size_t i = 0; i < d.n; ++i) {
            double resid = d.y[i] - expit(eta[i]);
            for (std::size_t j = 0; j < p; ++j)
                out(i, col0 + j) = ad.cols[j][i] * resid;
        }
    };

    ScoreBlock psi_block;
    psi_block.name = "psi";
    psi_block.dim = 1;
    const SmmEngine* self = this;
    psi_block.eval = [self, &d, &ad, &md, p, x0](std::span<const double> theta,
                                                 Matrix& out, std::size_t col0) {
        Vec eta = ad.linear_predictor(theta.subspan(0, p));
        Vec h(d.n);
        for (std::size_t i = 0; i < d.n; ++i) {
            double mpsi = 0.0;
            for (std::size_t k = 0; k < md.p(); ++k)
                mpsi += theta[p + k] * md.cols[k][i];
            h[i] = expit(clamp_eta(eta[i]) - mpsi * (d.x[i] - x0));
        }
        Design cd = centering_design(d);
        Vec hc = project_residual(cd, h);
        for (std::size_t i = 0; i < d.n; ++i)
            out(i, col0) = self->d_centered[i] * hc[i];
    };

    stack.blocks = {assoc_block, psi_block};

    if (md.p() == 1) {
        stack.mean_jacobian = [self, &d, &ad, p, x0](std::span<const double> theta) {
            const double n_d = static_cast<double>(d.n);
            Matrix jac(p + 1, p + 1);
            Vec eta = ad.linear_predictor(theta.subspan(0, p));
            double psi_at = theta[p];
            for (std::size_t i = 0; i < d.n; ++i) {
                double mu = expit(eta[i]);
                double w = mu * (1.0 - mu);
                double eta_cl = clamp_eta(eta[i]);
                double h = expit(eta_cl - psi_at * (d.x[i] - x0));
                double hw = h * (1.0 - h);
                double dclamp = (std::abs(eta[i]) < kLinearPredictorClamp) ? 1.0 : 0.0;
                for (std::size_t j = 0; j < p; ++j) {
                    for (std::size_t k = j; k < p; ++k)
                        jac(j, k) -= ad.cols[j][i] * ad.cols[k][i] * w / n_d;
                    jac(p, j) +=
                        self->d_centered[i] * hw * dclamp * ad.cols[j][i] / n_d;
                }
                jac(p, p) -= self->d_centered[i] * hw * (d.x[i] - x0) / n_d;
            }
            for (std::size_t j = 0; j < p; ++j)
                for (std::size_t k = 0; k < j; ++k) jac(j, k) = jac(k, j);
            return jac;
        };
    }
    return stack;
}

}  // namespace detail

namespace {

// Nearest crossing of |z(psi)| = z95 on each side of the solution; open
// intervals surface as +-infinity.
std::pair<double, double> score_inversion_ci(const detail::SmmEngine& engine,
                                             double psi_hat, double x0,
                                             const SmmOptions& options) {
    auto excess = [&](double p) { return std::abs(engine.score_stat(p, x0)) - kZ95; };
    const double step = 0.1;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();

    double prev = psi_hat, prev_f = excess(psi_hat);
    for (double p = psi_hat + step; p <= options.bracket_hi + 4.0; p += step) {
        double f = excess(p);
        if (prev_f < 0.0 && f >= 0.0) {
            hi = brent_root([&](double q) { return excess(q); }, prev, p, 1e-10);
            break;
        }
        prev = p;
        prev_f = f;
    }
    prev = psi_hat;
    prev_f = excess(psi_hat);
    for (double p = psi_hat - step; p >= options.bracket_lo - 4.0; p -= step) {
        double f = excess(p);
        if (prev_f < 0.0 && f >= 0.0) {
            lo = brent_root([&](double q) { return excess(q); }, p, prev, 1e-10);
            break;
        }
        prev = p;
        prev_f = f;
    }
    return {lo, hi};
}

CausalFit finalize_smm(const detail::SmmEngine& engine, EstimatorKind kind,
                       const std::vector<double>& roots, RootDiagnostics diag,
                       const SmmOptions& options) {
    CausalFit fit;
    fit.estimator = kind;
    fit.diagnostics = std::move(diag);
    double psi = engine.select_root(roots, 0.0, options, fit.diagnostics);
    fit.psi = psi;
    fit.psi_vec = {psi};

    ScoreStack stack = engine.build_stack(psi, 0.0);
    SandwichResult sand = sandwich_cov(stack);
    std::size_t pi = stack.dim() - 1;
    fit.se = std::sqrt(sand.vcov(pi, pi));

    if (options.ci_method == SmmOptions::CiMethod::Wald) {
        fit.ci_method = "wald";
        fit.ci_low = psi - kZ95 * fit.se;
        fit.ci_high = psi + kZ95 * fit.se;
        fit.p_value = fit.se > 0 ? normal_p_value(psi / fit.se) : 1.0;
    } else {
        fit.ci_method = "score";
        auto [lo, hi] = score_inversion_ci(engine, psi, 0.0, options);
        fit.ci_low = lo;
        fit.ci_high = hi;
        fit.p_value = normal_p_value(engine.score_stat(0.0, 0.0));
    }
    fit.nuisance.push_back(engine.assoc_fit);

    if (options.capture_curve && fit.diagnostics.curve.empty()) {
        Vec grid;
        for (double p = options.bracket_lo; p <= options.bracket_hi + 1e-9;
             p += options.grid_step)
            grid.push_back(p);
        fit.diagnostics.curve = estimating_curve(*engine.data, engine.assoc_fit,
                                                 engine.assoc_spec, engine.m_spec, grid);
    }
    return fit;
}

}  // namespace

CausalFit logistic_smm(const Dataset& data, const ModelSpec& assoc_spec,
                       const ModelSpec& m_spec, const SmmOptions& options) {
    auto engine = detail::SmmEngine::prepare(data, assoc_spec, m_spec,
                                             options.congeniality_override);
    if (engine.m_design.p() != 1)
        fail(ErrorCode::InvalidArgument,
             "bracketed root search covers scalar m(C;psi) only");
    RootDiagnostics diag;
    auto roots = engine.solve_roots(0.0, options, diag);
    return finalize_smm(engine, EstimatorKind::LogisticSMM, roots, std::move(diag),
                        options);
}

CausalFit closed_form_binary(const CountTable2x2x2& table,
                             const ModelSpec& assoc_spec, const SmmOptions& options) {
    if (!table.estimable())
        fail(ErrorCode::DegenerateTable,
             "every exposure-by-instrument margin must be positive");
    Dataset data = expand_table(table);
    auto engine = detail::SmmEngine::prepare(data, assoc_spec, m_spec_scalar(),
                                             options.congeniality_override);

    // model-implied cell probabilities
    double p_cell[2][2];
    {
        Dataset cells = Dataset::make({0, 0, 0, 0}, {0, 1, 0, 1}, {0, 0, 1, 1});
        Design cd = build_design(cells, assoc_spec);
        Vec eta = cd.linear_predictor(engine.assoc_fit.beta);
        p_cell[0][0] = expit(eta[0]);
        p_cell[1][0] = expit(eta[1]);
        p_cell[0][1] = expit(eta[2]);
        p_cell[1][1] = expit(eta[3]);
    }

    double x10 = static_cast<double>(table.margin_xz(1, 0)) / table.margin_z(0);
    double x11 = static_cast<double>(table.margin_xz(1, 1)) / table.margin_z(1);
    double x00 = 1.0 - x10;
    double x01 = 1.0 - x11;

    double r0 = p_cell[1][0] / (1.0 - p_cell[1][0]);
    double r1 = p_cell[1][1] / (1.0 - p_cell[1][1]);
    double q2 = p_cell[0][0] * x00 - p_cell[0][1] * x01;
    double q1 = (q2 + x10) * r0 + (q2 - x11) * r1;
    double q3 = r0 * r1;

    // quadratic in v = exp(psi): q2 v^2 + q1 v + q3 (q2 - x11 + x10) = 0
    double c0 = q3 * (q2 - x11 + x10);
    std::vector<double> roots;
    double scale = std::max({std::abs(q1), std::abs(q2), std::abs(c0)});
    if (std::abs(q2) < 1e-14 * scale) {
        if (std::abs(q1) < 1e-14 * scale)
            fail(ErrorCode::DegenerateTable, "estimating equation degenerates");
        double v = -c0 / q1;
        if (v > 0.0) roots.push_back(std::log(v));
    } else {
        double disc = q1 * q1 - 4.0 * q2 * c0;
        if (disc < 0.0) {
            RootDiagnostics nd;
            nd.multiplicity = RootDiagnostics::Multiplicity::None;
            throw NoRootError(ErrorCode::NegativeDiscriminant,
                              "closed-form discriminant negative (no real root)", nd);
        }
        double sq = std::sqrt(disc);
        // numerically stable pair: q/a and c/q
        double q = -0.5 * (q1 + (q1 >= 0.0 ? sq : -sq));
        double v1 = q / q2;
        double v2 = (q != 0.0) ? c0 / q : std::numeric_limits<double>::quiet_NaN();
        for (double v : {v1, v2})
            if (std::isfinite(v) && v > 0.0) roots.push_back(std::log(v));
    }
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                roots.end());

    RootDiagnostics diag;
    diag.bracket_lo = options.bracket_lo;
    diag.bracket_hi = options.bracket_hi;
    diag.roots = roots;
    for (double r : roots) {
        Vec h = engine.counterfactual({&r, 1}, 0.0);
        diag.implied_ey0.push_back(kernels::sum(h) / static_cast<double>(data.n));
    }
    diag.multiplicity = roots.empty() ? RootDiagnostics::Multiplicity::None
                        : roots.size() == 1 ? RootDiagnostics::Multiplicity::Unique
                                            : RootDiagnostics::Multiplicity::Two;
    return finalize_smm(engine, EstimatorKind::ClosedFormBinary, roots,
                        std::move(diag), options);
}

namespace {

// Shared two-stage machinery. The second-stage design is
//   [intercept, covariate mains, residual-basis * R, m-basis * Xhat]
// where R and Xhat are rebuilt from the first-stage parameters inside the
// stacked score, so their sampling uncertainty propagates into the bread.
struct TwoStage {
    const Dataset* data;
    Design first_design;       // E(X|Z,C) regressors, all rows
    Vec first_mask;            // 1 for rows entering the first stage
    Vec theta;                 // first-stage coefficients
    std::vector<Vec> fixed_cols;       // intercept + covariate mains
    std::vector<Vec> resid_basis;      // multiplies R = X - g
    std::vector<Vec> m_basis;          // multiplies g
    std::vector<std::string> names2;
    Vec omega_psi;             // second-stage coefficients
    std::size_t q = 0;         // number of psi columns

    std::size_t p1() const { return first_design.p(); }
    std::size_t p2() const {
        return fixed_cols.size() + resid_basis.size() + m_basis.size();
    }

    std::vector<Vec> stage2_cols(std::span<const double> th) const {
        const std::size_t n = data->n;
        Vec g(n, 0.0);
        for (std::size_t j = 0; j < first_design.p(); ++j)
            kernels::axpy(th[j], first_design.cols[j], g);
        std::vector<Vec> cols = fixed_cols;
        for (const Vec& basis : resid_basis) {
            Vec col(n);
            for (std::size_t i = 0; i < n; ++i)
                col[i] = basis[i] * (data->x[i] - g[i]);
            cols.push_back(std::move(col));
        }
        for (const Vec& basis : m_basis) {
            Vec col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = basis[i] * g[i];
            cols.push_back(std::move(col));
        }
        return cols;
    }

    ScoreStack build_stack() const {
        ScoreStack stack;
        stack.n = data->n;
        stack.theta = theta;
        stack.theta.insert(stack.theta.end(), omega_psi.begin(), omega_psi.end());

        const TwoStage* self = this;
        ScoreBlock first_block;
        first_block.name = "first-stage";
        first_block.dim = p1();
        first_block.eval = [self](std::span<const double> th, Matrix& out,
                                  std::size_t col0) {
            const Dataset& d = *self->data;
            const Design& fd = self->first_design;
            Vec g(d.n, 0.0);
            for (std::size_t j = 0; j < fd.p(); ++j)
                kernels::axpy(th[j], fd.cols[j], g);
            for (std::size_t i = 0; i < d.n; ++i) {
                double r = self->first_mask[i] * (d.x[i] - g[i]);
                for (std::size_t j = 0; j < fd.p(); ++j)
                    out(i, col0 + j) = fd.cols[j][i] * r;
            }
        };

        ScoreBlock second_block;
        second_block.name = "second-stage";
        second_block.dim = p2();
        second_block.eval = [self](std::span<const double> th, Matrix& out,
                                   std::size_t col0) {
            const Dataset& d = *self->data;
            auto cols = self->stage2_cols(th.subspan(0, self->p1()));
            auto coef = th.subspan(self->p1(), self->p2());
            Vec eta(d.n, 0.0);
            for (std::size_t j = 0; j < cols.size(); ++j)
                kernels::axpy(coef[j], cols[j], eta);
            for (std::size_t i = 0; i < d.n; ++i) {
                double resid = d.y[i] - expit(eta[i]);
                for (std::size_t j = 0; j < cols.size(); ++j)
                    out(i, col0 + j) = cols[j][i] * resid;
            }
        };
        stack.blocks = {first_block, second_block};

        stack.mean_jacobian = [self](std::span<const double> th) {
            return self->analytic_jacobian(th);
        };
        return stack;
    }

    Matrix analytic_jacobian(std::span<const double> th) const {
        const Dataset& d = *data;
        const std::size_t n = d.n, pf = p1(), ps = p2(), dim = pf + ps;
        const double n_d = static_cast<double>(n);
        Matrix jac(dim, dim);

        auto cols = stage2_cols(th.subspan(0, pf));
        auto coef = th.subspan(pf, ps);
        Vec eta(n, 0.0);
        for (std::size_t j = 0; j < cols.size(); ++j)
            kernels::axpy(coef[j], cols[j], eta);

        // d(eta2)/dg and d(col)/dg per row
        const std::size_t nfix = fixed_cols.size(), nres = resid_basis.size();
        Vec deta_dg(n, 0.0);
        for (std::size_t r = 0; r < nres; ++r)
            for (std::size_t i = 0; i < n; ++i)
                deta_dg[i] -= coef[nfix + r] * resid_basis[r][i];
        for (std::size_t k = 0; k < m_basis.size(); ++k)
            for (std::size_t i = 0; i < n; ++i)
                deta_dg[i] += coef[nfix + nres + k] * m_basis[k][i];

        for (std::size_t i = 0; i < n; ++i) {
            double mu = expit(eta[i]);
            double w = mu * (1.0 - mu);
            double resid = d.y[i] - mu;
            // first-stage block
            for (std::size_t j = 0; j < pf; ++j) {
                double fj = first_design.cols[j][i];
                for (std::size_t k = j; k < pf; ++k)
                    jac(j, k) -= first_mask[i] * fj * first_design.cols[k][i] / n_d;
            }
            // second-stage wrt second-stage coefficients
            for (std::size_t a = 0; a < ps; ++a) {
                double ca = cols[a][i];
                if (ca == 0.0) continue;
                for (std::size_t b = a; b < ps; ++b)
                    jac(pf + a, pf + b) -= ca * cols[b][i] * w / n_d;
            }
            // second-stage wrt theta: dcol/dg * resid - col * w * deta/dg,
            // chained through dg/dtheta_j = first_design[j]
            for (std::size_t j = 0; j < pf; ++j) {
                double fj = first_design.cols[j][i];
                if (fj == 0.0) continue;
                for (std::size_t a = 0; a < ps; ++a) {
                    double dcol_dg = 0.0;
                    if (a >= nfix && a < nfix + nres)
                        dcol_dg = -resid_basis[a - nfix][i];
                    else if (a >= nfix + nres)
                        dcol_dg = m_basis[a - nfix - nres][i];
                    double v = dcol_dg * resid - cols[a][i] * w * deta_dg[i];
                    jac(pf + a, j) += v * fj / n_d;
                }
            }
        }
        // mirror the symmetric sub-blocks
        for (std::size_t j = 0; j < pf; ++j)
            for (std::size_t k = 0; k < j; ++k) jac(j, k) = jac(k, j);
        for (std::size_t a = 0; a < ps; ++a)
            for (std::size_t b = 0; b < a; ++b) jac(pf + a, pf + b) = jac(pf + b, pf + a);
        return jac;
    }
};

void check_instrument_strength(const Dataset& data, const FitResult& first_fit,
                               const Vec& mask, const IvOptions& options) {
    auto levels = data.z_levels();
    if (levels.size() < 2)
        fail(ErrorCode::RankDeficient, "instrument is constant");
    if (levels.size() == 2) {
        double s1 = 0, n1 = 0, s0 = 0, n0 = 0;
        for (std::size_t i = 0; i < data.n; ++i) {
            if (mask[i] == 0.0) continue;
            if (data.z[i] == levels[1]) {
                s1 += data.x[i];
                n1 += 1.0;
            } else {
                s0 += data.x[i];
                n0 += 1.0;
            }
        }
        if (n1 > 0 && n0 > 0 &&
            std::abs(s1 / n1 - s0 / n0) < options.weak_delta_tol)
            fail(ErrorCode::WeakInstrument,
                 "exposure means identical across instrument levels");
    }
    double max_t = 0.0;
    bool any_z = false;
    for (std::size_t j = 0; j < first_fit.coef_names.size(); ++j) {
        if (first_fit.coef_names[j].rfind("z", 0) != 0) continue;
        any_z = true;
        double se = first_fit.se_model(j);
        if (se > 0) max_t = std::max(max_t, std::abs(first_fit.beta[j] / se));
    }
    if (any_z && max_t < options.weak_t_tol)
        fail(ErrorCode::WeakInstrument, "first-stage instrument t-statistic is zero");
}

CausalFit two_stage_iv(const Dataset& data, const ModelSpec& first_stage,
                       const ModelSpec& m_spec,
                       const ModelSpec* residual_terms, const IvOptions& options,
                       EstimatorKind kind) {
    if (first_stage.link != Link::Identity)
        fail(ErrorCode::InvalidArgument, "first stage must use the identity link");
    if (first_stage.response != "x")
        fail(ErrorCode::InvalidArgument, "first stage must regress the exposure");

    TwoStage ts;
    ts.data = &data;
    ts.first_design = build_design(data, first_stage);

    ts.first_mask.assign(data.n, 1.0);
    FitResult first_fit;
    if (options.first_stage_population == IvOptions::FirstStagePopulation::ControlsOnly) {
        for (std::size_t i = 0; i < data.n; ++i)
            ts.first_mask[i] = (data.y[i] == 0.0) ? 1.0 : 0.0;
        GlmOptions glm_opts;
        glm_opts.weights = ts.first_mask;
        first_fit = fit_glm(data, first_stage, glm_opts);
    } else {
        first_fit = fit_glm(data, first_stage);
    }
    check_instrument_strength(data, first_fit, ts.first_mask, options);
    ts.theta = first_fit.beta;

    // second-stage fixed columns: intercept plus covariate main effects
    // named in the first stage or the m-descriptor
    ts.fixed_cols.emplace_back(data.n, 1.0);
    ts.names2.emplace_back("(intercept)");
    std::vector<std::string> covs;
    auto collect = [&](const ModelSpec& spec) {
        for (const Term& t : spec.terms) {
            for (const std::string& nm : {t.a, t.b}) {
                if (nm.empty() || nm == "x" || nm == "z") continue;
                if (std::find(covs.begin(), covs.end(), nm) == covs.end())
                    covs.push_back(nm);
            }
        }
    };
    collect(first_stage);
    collect(m_spec);
    for (const std::string& nm : covs) {
        ts.fixed_cols.push_back(data.column(nm));
        ts.names2.push_back(nm);
    }

    if (residual_terms) {
        for (const Term& t : residual_terms->terms) {
            if (t.kind == Term::Kind::Intercept) continue;
            if (t.kind == Term::Kind::Main && t.a == "r") {
                ts.resid_basis.emplace_back(data.n, 1.0);
                ts.names2.emplace_back("resid");
            } else if (t.kind == Term::Kind::Interaction && (t.a == "r" || t.b == "r")) {
                const std::string& other = (t.a == "r") ? t.b : t.a;
                ts.resid_basis.push_back(data.column(other));
                ts.names2.push_back("resid:" + other);
            } else {
                fail(ErrorCode::InvalidArgument,
                     "residual terms must involve r (the first-stage residual)");
            }
        }
        if (ts.resid_basis.empty())
            fail(ErrorCode::InvalidArgument,
                 "adjusted IV requires at least one residual term");
    }

    Design m_design = build_design(data, m_spec);
    for (std::size_t k = 0; k < m_design.p(); ++k) {
        ts.m_basis.push_back(m_design.cols[k]);
        ts.names2.push_back("xhat*" + m_design.names[k]);
    }
    ts.q = ts.m_basis.size();

    Design stage2;
    stage2.n = data.n;
    stage2.cols = ts.stage2_cols(ts.theta);
    stage2.names = ts.names2;
    FitResult second_fit = fit_glm_design(stage2, data.y, Link::Logit);
    ts.omega_psi = second_fit.beta;

    CausalFit fit;
    fit.estimator = kind;
    std::size_t psi0 = ts.p2() - ts.q;
    fit.psi = second_fit.beta[psi0];
    fit.psi_vec.assign(second_fit.beta.begin() + psi0, second_fit.beta.end());

    ScoreStack stack = ts.build_stack();
    SandwichResult sand = sandwich_cov(stack);
    std::size_t full = ts.p1() + psi0;
    fit.se = std::sqrt(sand.vcov(full, full));
    fit.se_model = second_fit.se_model(psi0);

    double se_ci = (options.ci_se == IvOptions::CiSe::ModelBased) ? fit.se_model : fit.se;
    fit.ci_low = fit.psi - kZ95 * se_ci;
    fit.ci_high = fit.psi + kZ95 * se_ci;
    fit.p_value = se_ci > 0 ? normal_p_value(fit.psi / se_ci) : 1.0;
    fit.ci_method = "wald";
    fit.nuisance = {first_fit, second_fit};
    return fit;
}

}  // namespace

CausalFit standard_iv(const Dataset& data, const ModelSpec& first_stage,
                      const ModelSpec& m_spec, const IvOptions& options) {
    return two_stage_iv(data, first_stage, m_spec, nullptr, options,
                        EstimatorKind::StandardIV);
}

CausalFit adjusted_iv(const Dataset& data, const ModelSpec& first_stage,
                      const ModelSpec& m_spec, const ModelSpec& residual_terms,
                      const IvOptions& options) {
    return two_stage_iv(data, first_stage, m_spec, &residual_terms, options,
                        EstimatorKind::AdjustedIV);
}

CausalFit probit_normal_smm(const Dataset& data, const ModelSpec& first_stage,
                            const ModelSpec& assoc_spec,
                            const ModelSpec& reduced_spec,
                            const ProbitOptions& options) {
    if (first_stage.link != Link::Identity || first_stage.response != "x")
        fail(ErrorCode::InvalidArgument,
             "first stage must be a linear model for the exposure");
    if (assoc_spec.link != Link::Probit || reduced_spec.link != Link::Probit)
        fail(ErrorCode::InvalidArgument,
             "association and reduced models must use the probit link");
    if (!assoc_spec.has_main_effect("x"))
        fail(ErrorCode::InvalidArgument,
             "association model must contain a main effect of the exposure");
    if (!assoc_spec.has_main_effect("z") || !reduced_spec.has_main_effect("z"))
        fail(ErrorCode::InvalidArgument,
             "association and reduced models must contain the instrument");

    FitResult first_fit = fit_glm(data, first_stage);
    FitResult assoc_fit = fit_glm(data, assoc_spec);
    FitResult reduced_fit = fit_glm(data, reduced_spec);

    Design fd = build_design(data, first_stage);
    Design ad = build_design(data, assoc_spec);
    Design rd = build_design(data, reduced_spec);

    auto index_of = [](const Design& d, const std::string& nm) {
        for (std::size_t j = 0; j < d.names.size(); ++j)
            if (d.names[j] == nm) return j;
        fail(ErrorCode::MissingColumn, "design lacks column " + nm);
    };
    std::size_t ia = index_of(fd, "z");    // alpha_1
    std::size_t it = index_of(ad, "x");    // theta_1
    std::size_t il = index_of(rd, "z");    // lambda_1

    double alpha1 = first_fit.beta[ia];
    double theta1 = assoc_fit.beta[it];
    double lambda1 = reduced_fit.beta[il];
    double sigma2 = first_fit.sigma2;

    double t_alpha = first_fit.se_model(ia) > 0
                         ? std::abs(alpha1) / first_fit.se_model(ia)
                         : 0.0;
    if (std::abs(alpha1) < options.weak_alpha_tol || t_alpha < options.weak_t_tol)
        fail(ErrorCode::WeakInstrument,
             "instrument does not shift the exposure (alpha_1 ~ 0)");

    double phi = lambda1 * std::sqrt(1.0 + theta1 * theta1 * sigma2) / alpha1;

    // Stacked sandwich over (alpha, sigma2, theta, lambda, phi); the last
    // block is the delta-method defining equation.
    const std::size_t pf = fd.p(), pa = ad.p(), pr = rd.p();
    ScoreStack stack;
    stack.n = data.n;
    stack.theta = first_fit.beta;
    stack.theta.push_back(sigma2);
    stack.theta.insert(stack.theta.end(), assoc_fit.beta.begin(), assoc_fit.beta.end());
    stack.theta.insert(stack.theta.end(), reduced_fit.beta.begin(),
                       reduced_fit.beta.end());
    stack.theta.push_back(phi);

    ScoreBlock alpha_block{"first-stage", pf,
                           [&data, &fd](std::span<const double> th, Matrix& out,
                                        std::size_t c0) {
                               Vec g(data.n, 0.0);
                               for (std::size_t j = 0; j < fd.p(); ++j)
                                   kernels::axpy(th[j], fd.cols[j], g);
                               for (std::size_t i = 0; i < data.n; ++i) {
                                   double r = data.x[i] - g[i];
                                   for (std::size_t j = 0; j < fd.p(); ++j)
                                       out(i, c0 + j) = fd.cols[j][i] * r;
                               }
                           }};
    ScoreBlock sigma_block{"residual-variance", 1,
                           [&data, &fd, pf](std::span<const double> th, Matrix& out,
                                            std::size_t c0) {
                               Vec g(data.n, 0.0);
                               for (std::size_t j = 0; j < fd.p(); ++j)
                                   kernels::axpy(th[j], fd.cols[j], g);
                               for (std::size_t i = 0; i < data.n; ++i) {
                                   double r = data.x[i] - g[i];
                                   out(i, c0) = r * r - th[pf];
                               }
                           }};
    auto probit_block = [&data](const Design& d, std::size_t offset,
                                const char* name) {
        return ScoreBlock{
            name, d.p(),
            [&data, &d, offset](std::span<const double> th, Matrix& out,
                                std::size_t c0) {
                Matrix rows = glm_score_rows(d, data.y, Link::Probit,
                                             th.subspan(offset, d.p()));
                for (std::size_t i = 0; i < data.n; ++i)
                    for (std::size_t j = 0; j < d.p(); ++j)
                        out(i, c0 + j) = rows(i, j);
            }};
    };
    ScoreBlock phi_block{
        "phi", 1,
        [pf, pa, pr, ia, it, il](std::span<const double> th, Matrix& out,
                                 std::size_t c0) {
            double a1 = th[ia];
            double s2 = th[pf];
            double t1 = th[pf + 1 + it];
            double l1 = th[pf + 1 + pa + il];
            double ph = th[pf + 1 + pa + pr];
            double g = ph * a1 - l1 * std::sqrt(1.0 + t1 * t1 * s2);
            for (std::size_t i = 0; i < out.rows(); ++i) out(i, c0) = g;
        }};
    stack.blocks = {alpha_block, sigma_block, probit_block(ad, pf + 1, "association"),
                    probit_block(rd, pf + 1 + pa, "reduced"), phi_block};

    SandwichResult sand = sandwich_cov(stack);
    std::size_t iphi = stack.dim() - 1;
    double se_phi = std::sqrt(sand.vcov(iphi, iphi));

    CausalFit fit;
    fit.estimator = EstimatorKind::ProbitNormalSMM;
    fit.phi_probit = phi;
    fit.psi = phi / kProbitLogitScale;
    fit.psi_vec = {fit.psi};
    fit.se = se_phi / kProbitLogitScale;
    fit.ci_low = fit.psi - kZ95 * fit.se;
    fit.ci_high = fit.psi + kZ95 * fit.se;
    fit.p_value = fit.se > 0 ? normal_p_value(fit.psi / fit.se) : 1.0;
    fit.ci_method = "wald";
    double ybar = kernels::sum(data.y) / static_cast<double>(data.n);
    fit.outcome_mean_out_of_range = (ybar < 0.10 || ybar > 0.90);
    fit.nuisance = {first_fit, assoc_fit, reduced_fit};
    return fit;
}

std::vector<CurvePoint> estimating_curve(const Dataset& data,
                                         const FitResult& assoc_fit,
                                         const ModelSpec& assoc_spec,
                                         const ModelSpec& m_spec,
                                         std::span<const double> psi_grid) {
    if (psi_grid.empty())
        fail(ErrorCode::InvalidArgument, "psi grid must be nonempty");
    for (double p : psi_grid)
        if (!std::isfinite(p))
            fail(ErrorCode::InvalidArgument, "psi grid must be finite");
    if (assoc_fit.design_hash != design_hash(data, assoc_spec))
        fail(ErrorCode::SpecMismatch,
             "association fit does not belong to this dataset/spec");

    Design assoc = build_design(data, assoc_spec);
    Design m = build_design(data, m_spec);
    Vec eta = assoc.linear_predictor(assoc_fit.beta);
    for (double& e : eta) e = clamp_eta(e);

    auto levels = data.z_levels();
    bool two_group = levels.size() == 2 && data.covariates.empty() && m.p() == 1;

    std::vector<CurvePoint> out;
    out.reserve(psi_grid.size());
    double n1 = 0, n0 = 0;
    if (two_group)
        for (std::size_t i = 0; i < data.n; ++i)
            (data.z[i] == levels[1] ? n1 : n0) += 1.0;

    double zbar = kernels::sum(data.z) / static_cast<double>(data.n);

    for (double psi : psi_grid) {
        double lhs = 0.0, rhs = 0.0;
        if (two_group) {
            for (std::size_t i = 0; i < data.n; ++i) {
                double h = expit(eta[i] - psi * data.x[i]);
                (data.z[i] == levels[1] ? lhs : rhs) += h;
            }
            lhs /= n1;
            rhs /= n0;
        } else {
            for (std::size_t i = 0; i < data.n; ++i) {
                double mpsi = 0.0;
                for (std::size_t k = 0; k < m.p(); ++k)
                    mpsi += psi * m.cols[k][i];  // scalar psi over the m basis
                double h = expit(eta[i] - mpsi * data.x[i]);
                lhs += (data.z[i] - zbar) * h;
            }
            lhs /= static_cast<double>(data.n);
        }
        out.push_back({psi, lhs, rhs});
    }
    return out;
}

}  // namespace ivor
