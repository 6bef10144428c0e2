#include <doctest.h>

#include <cmath>

#include "ivor/estimators.hpp"
#include "ivor/kernels.hpp"
#include "ivor/rng.hpp"
#include "ivor/special.hpp"

using namespace ivor;

namespace {

const ModelSpec kAssocMain = parse_formula("y ~ x + z", Link::Logit);
const ModelSpec kAssocSat = parse_formula("y ~ x + z + x:z", Link::Logit);
const ModelSpec kFirst = parse_formula("x ~ z", Link::Identity);
const ModelSpec kResid = parse_formula("~ r", Link::Identity);

CountTable2x2x2 make_table(std::uint64_t c000, std::uint64_t c001,
                           std::uint64_t c010, std::uint64_t c011,
                           std::uint64_t c100, std::uint64_t c101,
                           std::uint64_t c110, std::uint64_t c111) {
    // arguments ordered x,z,y
    CountTable2x2x2 t;
    t.at(0, 0, 0) = c000; t.at(0, 0, 1) = c001;
    t.at(0, 1, 0) = c010; t.at(0, 1, 1) = c011;
    t.at(1, 0, 0) = c100; t.at(1, 0, 1) = c101;
    t.at(1, 1, 0) = c110; t.at(1, 1, 1) = c111;
    return t;
}

// Tables simulated from a confounded binary-instrument process, so most
// draws carry a solvable estimating equation like real data would.
CountTable2x2x2 random_table(Philox& rng, std::size_t n = 600) {
    double b0 = logit(0.10 + 0.5 * rng.uniform());
    double bx = 2.4 * rng.uniform() - 1.2;
    double bu = 1.6 * rng.uniform() - 0.8;
    double compliance = 0.3 + 0.5 * rng.uniform();
    CountTable2x2x2 t;
    for (std::size_t i = 0; i < n; ++i) {
        int z = rng.bernoulli(0.5);
        int u = rng.bernoulli(0.5);
        double px = 0.15 + compliance * z + 0.15 * u;
        int x = rng.bernoulli(px);
        int y = rng.bernoulli(expit(b0 + bx * x + bu * u));
        ++t.at(x, z, y);
    }
    if (!t.estimable()) return random_table(rng, n);
    return t;
}

}  // namespace

TEST_CASE("wald ratio closed forms") {
    CHECK(wald_ratio(1.0, 0.5) == doctest::Approx(0.0));
    CHECK(wald_ratio(std::exp(2.0), 2.0) == doctest::Approx(1.0).epsilon(1e-12));
    try {
        wald_ratio(2.0, 1e-13);
        FAIL("expected WeakInstrument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WeakInstrument);
    }
}

TEST_CASE("health-register fixture: two-stage estimators") {
    Dataset data = expand_table(brookhart_fixture());
    CausalFit iv = standard_iv(data, kFirst, m_spec_scalar());
    // frozen from the independently verified reference computation
    CHECK(iv.psi == doctest::Approx(-1.3555915793).epsilon(1e-8));
    CHECK(std::exp(iv.psi) == doctest::Approx(0.2577947433).epsilon(1e-8));
    CHECK(iv.se == doctest::Approx(0.57219).epsilon(2e-4));
    CHECK(std::exp(iv.ci_low) == doctest::Approx(0.0840).epsilon(2e-3));
    CHECK(std::exp(iv.ci_high) == doctest::Approx(0.7913).epsilon(2e-3));
    CHECK(iv.p_value == doctest::Approx(0.01783).epsilon(2e-3));

    CausalFit adj = adjusted_iv(data, kFirst, m_spec_scalar(), kResid);
    CHECK(adj.psi == doctest::Approx(-1.3534824177).epsilon(1e-8));
    CHECK(adj.se == doctest::Approx(0.57190).epsilon(2e-4));

    // the wald ratio from the table margins agrees with the two-stage fit
    double or_yz = (148.0 / 25215.0) / (99.0 / 12380.0);
    double delta = 19607.0 / 25363.0 - 6800.0 / 12479.0;
    CHECK(wald_ratio(or_yz, delta) == doctest::Approx(iv.psi).epsilon(1e-10));
}

TEST_CASE("health-register fixture: structural mean estimators") {
    Dataset data = expand_table(brookhart_fixture());
    CausalFit smm = logistic_smm(data, kAssocMain, m_spec_scalar());
    CHECK(smm.psi == doctest::Approx(-2.5077433415).epsilon(1e-9));
    CHECK(std::exp(smm.psi) == doctest::Approx(0.0814518410).epsilon(1e-8));
    CHECK(smm.ci_method == "score");
    CHECK(std::exp(smm.ci_low) == doctest::Approx(0.009541287).epsilon(1e-5));
    CHECK(std::exp(smm.ci_high) == doctest::Approx(0.815241765).epsilon(1e-5));
    CHECK(smm.se == doctest::Approx(2.04275).epsilon(2e-4));
    CHECK(smm.diagnostics.multiplicity == RootDiagnostics::Multiplicity::Unique);

    // saturated association model shifts the root (frozen reference value)
    CausalFit sat = logistic_smm(data, kAssocSat, m_spec_scalar());
    CHECK(sat.psi == doctest::Approx(-3.5439030372).epsilon(1e-8));

    // closed form agrees with the bracketed root under both models
    CausalFit cf_main = closed_form_binary(brookhart_fixture(), kAssocMain);
    CHECK(cf_main.psi == doctest::Approx(smm.psi).epsilon(1e-10));
    CausalFit cf_sat = closed_form_binary(brookhart_fixture(), kAssocSat);
    CHECK(cf_sat.psi == doctest::Approx(sat.psi).epsilon(1e-10));
}

TEST_CASE("counterfactual predictions") {
    Dataset data = expand_table(brookhart_fixture());
    FitResult fit = fit_glm(data, kAssocSat);
    // psi = 0 reproduces the fitted means exactly
    Vec h0 = counterfactual_predict(Vec{0.0}, fit, kAssocSat, m_spec_scalar(), data);
    Vec mu = predict_mean(fit, data, kAssocSat);
    for (std::size_t i = 0; i < data.n; i += 1873)
        CHECK(h0[i] == doctest::Approx(mu[i]).epsilon(1e-12));

    // unexposed rows are untouched by psi
    double psi = std::log(0.081);
    Vec h = counterfactual_predict(Vec{psi}, fit, kAssocSat, m_spec_scalar(), data);
    for (std::size_t i = 0; i < data.n; i += 911)
        if (data.x[i] == 0.0) CHECK(h[i] == doctest::Approx(mu[i]).epsilon(1e-12));

    // hand-composed value for an exposed row in the (X=1,Z=1) cell
    double expected = expit(logit(114.0 / 19607.0) - std::log(0.081));
    for (std::size_t i = 0; i < data.n; ++i)
        if (data.x[i] == 1.0 && data.z[i] == 1.0) {
            CHECK(h[i] == doctest::Approx(expected).epsilon(1e-9));
            break;
        }

    try {
        counterfactual_predict(Vec{0.0}, fit, kAssocMain, m_spec_scalar(), data);
        FAIL("expected SpecMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SpecMismatch);
    }
}

TEST_CASE("null identification: an exactly null table estimates zero") {
    // odds(Y|Z=1) == odds(Y|Z=0) exactly: both 1:9 within each z margin
    CountTable2x2x2 t = make_table(90, 10, 45, 5, 180, 20, 360, 40);
    Dataset data = expand_table(t);
    CausalFit iv = standard_iv(data, kFirst, m_spec_scalar());
    CHECK(std::abs(iv.psi) < 1e-10);
    CausalFit smm = logistic_smm(data, kAssocMain, m_spec_scalar());
    CHECK(std::abs(smm.psi) < 1e-10);
    CausalFit cf = closed_form_binary(t, kAssocMain);
    CHECK(std::abs(cf.psi) < 1e-10);
}

TEST_CASE("estimating-function root residual and derivative correctness") {
    Philox rng(52, 0);
    for (int rep = 0; rep < 25; ++rep) {
        CountTable2x2x2 t = random_table(rng);
        Dataset data = expand_table(t);
        auto engine = detail::SmmEngine::prepare(data, kAssocSat, m_spec_scalar(), false);
        RootDiagnostics diag;
        SmmOptions opts;
        auto roots = engine.solve_roots(0.0, opts, diag);
        for (double r : roots)
            CHECK(std::abs(engine.estimating_sum(r, 0.0)) <
                  1e-8 * static_cast<double>(data.n));
        // analytic derivative vs central differences
        for (double psi : {-0.8, 0.3, 1.2}) {
            double h = 1e-6;
            double fd = (engine.estimating_sum(psi + h, 0.0) -
                         engine.estimating_sum(psi - h, 0.0)) /
                        (2.0 * h);
            double an = engine.estimating_derivative(psi, 0.0);
            CHECK(an == doctest::Approx(fd).epsilon(1e-5).scale(std::abs(fd) + 1.0));
        }
    }
}

TEST_CASE("closed form and bracketed root agree on random tables") {
    Philox rng(53, 0);
    int checked = 0;
    for (int rep = 0; rep < 300; ++rep) {
        CountTable2x2x2 t = random_table(rng);
        for (const ModelSpec& assoc : {kAssocMain, kAssocSat}) {
            CausalFit cf, smm;
            try {
                cf = closed_form_binary(t, assoc);
                smm = logistic_smm(expand_table(t), assoc, m_spec_scalar());
            } catch (const Error&) {
                continue;  // no-root/ambiguous tables are exercised elsewhere
            }
            CHECK(std::abs(cf.psi - smm.psi) < 1e-8);
            ++checked;
        }
    }
    CHECK(checked > 520);
}

TEST_CASE("instrument relabeling leaves the estimate unchanged") {
    Philox rng(54, 0);
    for (int rep = 0; rep < 10; ++rep) {
        CountTable2x2x2 t = random_table(rng);
        CountTable2x2x2 flipped;
        for (int x = 0; x < 2; ++x)
            for (int z = 0; z < 2; ++z)
                for (int y = 0; y < 2; ++y) flipped.at(x, 1 - z, y) = t.at(x, z, y);
        try {
            CausalFit a = logistic_smm(expand_table(t), kAssocMain, m_spec_scalar());
            CausalFit b =
                logistic_smm(expand_table(flipped), kAssocMain, m_spec_scalar());
            CHECK(a.psi == doctest::Approx(b.psi).epsilon(1e-8));
        } catch (const Error&) {
        }
    }
}

TEST_CASE("no root carries the evaluated curve") {
    // frozen counts found to give a constant-sign estimating function
    CountTable2x2x2 t = make_table(3, 1, 8, 5, 10, 4, 30, 2);
    Dataset data = expand_table(t);
    try {
        logistic_smm(data, kAssocMain, m_spec_scalar());
        FAIL("expected NoRoot");
    } catch (const NoRootError& e) {
        CHECK(e.code() == ErrorCode::NoRoot);
        CHECK(e.diagnostics.multiplicity == RootDiagnostics::Multiplicity::None);
        CHECK(e.diagnostics.curve.size() > 50);
        // constant sign over the bracket
        bool pos = e.diagnostics.curve.front().lhs > 0;
        for (const auto& p : e.diagnostics.curve) CHECK((p.lhs > 0) == pos);
    }
}

TEST_CASE("two roots select the smaller magnitude and report both") {
    // frozen counts with two solutions under the saturated model
    CountTable2x2x2 t = make_table(10, 5, 33, 5, 24, 1, 14, 3);
    Dataset data = expand_table(t);
    CausalFit fit = logistic_smm(data, kAssocSat, m_spec_scalar());
    CHECK(fit.diagnostics.multiplicity == RootDiagnostics::Multiplicity::Two);
    REQUIRE(fit.diagnostics.roots.size() == 2);
    CHECK(fit.diagnostics.roots[0] == doctest::Approx(-2.1786560549).epsilon(1e-7));
    CHECK(fit.diagnostics.roots[1] == doctest::Approx(-0.2109404151).epsilon(1e-7));
    CHECK(fit.psi == doctest::Approx(-0.2109404151).epsilon(1e-7));
    REQUIRE(fit.diagnostics.implied_ey0.size() == 2);
    // the discarded root implies a more extreme counterfactual mean
    CHECK(fit.diagnostics.implied_ey0[0] > fit.diagnostics.implied_ey0[1]);

    SmmOptions opts;
    opts.selection = SmmOptions::RootSelection::Smallest;
    CausalFit low = logistic_smm(data, kAssocSat, m_spec_scalar(), opts);
    CHECK(low.psi == doctest::Approx(-2.1786560549).epsilon(1e-7));

    // the closed form sees the same pair
    CausalFit cf = closed_form_binary(t, kAssocSat);
    REQUIRE(cf.diagnostics.roots.size() == 2);
    CHECK(cf.diagnostics.roots[0] == doctest::Approx(-2.1786560549).epsilon(1e-7));
}

TEST_CASE("weak and degenerate instruments are rejected") {
    // identical exposure means in both instrument groups
    Vec y{0, 1, 0, 1, 0, 1, 0, 1}, x{0, 1, 0, 1, 0, 1, 0, 1},
        z{0, 0, 0, 0, 1, 1, 1, 1};
    Dataset data = Dataset::make(y, x, z);
    try {
        standard_iv(data, kFirst, m_spec_scalar());
        FAIL("expected WeakInstrument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WeakInstrument);
    }

    Vec zc(8, 1.0);
    Dataset const_z = Dataset::make(y, x, zc);
    try {
        adjusted_iv(const_z, kFirst, m_spec_scalar(), kResid);
        FAIL("expected RankDeficient");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RankDeficient);
    }
}

TEST_CASE("congeniality guard demands intercept and instrument main effect") {
    Dataset data = expand_table(brookhart_fixture());
    ModelSpec no_z = parse_formula("y ~ x", Link::Logit);
    CHECK_THROWS_AS(logistic_smm(data, no_z, m_spec_scalar()), Error);
    SmmOptions opts;
    opts.congeniality_override = true;
    CHECK_NOTHROW(logistic_smm(data, no_z, m_spec_scalar(), opts));
}

TEST_CASE("controls-only first stage uses unexposed rows") {
    Philox rng(61, 0);
    const std::size_t n = 4000;
    Vec y(n), x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        x[i] = rng.bernoulli(0.3 + 0.4 * z[i]) ? 1.0 : 0.0;
        y[i] = rng.bernoulli(expit(-2.5 + 0.5 * x[i])) ? 1.0 : 0.0;
    }
    Dataset data = Dataset::make(y, x, z);
    IvOptions opts;
    opts.first_stage_population = IvOptions::FirstStagePopulation::ControlsOnly;
    CausalFit fit = standard_iv(data, kFirst, m_spec_scalar(), opts);

    // the first-stage coefficients must be the controls-only least squares
    Vec ys, xs, zs;
    for (std::size_t i = 0; i < n; ++i)
        if (y[i] == 0.0) {
            ys.push_back(0.0);
            xs.push_back(x[i]);
            zs.push_back(z[i]);
        }
    Dataset controls = Dataset::make(ys, xs, zs);
    FitResult direct = fit_glm(controls, kFirst);
    CHECK(fit.nuisance[0].beta[0] == doctest::Approx(direct.beta[0]).epsilon(1e-10));
    CHECK(fit.nuisance[0].beta[1] == doctest::Approx(direct.beta[1]).epsilon(1e-10));
}

TEST_CASE("estimating curve brackets the root and reduces at psi zero") {
    Dataset data = expand_table(brookhart_fixture());
    FitResult fit = fit_glm(data, kAssocMain);
    Vec grid;
    for (double p = -6.0; p <= 2.0 + 1e-9; p += 0.05) grid.push_back(p);
    auto curve = estimating_curve(data, fit, kAssocMain, m_spec_scalar(), grid);
    REQUIRE(curve.size() == grid.size());

    int sign_changes = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        double prev = curve[i - 1].lhs - curve[i - 1].rhs;
        double cur = curve[i].lhs - curve[i].rhs;
        if ((prev > 0) != (cur > 0)) ++sign_changes;
    }
    CHECK(sign_changes == 1);

    // at psi = 0, H is the fitted mean, so the two sides are the
    // instrument-group means of the fitted values (equal to those of Y for
    // an ML logit fit containing 1 and z)
    auto at0 = estimating_curve(data, fit, kAssocMain, m_spec_scalar(), Vec{0.0});
    double mean1 = 148.0 / 25363.0, mean0 = 99.0 / 12479.0;
    CHECK(at0[0].lhs == doctest::Approx(mean1).epsilon(1e-9));
    CHECK(at0[0].rhs == doctest::Approx(mean0).epsilon(1e-9));

    CHECK_THROWS_AS(
        estimating_curve(data, fit, kAssocMain, m_spec_scalar(), Vec{}), Error);
}

TEST_CASE("probit-normal estimator matches its defining identity") {
    Philox rng(71, 0);
    const std::size_t n = 20000;
    Vec y(n), x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = static_cast<double>(rng.multinomial3(0.09, 0.42));
        x[i] = z[i] + std::sqrt(2.0) * rng.normal();
        y[i] = rng.bernoulli(norm_cdf(-0.7 + 0.35 * x[i])) ? 1.0 : 0.0;
    }
    Dataset data = Dataset::make(y, x, z);
    ModelSpec passoc = parse_formula("y ~ x + z", Link::Probit);
    ModelSpec preduced = parse_formula("y ~ z", Link::Probit);
    CausalFit fit = probit_normal_smm(data, kFirst, passoc, preduced);

    const FitResult& first = fit.nuisance[0];
    const FitResult& assoc = fit.nuisance[1];
    const FitResult& reduced = fit.nuisance[2];
    double expected = reduced.coef("z") *
                      std::sqrt(1.0 + assoc.coef("x") * assoc.coef("x") *
                                          first.sigma2) /
                      first.coef("z");
    CHECK(fit.phi_probit == doctest::Approx(expected).epsilon(1e-12));
    CHECK(fit.psi == doctest::Approx(expected / 0.6071).epsilon(1e-12));
    CHECK_FALSE(fit.outcome_mean_out_of_range);
    // no confounding: phi estimates the generating probit slope
    CHECK(std::abs(fit.phi_probit - 0.35) < 3.0 * fit.se * 0.6071);
}

TEST_CASE("probit estimator flags weak instruments and extreme outcome means") {
    // exposure exactly balanced across z: alpha_1 = 0
    Vec y(8, 0.0), x{0, 1, 0, 1, 0, 1, 0, 1}, z{0, 0, 0, 0, 1, 1, 1, 1};
    for (int i = 0; i < 4; ++i) y[i] = 1.0;
    Dataset data = Dataset::make(y, x, z);
    try {
        probit_normal_smm(data, kFirst, parse_formula("y ~ x + z", Link::Probit),
                          parse_formula("y ~ z", Link::Probit));
        FAIL("expected WeakInstrument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WeakInstrument);
    }

    Philox rng(72, 0);
    const std::size_t n = 6000;
    Vec yy(n), xx(n), zz(n);
    for (std::size_t i = 0; i < n; ++i) {
        zz[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        xx[i] = zz[i] + rng.normal();
        yy[i] = rng.bernoulli(norm_cdf(-2.2 + 0.3 * xx[i])) ? 1.0 : 0.0;
    }
    Dataset rare = Dataset::make(yy, xx, zz);
    CausalFit fit =
        probit_normal_smm(rare, kFirst, parse_formula("y ~ x + z", Link::Probit),
                          parse_formula("y ~ z", Link::Probit));
    CHECK(fit.outcome_mean_out_of_range);
}

TEST_CASE("standard IV converges to zero under the null at large n") {
    Philox rng(81, 0);
    const std::size_t n = 100000;
    Vec y(n), x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = static_cast<double>(rng.multinomial3(0.09, 0.42));
        x[i] = z[i] + std::sqrt(2.0) * rng.normal();
        y[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;  // independent of everything
    }
    Dataset data = Dataset::make(y, x, z);
    CausalFit fit = standard_iv(data, kFirst, m_spec_scalar());
    CHECK(std::abs(fit.psi) < 3.0 * fit.se);
}

TEST_CASE("zero reduced-form slope makes the probit estimate exactly zero") {
    // y balanced identically across instrument groups -> lambda_1 = 0
    Philox rng(73, 0);
    const std::size_t n = 2000;
    Vec y(n), x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = (i % 2 == 0) ? 0.0 : 1.0;
        y[i] = (i % 4 < 2) ? 0.0 : 1.0;  // same y pattern in both z groups
        x[i] = z[i] + rng.normal();      // instrument still shifts the exposure
    }
    Dataset data = Dataset::make(y, x, z);
    CausalFit fit = probit_normal_smm(
        data, parse_formula("x ~ z", Link::Identity),
        parse_formula("y ~ x + z", Link::Probit), parse_formula("y ~ z", Link::Probit));
    CHECK(std::abs(fit.nuisance[2].coef("z")) < 1e-9);
    CHECK(std::abs(fit.phi_probit) < 1e-8);
    CHECK(std::abs(fit.psi) < 1e-8);
}

TEST_CASE("covariate-bearing models run through every estimator") {
    // a baseline covariate that shifts both exposure and outcome
    Philox rng(85, 0);
    const std::size_t n = 6000;
    Vec y(n), x(n), z(n), cvec(n);
    for (std::size_t i = 0; i < n; ++i) {
        cvec[i] = rng.normal();
        z[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        x[i] = 0.8 * z[i] + 0.5 * cvec[i] + rng.normal();
        y[i] = rng.bernoulli(expit(-0.7 + 0.6 * x[i] + 0.4 * cvec[i])) ? 1.0 : 0.0;
    }
    Dataset data = Dataset::make(y, x, z, {cvec}, {"c"});

    ModelSpec first = parse_formula("x ~ z + c", Link::Identity);
    CausalFit iv = standard_iv(data, first, m_spec_scalar());
    CHECK(std::isfinite(iv.se));
    CHECK(std::abs(iv.psi - 0.6) < 4.0 * iv.se);

    CausalFit adj = adjusted_iv(data, first, m_spec_scalar(),
                                parse_formula("~ r", Link::Identity));
    CHECK(std::abs(adj.psi - 0.6) < 4.0 * adj.se);

    ModelSpec assoc = parse_formula("y ~ x + z + c", Link::Logit);
    CausalFit smm = logistic_smm(data, assoc, m_spec_scalar());
    CHECK(std::abs(smm.psi - 0.6) < 4.0 * smm.se);
    CHECK(smm.se > 0.0);

    // a pure-noise covariate barely moves the no-covariate estimate
    Vec noise(n);
    for (auto& v : noise) v = rng.normal();
    Dataset with_noise = Dataset::make(y, x, z, {cvec, noise}, {"c", "w"});
    CausalFit smm2 = logistic_smm(
        with_noise, parse_formula("y ~ x + z + c + w", Link::Logit), m_spec_scalar());
    CHECK(std::abs(smm2.psi - smm.psi) < 0.5 * smm.se);
}
