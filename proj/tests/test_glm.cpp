#include <doctest.h>

#include <cmath>

#include "ivor/errors.hpp"
#include "ivor/glm.hpp"
#include "ivor/rng.hpp"
#include "ivor/special.hpp"

using namespace ivor;

namespace {

Dataset bernoulli_only(std::size_t n, std::size_t ones) {
    Vec y(n, 0.0);
    for (std::size_t i = 0; i < ones; ++i) y[i] = 1.0;
    Vec x(n, 0.0), z(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(i % 2);
        z[i] = static_cast<double>((i / 2) % 2);
    }
    return Dataset::make(std::move(y), std::move(x), std::move(z));
}

Dataset random_logit_data(std::size_t n, Philox& rng, Link link = Link::Logit) {
    Vec x(n), z(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        double eta = -0.3 + 0.8 * x[i] + 0.5 * z[i];
        double mu = link == Link::Logit ? expit(eta) : norm_cdf(eta);
        y[i] = rng.bernoulli(mu) ? 1.0 : 0.0;
    }
    return Dataset::make(std::move(y), std::move(x), std::move(z));
}

}  // namespace

TEST_CASE("intercept-only logit recovers logit of the mean") {
    // closed-form MLE: beta0 = logit(0.25)
    Dataset data = bernoulli_only(100, 25);
    FitResult fit = fit_glm(data, parse_formula("y ~ 1", Link::Logit));
    CHECK(fit.converged);
    CHECK(fit.beta[0] == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-10));
    CHECK(fit.score_norm < 1e-8);
}

TEST_CASE("saturated logit reproduces the cell means of the count fixture") {
    Dataset data = expand_table(brookhart_fixture());
    ModelSpec spec = parse_formula("y ~ x + z + x:z", Link::Logit);
    FitResult fit = fit_glm(data, spec);
    REQUIRE(fit.converged);
    Vec mu = predict_mean(fit, data, spec);
    // every row in the (X=1,Z=1) cell is fitted at the empirical frequency
    double expected = 114.0 / 19607.0;
    for (std::size_t i = 0; i < data.n; ++i)
        if (data.x[i] == 1.0 && data.z[i] == 1.0) {
            CHECK(mu[i] == doctest::Approx(expected).epsilon(1e-8));
            break;
        }
    // and the remaining cells match their frequencies too
    double cells[2][2] = {{39.0 / 5679.0, 34.0 / 5756.0},
                          {60.0 / 6800.0, 114.0 / 19607.0}};
    for (std::size_t i = 0; i < data.n; i += 997) {
        int xi = static_cast<int>(data.x[i]), zi = static_cast<int>(data.z[i]);
        CHECK(mu[i] == doctest::Approx(cells[xi][zi]).epsilon(1e-7));
    }
}

TEST_CASE("constant response raises Separation") {
    Dataset data = bernoulli_only(50, 50);
    CHECK_THROWS_WITH_AS(fit_glm(data, parse_formula("y ~ 1", Link::Logit)),
                         doctest::Contains("pinned"), Error);
    Dataset data0 = bernoulli_only(50, 0);
    CHECK_THROWS_AS(fit_glm(data0, parse_formula("y ~ 1", Link::Probit)), Error);
}

TEST_CASE("perfectly separated covariate raises Separation") {
    // y == x exactly
    Vec y{0, 0, 0, 1, 1, 1}, x{-2, -1.5, -1, 1, 1.5, 2}, z(6, 0.0);
    Dataset data = Dataset::make(y, x, z);
    try {
        fit_glm(data, parse_formula("y ~ x", Link::Logit));
        FAIL("expected Separation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Separation);
    }
}

TEST_CASE("predict_mean at a zero intercept gives one half") {
    Dataset data = bernoulli_only(100, 50);
    for (Link link : {Link::Logit, Link::Probit}) {
        ModelSpec spec = parse_formula("y ~ 1", link);
        FitResult fit = fit_glm(data, spec);
        CHECK(fit.beta[0] == doctest::Approx(0.0).epsilon(1e-9));
        Vec mu = predict_mean(fit, data, spec);
        CHECK(mu[0] == doctest::Approx(0.5).epsilon(1e-9));
    }
}

TEST_CASE("first-stage linear fit reproduces the instrument group means") {
    Philox rng(17, 0);
    const std::size_t n = 500;
    Vec x(n), z(n), y(n, 0.0);
    double sum1 = 0, n1 = 0, sum0 = 0, n0 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        x[i] = z[i] + 2.0 * rng.normal();
        y[i] = i % 2 ? 1.0 : 0.0;
        (z[i] == 1.0 ? sum1 : sum0) += x[i];
        (z[i] == 1.0 ? n1 : n0) += 1.0;
    }
    Dataset data = Dataset::make(y, x, z);
    ModelSpec spec = parse_formula("x ~ z", Link::Identity);
    FitResult fit = fit_glm(data, spec);
    Vec mu = predict_mean(fit, data, spec);
    // the two fitted values are the per-group sample means of x
    for (std::size_t i = 0; i < n; ++i) {
        double expected = z[i] == 1.0 ? sum1 / n1 : sum0 / n0;
        CHECK(mu[i] == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("identity fit on noiseless linear data recovers the coefficients") {
    const std::size_t n = 40;
    Vec x(n), z(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = 0.1 * static_cast<double>(i);
        z[i] = static_cast<double>(i % 3);
        y[i] = (2.5 - 1.25 * x[i] + 0.75 * z[i]) != 0.0
                   ? (2.5 - 1.25 * x[i] + 0.75 * z[i])
                   : 0.0;
    }
    // identity-link fit, response y is continuous here
    Dataset data = Dataset::make(Vec(n, 0.0), x, z);
    Design d = build_design(data, parse_formula("x ~ x + z", Link::Identity));
    // direct design-level call with the synthetic response
    FitResult fit = fit_glm_design(d, y, Link::Identity);
    CHECK(fit.beta[0] == doctest::Approx(2.5).epsilon(1e-10));
    CHECK(fit.beta[1] == doctest::Approx(-1.25).epsilon(1e-10));
    CHECK(fit.beta[2] == doctest::Approx(0.75).epsilon(1e-10));
}

TEST_CASE("score at the solution is tiny for random fits") {
    Philox rng(21, 0);
    for (int rep = 0; rep < 20; ++rep) {
        Link link = rep % 2 ? Link::Logit : Link::Probit;
        Dataset data = random_logit_data(300, rng, link);
        ModelSpec spec = parse_formula("y ~ x + z", link);
        FitResult fit = fit_glm(data, spec);
        CHECK(fit.converged);
        CHECK(fit.score_norm < 1e-8);
    }
}

TEST_CASE("observed information matches finite differences of the score") {
    Philox rng(33, 0);
    for (Link link : {Link::Logit, Link::Probit}) {
        Dataset data = random_logit_data(200, rng, link);
        ModelSpec spec = parse_formula("y ~ x + z", link);
        Design design = build_design(data, spec);
        FitResult fit = fit_glm(data, spec);
        // evaluate away from the optimum too
        Vec beta = fit.beta;
        beta[1] += 0.3;
        Matrix info = glm_observed_information(design, data.y, link, beta);
        const std::size_t p = design.p();
        for (std::size_t j = 0; j < p; ++j) {
            double h = 1e-5 * std::max(1.0, std::abs(beta[j]));
            Vec up = beta, dn = beta;
            up[j] += h;
            dn[j] -= h;
            Matrix su = glm_score_rows(design, data.y, link, up);
            Matrix sd = glm_score_rows(design, data.y, link, dn);
            for (std::size_t i = 0; i < p; ++i) {
                double fd = 0.0;
                for (std::size_t r = 0; r < data.n; ++r)
                    fd += su(r, i) - sd(r, i);
                fd /= 2.0 * h;
                double analytic = -info(i, j);
                CHECK(analytic ==
                      doctest::Approx(fd).epsilon(1e-5).scale(std::abs(fd) + 1.0));
            }
        }
    }
}

TEST_CASE("collinear design raises RankDeficient") {
    Vec y{0, 1, 0, 1, 1, 0}, x{1, 2, 3, 4, 5, 6}, z{2, 4, 6, 8, 10, 12};
    Dataset data = Dataset::make(y, x, z);
    CHECK_THROWS_AS(fit_glm(data, parse_formula("y ~ x + z", Link::Logit)), Error);
}

TEST_CASE("non-binary response is rejected for binary links") {
    Vec y{0, 1, 0, 1}, x{1, 2, 3, 4}, z{0, 1, 0, 1};
    Dataset data = Dataset::make(y, x, z);
    Design d = build_design(data, parse_formula("y ~ x", Link::Logit));
    Vec bad{0.0, 0.5, 1.0, 0.0};
    CHECK_THROWS_AS(fit_glm_design(d, bad, Link::Logit), Error);
}

TEST_CASE("predict_mean rejects a mismatched spec") {
    Dataset data = bernoulli_only(60, 20);
    FitResult fit = fit_glm(data, parse_formula("y ~ x", Link::Logit));
    try {
        predict_mean(fit, data, parse_formula("y ~ z", Link::Logit));
        FAIL("expected SpecMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SpecMismatch);
    }
}

TEST_CASE("zero-one weights reproduce the subset fit") {
    Philox rng(8, 2);
    Dataset data = random_logit_data(400, rng);
    GlmOptions opts;
    Vec w(data.n);
    Vec ys, xs, zs;
    for (std::size_t i = 0; i < data.n; ++i) {
        w[i] = (i % 3 == 0) ? 0.0 : 1.0;
        if (w[i] == 1.0) {
            ys.push_back(data.y[i]);
            xs.push_back(data.x[i]);
            zs.push_back(data.z[i]);
        }
    }
    opts.weights = w;
    FitResult weighted = fit_glm(data, parse_formula("y ~ x + z", Link::Logit), opts);
    Dataset subset = Dataset::make(ys, xs, zs);
    FitResult direct = fit_glm(subset, parse_formula("y ~ x + z", Link::Logit));
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(weighted.beta[j] == doctest::Approx(direct.beta[j]).epsilon(1e-8));
}

TEST_CASE("offset shifts the linear predictor") {
    Philox rng(9, 1);
    Dataset data = random_logit_data(300, rng);
    GlmOptions opts;
    opts.offset = Vec(data.n, 0.7);
    FitResult with = fit_glm(data, parse_formula("y ~ 1", Link::Logit), opts);
    FitResult without = fit_glm(data, parse_formula("y ~ 1", Link::Logit));
    CHECK(with.beta[0] + 0.7 == doctest::Approx(without.beta[0]).epsilon(1e-8));
}
