#include <doctest.h>

#include <cmath>

#include "ivor/errors.hpp"
#include "ivor/linalg.hpp"
#include "ivor/rng.hpp"

using namespace ivor;

TEST_CASE("cholesky solve recovers a known solution") {
    Matrix a(3, 3);
    a(0, 0) = 4;  a(0, 1) = 1;  a(0, 2) = 0.5;
    a(1, 0) = 1;  a(1, 1) = 3;  a(1, 2) = 0.2;
    a(2, 0) = 0.5; a(2, 1) = 0.2; a(2, 2) = 2;
    Vec x_true{1.0, -2.0, 0.5};
    Vec b = matvec(a, x_true);
    Vec x = solve_spd(a, b);
    for (int i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-12));
}

TEST_CASE("spd inverse round trips to identity") {
    Philox rng(3, 0);
    Matrix base(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) base(i, j) = 2.0 * rng.uniform() - 1.0;
    Matrix a = matmul(base, base.transposed());
    for (std::size_t i = 0; i < 4; ++i) a(i, i) += 1.0;
    Matrix ainv = inverse_spd(a);
    Matrix prod = matmul(a, ainv);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(prod(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
}

TEST_CASE("singular matrix raises RankDeficient") {
    Matrix a(2, 2);
    a(0, 0) = 1; a(0, 1) = 2;
    a(1, 0) = 2; a(1, 1) = 4;  // rank 1
    CHECK_THROWS_AS(solve_spd(a, Vec{1, 2}), Error);
}

TEST_CASE("lu inverse handles non-symmetric matrices") {
    Matrix a(3, 3);
    a(0, 0) = 2; a(0, 1) = 1; a(0, 2) = 0;
    a(1, 0) = 0.3; a(1, 1) = -4; a(1, 2) = 2;
    a(2, 0) = 0; a(2, 1) = 7; a(2, 2) = 1.5;
    Matrix ainv = inverse_lu(a);
    Matrix prod = matmul(a, ainv);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(prod(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
    Matrix zero(2, 2);
    CHECK_THROWS_AS(inverse_lu(zero), Error);
}

TEST_CASE("jacobi eigen solve matches known spectrum") {
    Matrix a(2, 2);
    a(0, 0) = 2; a(0, 1) = 1;
    a(1, 0) = 1; a(1, 1) = 2;  // eigenvalues 1 and 3
    Vec evals;
    Matrix evecs;
    eigen_sym(a, evals, evecs);
    double lo = std::min(evals[0], evals[1]);
    double hi = std::max(evals[0], evals[1]);
    CHECK(lo == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("psd floor clips the negative eigenvalue only") {
    Matrix a(2, 2);
    a(0, 0) = 1; a(0, 1) = 2;
    a(1, 0) = 2; a(1, 1) = 1;  // eigenvalues 3 and -1
    Matrix f = psd_floor(a);
    Vec evals;
    Matrix evecs;
    eigen_sym(f, evals, evecs);
    for (double e : evals) CHECK(e >= -1e-12);
    double hi = std::max(evals[0], evals[1]);
    CHECK(hi == doctest::Approx(3.0).epsilon(1e-10));
}
