#include <doctest.h>

#include <cmath>

#include "ivor/kernels.hpp"
#include "ivor/linalg.hpp"
#include "ivor/rng.hpp"

using namespace ivor;

namespace {

Vec random_vec(std::size_t n, Philox& rng, double scale = 1.0) {
    Vec v(n);
    for (auto& t : v) t = scale * (2.0 * rng.uniform() - 1.0);
    return v;
}

}  // namespace

TEST_CASE("active backend equals scalar on every lane-size boundary") {
    Philox rng(11, 0);
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
        Vec a = random_vec(n, rng), b = random_vec(n, rng), w = random_vec(n, rng);
        double tol = 1e-13 * (1.0 + static_cast<double>(n));

        CHECK(kernels::sum(a) ==
              doctest::Approx(kernels::detail::sum_scalar(a)).epsilon(tol));
        CHECK(kernels::dot(a, b) ==
              doctest::Approx(kernels::detail::dot_scalar(a, b)).epsilon(tol));
        CHECK(kernels::wdot(a, b, w) ==
              doctest::Approx(kernels::detail::wdot_scalar(a, b, w)).epsilon(tol));
        CHECK(kernels::sumsq(a) ==
              doctest::Approx(kernels::detail::sumsq_scalar(a)).epsilon(tol));

        Vec y1 = random_vec(n, rng);
        Vec y2 = y1;
        kernels::axpy(0.7, a, y1);
        kernels::detail::axpy_scalar(0.7, a, y2);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]));
    }
}

TEST_CASE("kernel backends can be forced and restored") {
    auto original = kernels::active_backend();
    kernels::set_backend(kernels::Backend::Scalar);
    CHECK(kernels::active_backend() == kernels::Backend::Scalar);
    Vec a{1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(kernels::sum(a) == doctest::Approx(15.0));
    kernels::set_backend(kernels::Backend::Auto);
    CHECK(kernels::sum(a) == doctest::Approx(15.0));
    kernels::set_backend(original);
}

TEST_CASE("exact values on small inputs") {
    Vec a{1.0, 2.0, 3.0};
    Vec b{4.0, 5.0, 6.0};
    Vec w{1.0, 0.5, 2.0};
    CHECK(kernels::dot(a, b) == doctest::Approx(32.0));
    CHECK(kernels::wdot(a, b, w) == doctest::Approx(4.0 + 5.0 + 36.0));
    CHECK(kernels::sumsq(b) == doctest::Approx(77.0));
}
