#pragma once

#include <cstddef>
#include <span>

// Vector kernels over per-subject arrays. Every kernel has a scalar
// reference implementation and, on x86-64, an AVX2 variant selected at
// runtime; arm64 builds get a NEON variant. The active backend applies
// process-wide and is chosen once (overridable for tests).

namespace ivor::kernels {

enum class Backend { Auto, Scalar, Avx2, Neon };

// Returns the backend actually in use after resolution of Auto.
Backend active_backend();
const char* backend_name(Backend b);

// Force a backend (Scalar always works; Avx2/Neon throw if unsupported).
void set_backend(Backend b);

// sum_i a[i]
double sum(std::span<const double> a);

// sum_i a[i]*b[i]
double dot(std::span<const double> a, std::span<const double> b);

// sum_i a[i]*b[i]*w[i]
double wdot(std::span<const double> a, std::span<const double> b,
            std::span<const double> w);

// y[i] += alpha*x[i]
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// sum_i a[i]^2
double sumsq(std::span<const double> a);

namespace detail {
// Scalar reference path, exposed for equivalence tests.
double sum_scalar(std::span<const double> a);
double dot_scalar(std::span<const double> a, std::span<const double> b);
double wdot_scalar(std::span<const double> a, std::span<const double> b,
                   std::span<const double> w);
void axpy_scalar(double alpha, std::span<const double> x, std::span<double> y);
double sumsq_scalar(std::span<const double> a);
}  // namespace detail

}  // namespace ivor::kernels
