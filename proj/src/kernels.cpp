#include "ivor/kernels.hpp"

#include <atomic>
#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64)
#define IVOR_X86 1
#include <immintrin.h>
#else
#define IVOR_X86 0
#endif

#if defined(__aarch64__)
#define IVOR_NEON 1
#include <arm_neon.h>
#else
#define IVOR_NEON 0
#endif

namespace ivor::kernels {

namespace detail {

double sum_scalar(std::span<const double> a) {
    double acc0 = 0.0, acc1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        acc0 += a[i];
        acc1 += a[i + 1];
    }
    if (i < a.size()) acc0 += a[i];
    return acc0 + acc1;
}

double dot_scalar(std::span<const double> a, std::span<const double> b) {
    double acc0 = 0.0, acc1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
    }
    if (i < a.size()) acc0 += a[i] * b[i];
    return acc0 + acc1;
}

double wdot_scalar(std::span<const double> a, std::span<const double> b,
                   std::span<const double> w) {
    double acc0 = 0.0, acc1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        acc0 += a[i] * b[i] * w[i];
        acc1 += a[i + 1] * b[i + 1] * w[i + 1];
    }
    if (i < a.size()) acc0 += a[i] * b[i] * w[i];
    return acc0 + acc1;
}

void axpy_scalar(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double sumsq_scalar(std::span<const double> a) {
    double acc0 = 0.0, acc1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        acc0 += a[i] * a[i];
        acc1 += a[i + 1] * a[i + 1];
    }
    if (i < a.size()) acc0 += a[i] * a[i];
    return acc0 + acc1;
}

}  // namespace detail

#if IVOR_X86

// AVX2 variants. No FMA: keep per-element rounding identical to the scalar
// path so equivalence tests only see reassociation differences.

__attribute__((target("avx2"))) static double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

__attribute__((target("avx2"))) static double sum_avx2(std::span<const double> a) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(a.data() + i));
    }
    double tail = 0.0;
    for (; i < a.size(); ++i) tail += a[i];
    return hsum256(acc) + tail;
}

__attribute__((target("avx2"))) static double dot_avx2(std::span<const double> a,
                                                       std::span<const double> b) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        __m256d av = _mm256_loadu_pd(a.data() + i);
        __m256d bv = _mm256_loadu_pd(b.data() + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, bv));
    }
    double tail = 0.0;
    for (; i < a.size(); ++i) tail += a[i] * b[i];
    return hsum256(acc) + tail;
}

__attribute__((target("avx2"))) static double wdot_avx2(std::span<const double> a,
                                                        std::span<const double> b,
                                                        std::span<const double> w) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        __m256d av = _mm256_loadu_pd(a.data() + i);
        __m256d bv = _mm256_loadu_pd(b.data() + i);
        __m256d wv = _mm256_loadu_pd(w.data() + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_mul_pd(av, bv), wv));
    }
    double tail = 0.0;
    for (; i < a.size(); ++i) tail += a[i] * b[i] * w[i];
    return hsum256(acc) + tail;
}

__attribute__((target("avx2"))) static void axpy_avx2(double alpha,
                                                      std::span<const double> x,
                                                      std::span<double> y) {
    __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= x.size(); i += 4) {
        __m256d xv = _mm256_loadu_pd(x.data() + i);
        __m256d yv = _mm256_loadu_pd(y.data() + i);
        _mm256_storeu_pd(y.data() + i, _mm256_add_pd(yv, _mm256_mul_pd(av, xv)));
    }
    for (; i < x.size(); ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2"))) static double sumsq_avx2(std::span<const double> a) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        __m256d av = _mm256_loadu_pd(a.data() + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, av));
    }
    double tail = 0.0;
    for (; i < a.size(); ++i) tail += a[i] * a[i];
    return hsum256(acc) + tail;
}

static bool avx2_supported() { return __builtin_cpu_supports("avx2"); }

#endif  // IVOR_X86

#if IVOR_NEON

static double sum_neon(std::span<const double> a) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) acc = vaddq_f64(acc, vld1q_f64(a.data() + i));
    double tail = (i < a.size()) ? a[i] : 0.0;
    return vaddvq_f64(acc) + tail;
}

static double dot_neon(std::span<const double> a, std::span<const double> b) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a.data() + i), vld1q_f64(b.data() + i)));
    }
    double tail = (i < a.size()) ? a[i] * b[i] : 0.0;
    return vaddvq_f64(acc) + tail;
}

static double wdot_neon(std::span<const double> a, std::span<const double> b,
                        std::span<const double> w) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        float64x2_t p = vmulq_f64(vld1q_f64(a.data() + i), vld1q_f64(b.data() + i));
        acc = vaddq_f64(acc, vmulq_f64(p, vld1q_f64(w.data() + i)));
    }
    double tail = (i < a.size()) ? a[i] * b[i] * w[i] : 0.0;
    return vaddvq_f64(acc) + tail;
}

static void axpy_neon(double alpha, std::span<const double> x, std::span<double> y) {
    float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= x.size(); i += 2) {
        float64x2_t yv = vld1q_f64(y.data() + i);
        vst1q_f64(y.data() + i, vaddq_f64(yv, vmulq_f64(av, vld1q_f64(x.data() + i))));
    }
    for (; i < x.size(); ++i) y[i] += alpha * x[i];
}

static double sumsq_neon(std::span<const double> a) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= a.size(); i += 2) {
        float64x2_t av = vld1q_f64(a.data() + i);
        acc = vaddq_f64(acc, vmulq_f64(av, av));
    }
    double tail = (i < a.size()) ? a[i] * a[i] : 0.0;
    return vaddvq_f64(acc) + tail;
}

#endif  // IVOR_NEON

namespace {

struct Dispatch {
    double (*sum)(std::span<const double>);
    double (*dot)(std::span<const double>, std::span<const double>);
    double (*wdot)(std::span<const double>, std::span<const double>,
                   std::span<const double>);
    void (*axpy)(double, std::span<const double>, std::span<double>);
    double (*sumsq)(std::span<const double>);
    Backend which;
};

Dispatch make_dispatch(Backend b) {
    if (b == Backend::Auto) {
#if IVOR_X86
        b = avx2_supported() ? Backend::Avx2 : Backend::Scalar;
#elif IVOR_NEON
        b = Backend::Neon;
#else
        b = Backend::Scalar;
#endif
    }
    switch (b) {
        case Backend::Avx2:
#if IVOR_X86
            if (avx2_supported()) {
                return {sum_avx2, dot_avx2, wdot_avx2, axpy_avx2, sumsq_avx2,
                        Backend::Avx2};
            }
#endif
            throw std::runtime_error("AVX2 backend not available on this CPU");
        case Backend::Neon:
#if IVOR_NEON
            return {sum_neon, dot_neon, wdot_neon, axpy_neon, sumsq_neon,
                    Backend::Neon};
#else
            throw std::runtime_error("NEON backend not available on this CPU");
#endif
        default:
            return {detail::sum_scalar, detail::dot_scalar, detail::wdot_scalar,
                    detail::axpy_scalar, detail::sumsq_scalar, Backend::Scalar};
    }
}

Dispatch& dispatch() {
    static Dispatch d = make_dispatch(Backend::Auto);
    return d;
}

}  // namespace

Backend active_backend() { return dispatch().which; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Auto: return "auto";
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
    }
    return "?";
}

void set_backend(Backend b) { dispatch() = make_dispatch(b); }

double sum(std::span<const double> a) { return dispatch().sum(a); }

double dot(std::span<const double> a, std::span<const double> b) {
    return dispatch().dot(a, b);
}

double wdot(std::span<const double> a, std::span<const double> b,
            std::span<const double> w) {
    return dispatch().wdot(a, b, w);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    dispatch().axpy(alpha, x, y);
}

double sumsq(std::span<const double> a) { return dispatch().sumsq(a); }

}  // namespace ivor::kernels
