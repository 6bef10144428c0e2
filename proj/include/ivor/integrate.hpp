#pragma once

#include <functional>

namespace ivor {

// Adaptive Simpson quadrature with absolute tolerance.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol = 1e-10, int max_depth = 40);

// Exposure laws used by the simulation designs. Shapes are those of
// X | Z = z after the per-experiment transformation.
enum class ExposureLaw {
    NormalLocation,  // z + sigma * N(0,1)
    StudentT2,       // z + t_2
    GammaShape,      // Gamma(shape = k, scale 1); k = 0 degenerate at 0
};

// E[ g(X) | Z = z ] under the given law, by deterministic quadrature.
// For NormalLocation pass sigma; for GammaShape pass the integer shape in
// `shape` (0 evaluates g(0)).
double expect_exposure(ExposureLaw law, double z, double sigma, int shape,
                       const std::function<double(double)>& g, double tol = 1e-10);

// Quantile of the t distribution with 2 df (closed form).
double t2_quantile(double u);

}  // namespace ivor
