#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "ivor/errors.hpp"

namespace ivor {

// Brent's method on a sign-changing bracket [a,b]. Combines inverse
// quadratic interpolation and secant steps with a bisection fallback.
template <typename F>
double brent_root(F&& f, double a, double b, double xtol = 1e-12,
                  int max_iter = 200) {
    double fa = f(a);
    double fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if ((fa > 0.0) == (fb > 0.0))
        fail(ErrorCode::BracketFailure, "brent_root: endpoints do not bracket a root");

    double c = a, fc = fa;
    double d = b - a, e = d;
    for (int iter = 0; iter < max_iter; ++iter) {
        if ((fb > 0.0) == (fc > 0.0)) {
            c = a;
            fc = fa;
            d = e = b - a;
        }
        if (std::abs(fc) < std::abs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        double tol1 = 2.0 * 2.220446049250313e-16 * std::abs(b) + 0.5 * xtol;
        double xm = 0.5 * (c - b);
        if (std::abs(xm) <= tol1 || fb == 0.0) return b;
        if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
            double s = fb / fa;
            double p, q;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                double qq = fa / fc;
                double r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            p = std::abs(p);
            double min1 = 3.0 * xm * q - std::abs(tol1 * q);
            double min2 = std::abs(e * q);
            if (2.0 * p < (min1 < min2 ? min1 : min2)) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if (std::abs(d) > tol1)
            b += d;
        else
            b += (xm > 0.0 ? tol1 : -tol1);
        fb = f(b);
    }
    return b;
}

// Scan f on a uniform grid and return every sign-change bracket.
struct Bracket {
    double lo, hi;
};

template <typename F>
std::vector<Bracket> scan_brackets(F&& f, double lo, double hi, double step) {
    std::vector<Bracket> out;
    double prev_x = lo;
    double prev_f = f(lo);
    if (prev_f == 0.0) out.push_back({lo, lo});
    for (double x = lo + step; x <= hi + 0.5 * step; x += step) {
        double fx = f(x);
        if (fx == 0.0) {
            out.push_back({x, x});
        } else if (prev_f != 0.0 && (prev_f > 0.0) != (fx > 0.0)) {
            out.push_back({prev_x, x});
        }
        prev_x = x;
        prev_f = fx;
    }
    return out;
}

}  // namespace ivor
