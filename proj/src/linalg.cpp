#include "ivor/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "ivor/errors.hpp"
#include "ivor/kernels.hpp"

namespace ivor {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

void Matrix::symmetrize() {
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j) {
            double v = 0.5 * ((*this)(i, j) + (*this)(j, i));
            (*this)(i, j) = v;
            (*this)(j, i) = v;
        }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

Vec matvec(const Matrix& a, std::span<const double> x) {
    Vec y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = kernels::dot(a.row(i), x);
    return y;
}

namespace {

// In-place lower Cholesky; returns false on a non-positive pivot.
bool cholesky(Matrix& a, double tol) {
    const std::size_t n = a.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
    if (max_diag == 0.0) return false;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (d <= tol * max_diag) return false;
        d = std::sqrt(d);
        a(j, j) = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / d;
        }
    }
    return true;
}

Vec cholesky_solve(const Matrix& l, Vec b) {
    const std::size_t n = l.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b[k];
        b[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * b[k];
        b[ii] = s / l(ii, ii);
    }
    return b;
}

}  // namespace

Vec solve_spd(Matrix a, Vec b, double tol) {
    if (!cholesky(a, tol))
        fail(ErrorCode::RankDeficient, "matrix not positive definite to tolerance");
    return cholesky_solve(a, std::move(b));
}

Matrix inverse_spd(Matrix a, double tol) {
    const std::size_t n = a.rows();
    Matrix l = a;
    if (!cholesky(l, tol))
        fail(ErrorCode::RankDeficient, "matrix not positive definite to tolerance");
    Matrix inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec e(n, 0.0);
        e[j] = 1.0;
        Vec col = cholesky_solve(l, std::move(e));
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    inv.symmetrize();
    return inv;
}

Matrix inverse_lu(Matrix a, double tol) {
    const std::size_t n = a.rows();
    std::vector<std::size_t> perm(n);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) max_abs = std::max(max_abs, std::abs(a(i, j)));
    if (max_abs == 0.0) fail(ErrorCode::SingularBread, "zero matrix");

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        if (std::abs(a(piv, k)) <= tol * max_abs)
            fail(ErrorCode::SingularBread, "singular matrix in LU factorization");
        perm[k] = piv;
        if (piv != k)
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
        for (std::size_t i = k + 1; i < n; ++i) {
            a(i, k) /= a(k, k);
            double lik = a(i, k);
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= lik * a(k, j);
        }
    }

    Matrix inv(n, n);
    for (std::size_t col = 0; col < n; ++col) {
        Vec b(n, 0.0);
        b[col] = 1.0;
        for (std::size_t k = 0; k < n; ++k)
            if (perm[k] != k) std::swap(b[k], b[perm[k]]);
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
            b[i] = s;
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = b[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= a(ii, k) * b[k];
            b[ii] = s / a(ii, ii);
        }
        for (std::size_t i = 0; i < n; ++i) inv(i, col) = b[i];
    }
    return inv;
}

void eigen_sym(const Matrix& a_in, Vec& eigenvalues, Matrix& eigenvectors) {
    const std::size_t n = a_in.rows();
    Matrix a = a_in;
    a.symmetrize();
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigenvalues.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);
    eigenvectors = v;
}

Matrix psd_floor(Matrix a) {
    a.symmetrize();
    Vec evals;
    Matrix evecs;
    eigen_sym(a, evals, evecs);
    bool any_negative = false;
    for (double e : evals)
        if (e < 0.0) any_negative = true;
    if (!any_negative) return a;
    const std::size_t n = a.rows();
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += evecs(i, k) * std::max(evals[k], 0.0) * evecs(j, k);
            out(i, j) = s;
        }
    out.symmetrize();
    return out;
}

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::Separation: return "Separation";
        case ErrorCode::NonBinaryResponse: return "NonBinaryResponse";
        case ErrorCode::SpecMismatch: return "SpecMismatch";
        case ErrorCode::WeakInstrument: return "WeakInstrument";
        case ErrorCode::NoRoot: return "NoRoot";
        case ErrorCode::MultipleRootsAmbiguous: return "MultipleRootsAmbiguous";
        case ErrorCode::NegativeDiscriminant: return "NegativeDiscriminant";
        case ErrorCode::DegenerateTable: return "DegenerateTable";
        case ErrorCode::Nonconvergence: return "Nonconvergence";
        case ErrorCode::SingularBread: return "SingularBread";
        case ErrorCode::MissingLevel: return "MissingLevel";
        case ErrorCode::NoExactSolution: return "NoExactSolution";
        case ErrorCode::BracketFailure: return "BracketFailure";
        case ErrorCode::MissingColumn: return "MissingColumn";
        case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
        case ErrorCode::NonBinaryOutcome: return "NonBinaryOutcome";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace ivor
