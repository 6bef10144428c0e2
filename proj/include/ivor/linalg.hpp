#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ivor {

using Vec = std::vector<double>;

// Small dense row-major matrix. Dimensions here are parameter counts
// (single digits), not subject counts; subject-length arrays live in Vec
// columns and go through the kernel layer.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }

    Matrix transposed() const;
    void symmetrize();

    const Vec& data() const { return data_; }

private:
    std::size_t rows_ = 0, cols_ = 0;
    Vec data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vec matvec(const Matrix& a, std::span<const double> x);

// Cholesky solve/inverse for symmetric positive definite systems; throws
// Error(RankDeficient) when a pivot falls below tol relative to the
// largest diagonal.
Vec solve_spd(Matrix a, Vec b, double tol = 1e-12);
Matrix inverse_spd(Matrix a, double tol = 1e-12);

// LU with partial pivoting for general square systems (sandwich bread is
// block-triangular, not symmetric). Throws Error(SingularBread).
Matrix inverse_lu(Matrix a, double tol = 1e-13);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations;
// used only to floor sandwich outputs at PSD.
void eigen_sym(const Matrix& a, Vec& eigenvalues, Matrix& eigenvectors);

// Symmetrize and clip negative eigenvalues to zero.
Matrix psd_floor(Matrix a);

}  // namespace ivor
