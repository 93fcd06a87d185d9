#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pmdlab {

using numvec = std::vector<double>;

/// Dense row-major matrix. All model objects at desk scale are small, so a
/// flat vector with explicit indexing is sufficient and keeps every
/// computation an exact, ordered weighted sum.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    numvec& data() { return data_; }
    const numvec& data() const { return data_; }

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(data_.data() + i * cols_, cols_);
    }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    numvec data_;
};

double dot(const numvec& a, const numvec& b);
double norm2(const numvec& v);
double sup_norm(const numvec& v);
double sup_norm(const Matrix& m);
bool all_finite(const numvec& v);
bool all_finite(const Matrix& m);

numvec matvec(const Matrix& a, const numvec& x);
Matrix transpose(const Matrix& a);

/// Solves a x = b by LU factorisation with partial pivoting.
/// Throws std::runtime_error when a pivot vanishes (singular system).
numvec lu_solve(Matrix a, numvec b);

struct SymmetricEigen {
    numvec eigenvalues;   // ascending
    Matrix eigenvectors;  // column k pairs with eigenvalues[k]
    double max_residual;  // max_k |A v_k - lambda_k v_k|_inf
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
SymmetricEigen jacobi_eigensym(Matrix a);

/// log sum_i w_i exp(f_i) with max-shift stabilisation. Zero weights are
/// skipped so -inf logits under unsupported atoms are harmless.
double weighted_logsumexp(std::span<const double> f, std::span<const double> w);

}  // namespace pmdlab
