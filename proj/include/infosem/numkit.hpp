#pragma once

#include <cstdint>
#include <vector>

#include "infosem/errors.hpp"

namespace infosem {

// Dense row-major matrix of doubles. The one array type everything else
// builds on; vectors are n x 1 (or 1 x n) matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);

// Partial-pivoting LU factorization. `lu` stores L (unit diagonal, below)
// and U (on and above the diagonal) in one square matrix; `pivots[k]` is the
// row swapped into position k at step k.
struct LuFactorization {
    Matrix lu;
    std::vector<std::size_t> pivots;
    int sign = 1;
};

// Throws SingularMatrix when a pivot's magnitude falls below
// 1e-12 * (largest row infinity-norm of m) — a scale-invariant test.
LuFactorization lu_factor(const Matrix& m);

// Solve m * x = b for (possibly multi-column) b.
Matrix solve(const LuFactorization& f, const Matrix& b);
// Solve m^T * x = b reusing the factorization of m.
Matrix solve_transposed(const LuFactorization& f, const Matrix& b);

// ln|det m| = sum of ln|u_ii|.
double log_abs_det(const LuFactorization& f);

// log-density of Laplace(loc, scale) at x. Throws InvalidScale when scale <= 0.
double laplace_logpdf(double x, double loc, double scale);
// log-density of Normal(mean, std^2) at x. Throws InvalidScale when std <= 0.
double gaussian_logpdf(double x, double mean, double std_dev);

// Deterministic seeded random stream. Normal draws use the Box-Muller
// transform on 53-bit uniforms, so a given seed reproduces the same
// sequence within one build. Single-owner mutable state: give each worker
// its own instance.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    // uniform double in [0, 1)
    double uniform();
    // standard normal draw (Box-Muller, second value cached)
    double normal();
    // uniform index in [0, n)
    std::size_t uniform_index(std::size_t n);

    // Independent child stream; deterministic in (seed, stream).
    Rng derive(std::uint64_t stream) const;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t state_ = 0;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// n i.i.d. standard normal draws as an n x 1 matrix.
Matrix standard_normal(Rng& rng, std::size_t n);
Matrix standard_normal(Rng& rng, std::size_t rows, std::size_t cols);

} // namespace infosem
