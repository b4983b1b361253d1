#include "infosem/numkit.hpp"

#include <cmath>
#include <numbers>

namespace infosem {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionMismatch(std::string(op) + ": shapes do not match");
}

} // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data()) v *= c;
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionMismatch("matmul: inner dimensions do not match");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j)
                out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            out(j, i) = a(i, j);
    return out;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::fabs(v));
    return m;
}

LuFactorization lu_factor(const Matrix& m) {
    if (m.rows() != m.cols())
        throw DimensionMismatch("lu_factor: matrix must be square");
    if (!m.all_finite())
        throw NonFiniteValue("lu_factor: matrix has non-finite entries");

    const std::size_t n = m.rows();
    LuFactorization f;
    f.lu = m;
    f.pivots.resize(n);
    f.sign = 1;

    // Scale-invariant singularity threshold.
    double max_row_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += std::fabs(m(i, j));
        max_row_norm = std::max(max_row_norm, row);
    }
    const double pivot_tol = 1e-12 * std::max(max_row_norm, 1e-300);

    Matrix& a = f.lu;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::fabs(a(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double cand = std::fabs(a(i, k));
            if (cand > best) { best = cand; p = i; }
        }
        if (best < pivot_tol)
            throw SingularMatrix("lu_factor: pivot below threshold at column " + std::to_string(k));
        f.pivots[k] = p;
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
            f.sign = -f.sign;
        }
        const double inv_pivot = 1.0 / a(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double l = a(i, k) * inv_pivot;
            a(i, k) = l;
            if (l == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
        }
    }
    return f;
}

Matrix solve(const LuFactorization& f, const Matrix& b) {
    const std::size_t n = f.lu.rows();
    if (b.rows() != n)
        throw DimensionMismatch("solve: rhs row count does not match");

    Matrix x = b;
    // apply row permutation
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t p = f.pivots[k];
        if (p != k)
            for (std::size_t j = 0; j < x.cols(); ++j) std::swap(x(k, j), x(p, j));
    }
    // forward substitution, L unit lower
    for (std::size_t k = 1; k < n; ++k)
        for (std::size_t i = 0; i < k; ++i) {
            const double l = f.lu(k, i);
            if (l == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) x(k, j) -= l * x(i, j);
        }
    // back substitution, U upper
    for (std::size_t k = n; k-- > 0;) {
        for (std::size_t i = k + 1; i < n; ++i) {
            const double u = f.lu(k, i);
            if (u == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) x(k, j) -= u * x(i, j);
        }
        const double inv = 1.0 / f.lu(k, k);
        for (std::size_t j = 0; j < x.cols(); ++j) x(k, j) *= inv;
    }
    return x;
}

Matrix solve_transposed(const LuFactorization& f, const Matrix& b) {
    // P m = L U  =>  m^T = U^T L^T P, so solve U^T y = b, L^T z = y, x = P^T z.
    const std::size_t n = f.lu.rows();
    if (b.rows() != n)
        throw DimensionMismatch("solve_transposed: rhs row count does not match");

    Matrix x = b;
    // U^T is lower triangular with the U diagonal
    for (std::size_t k = 0; k < n; ++k) {
        const double inv = 1.0 / f.lu(k, k);
        for (std::size_t j = 0; j < x.cols(); ++j) x(k, j) *= inv;
        for (std::size_t i = k + 1; i < n; ++i) {
            const double u = f.lu(k, i);
            if (u == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= u * x(k, j);
        }
    }
    // L^T is unit upper triangular
    for (std::size_t k = n; k-- > 0;)
        for (std::size_t i = 0; i < k; ++i) {
            const double l = f.lu(k, i);
            if (l == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= l * x(k, j);
        }
    // undo the permutation in reverse order
    for (std::size_t k = n; k-- > 0;) {
        const std::size_t p = f.pivots[k];
        if (p != k)
            for (std::size_t j = 0; j < x.cols(); ++j) std::swap(x(k, j), x(p, j));
    }
    return x;
}

double log_abs_det(const LuFactorization& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.lu.rows(); ++i) s += std::log(std::fabs(f.lu(i, i)));
    return s;
}

double laplace_logpdf(double x, double loc, double scale) {
    if (!(scale > 0.0)) throw InvalidScale("laplace_logpdf: scale must be > 0");
    return -std::log(2.0 * scale) - std::fabs(x - loc) / scale;
}

double gaussian_logpdf(double x, double mean, double std_dev) {
    if (!(std_dev > 0.0)) throw InvalidScale("gaussian_logpdf: std must be > 0");
    const double z = (x - mean) / std_dev;
    return -0.5 * std::log(2.0 * std::numbers::pi * std_dev * std_dev) - 0.5 * z * z;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
    // warm the state so nearby seeds decorrelate immediately
    std::uint64_t s = seed;
    state_ = splitmix64(s) ^ splitmix64(s);
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw IndexOutOfRange("uniform_index: n must be positive");
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Rng Rng::derive(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    return Rng(splitmix64(s));
}

Matrix standard_normal(Rng& rng, std::size_t n) { return standard_normal(rng, n, 1); }

Matrix standard_normal(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

} // namespace infosem
