#include <cmath>
#include <numbers>

#include "doctest.h"
#include "infosem/numkit.hpp"

using namespace infosem;

namespace {

// test-side oracle: recursive cofactor expansion
double det_cofactor(const Matrix& m) {
    const std::size_t n = m.rows();
    if (n == 1) return m(0, 0);
    double det = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        Matrix minor(n - 1, n - 1);
        for (std::size_t r = 1; r < n; ++r) {
            std::size_t cc = 0;
            for (std::size_t c = 0; c < n; ++c) {
                if (c == j) continue;
                minor(r - 1, cc++) = m(r, c);
            }
        }
        det += (j % 2 == 0 ? 1.0 : -1.0) * m(0, j) * det_cofactor(minor);
    }
    return det;
}

// rebuild P*M from the stored swap sequence and compare against L*U
double reconstruction_error(const Matrix& m, const LuFactorization& f) {
    const std::size_t n = m.rows();
    Matrix pm = m;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t p = f.pivots[k];
        if (p != k)
            for (std::size_t j = 0; j < n; ++j) std::swap(pm(k, j), pm(p, j));
    }
    Matrix l = Matrix::identity(n);
    Matrix u(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i > j) l(i, j) = f.lu(i, j);
            else u(i, j) = f.lu(i, j);
        }
    const Matrix lu = matmul(l, u);
    return frobenius_norm(sub(pm, lu)) / std::max(frobenius_norm(m), 1e-300);
}

Matrix random_well_conditioned(std::size_t n, Rng& rng) {
    Matrix m = standard_normal(rng, n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) += static_cast<double>(n) + 1.0;
    return m;
}

} // namespace

TEST_CASE("lu_factor identity") {
    const Matrix id = Matrix::identity(3);
    const LuFactorization f = lu_factor(id);
    CHECK(f.sign == 1);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(f.lu(i, j) == (i == j ? 1.0 : 0.0));
    CHECK(reconstruction_error(id, f) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lu_factor 2x2 determinant") {
    Matrix m(2, 2);
    m(0, 0) = 2; m(0, 1) = 1; m(1, 0) = 1; m(1, 1) = 1;
    const LuFactorization f = lu_factor(m);
    // det = 2*1 - 1*1 = 1 by cofactor expansion
    CHECK(std::fabs(std::exp(log_abs_det(f)) - 1.0) < 1e-12);
    CHECK(reconstruction_error(m, f) < 1e-10);
}

TEST_CASE("lu_factor rank-deficient matrix") {
    Matrix m(2, 2, 1.0);
    CHECK_THROWS_AS(lu_factor(m), SingularMatrix);
}

TEST_CASE("lu_factor rejects non-square and non-finite") {
    CHECK_THROWS_AS(lu_factor(Matrix(2, 3)), DimensionMismatch);
    Matrix bad(2, 2, 1.0);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(lu_factor(bad), NonFiniteValue);
}

TEST_CASE("lu reconstruction property over random matrices") {
    Rng rng(42);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(20);
        const Matrix m = random_well_conditioned(n, rng);
        CHECK(reconstruction_error(m, lu_factor(m)) < 1e-10);
    }
}

TEST_CASE("solve identity and scaling") {
    Matrix b(3, 2);
    Rng rng(7);
    for (double& v : b.data()) v = rng.normal();
    const Matrix x_id = solve(lu_factor(Matrix::identity(3)), b);
    for (std::size_t i = 0; i < b.size(); ++i)
        CHECK(x_id.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-15));

    const Matrix two_id = scale(Matrix::identity(3), 2.0);
    const Matrix ones(3, 1, 1.0);
    const Matrix x = solve(lu_factor(two_id), ones);
    for (double v : x.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("solve residual on random systems") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(19);
        const Matrix m = random_well_conditioned(n, rng);
        const Matrix b = standard_normal(rng, n, 3);
        const Matrix x = solve(lu_factor(m), b);
        const Matrix r = sub(matmul(m, x), b);
        CHECK(max_abs(r) <= 1e-9 * std::max(max_abs(b), 1.0));
    }
}

TEST_CASE("solve_transposed matches solving the transposed system") {
    Rng rng(13);
    const Matrix m = random_well_conditioned(6, rng);
    const Matrix b = standard_normal(rng, 6, 2);
    const Matrix via_reuse = solve_transposed(lu_factor(m), b);
    const Matrix direct = solve(lu_factor(transpose(m)), b);
    CHECK(frobenius_norm(sub(via_reuse, direct)) < 1e-9);
}

TEST_CASE("solve dimension mismatch") {
    const LuFactorization f = lu_factor(Matrix::identity(3));
    CHECK_THROWS_AS(solve(f, Matrix(4, 1, 1.0)), DimensionMismatch);
}

TEST_CASE("log_abs_det basics") {
    CHECK(log_abs_det(lu_factor(Matrix::identity(4))) == doctest::Approx(0.0).epsilon(1e-15));

    Matrix d(2, 2);
    d(0, 0) = 2.0; d(1, 1) = 3.0;
    CHECK(log_abs_det(lu_factor(d)) == doctest::Approx(std::log(6.0)).epsilon(1e-14));

    Matrix swapped(2, 2);
    swapped(0, 1) = 1.0; swapped(1, 0) = 1.0;
    CHECK(log_abs_det(lu_factor(swapped)) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("log_abs_det against cofactor oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const Matrix m = random_well_conditioned(n, rng);
        const double expected = std::log(std::fabs(det_cofactor(m)));
        CHECK(log_abs_det(lu_factor(m)) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("laplace_logpdf values") {
    CHECK(laplace_logpdf(0, 0, 1) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    CHECK(laplace_logpdf(1, 0, 0.5) == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(laplace_logpdf(-1, 1, 1) == doctest::Approx(-std::log(2.0) - 2.0).epsilon(1e-14));
    CHECK_THROWS_AS(laplace_logpdf(0, 0, 0), InvalidScale);
    CHECK_THROWS_AS(laplace_logpdf(0, 0, -1), InvalidScale);
}

TEST_CASE("laplace density integrates to one") {
    for (double sigma : {0.3, 1.0, 2.5}) {
        const double lo = -50.0 * sigma, hi = 50.0 * sigma;
        const std::size_t steps = 200000;
        const double h = (hi - lo) / static_cast<double>(steps);
        double integral = 0.0;
        for (std::size_t i = 0; i <= steps; ++i) {
            const double x = lo + h * static_cast<double>(i);
            const double f = std::exp(laplace_logpdf(x, 0.0, sigma));
            integral += (i == 0 || i == steps) ? 0.5 * f : f;
        }
        integral *= h;
        CHECK(std::fabs(integral - 1.0) < 1e-3);
    }
}

TEST_CASE("gaussian_logpdf values") {
    CHECK(gaussian_logpdf(0, 0, 1) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
    CHECK(gaussian_logpdf(1, 1, 2) ==
          doctest::Approx(-0.5 * std::log(8.0 * std::numbers::pi)).epsilon(1e-14));
    // direct evaluation of the closed form at x = ln 19
    const double x = 2.944439;
    const double expected = -0.5 * std::log(2.0 * std::numbers::pi * 0.01) - x * x / 0.02;
    CHECK(gaussian_logpdf(x, 0.0, 0.1) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(gaussian_logpdf(x, 0.0, 0.1) == doctest::Approx(-432.10).epsilon(1e-4));
    CHECK_THROWS_AS(gaussian_logpdf(0, 0, 0), InvalidScale);
}

TEST_CASE("standard_normal basics") {
    Rng rng(5);
    CHECK(standard_normal(rng, 0).size() == 0);

    Rng a(123), b(123);
    const Matrix va = standard_normal(a, 50);
    const Matrix vb = standard_normal(b, 50);
    CHECK(va == vb);
}

TEST_CASE("standard_normal moments over a large sample") {
    Rng rng(2024);
    const std::size_t n = 1000000;
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.normal();
        mean += v;
        sq += v * v;
    }
    mean /= static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::fabs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::fabs(var - 1.0) < 0.01);
}

TEST_CASE("distinct seeds give distinct streams") {
    Rng a(1), b(2);
    bool differ = false;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() != b.next_u64()) {
            differ = true;
            break;
        }
    CHECK(differ);
}

TEST_CASE("derived streams are deterministic and independent of each other") {
    Rng base(77);
    Rng c1 = base.derive(0);
    Rng c2 = base.derive(1);
    Rng c1_again = Rng(77).derive(0);
    CHECK(c1.next_u64() == c1_again.next_u64());
    CHECK(c1.next_u64() != c2.next_u64());
}
