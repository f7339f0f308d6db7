#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "ngmfit/linalg.hpp"

using namespace ngmfit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("matrix construction and access") {
  Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  REQUIRE(a.rows() == 2);
  REQUIRE(a.cols() == 2);
  REQUIRE(a(0, 1) == 2.0);
  REQUIRE(a(1, 0) == 3.0);
  REQUIRE(a.square());

  Matrix b(2, 3, 1.5);
  REQUIRE(b.rows() == 2);
  REQUIRE(b.cols() == 3);
  REQUIRE(b(1, 2) == 1.5);
  REQUIRE_FALSE(b.square());

  REQUIRE_THROWS_AS(Matrix::from_rows({{1.0}, {1.0, 2.0}}), std::invalid_argument);
}

TEST_CASE("matrix equality and scaling") {
  Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  REQUIRE(a == Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
  Matrix s = a.scaled(2.0);
  REQUIRE(s(0, 0) == 2.0);
  REQUIRE(s(1, 1) == 8.0);
  REQUIRE_FALSE(a == s);
}

TEST_CASE("all_finite flags nan and inf") {
  Matrix a(2, 2, 1.0);
  REQUIRE(a.all_finite());
  a(0, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_FALSE(a.all_finite());
  a(0, 1) = std::numeric_limits<double>::infinity();
  REQUIRE_FALSE(a.all_finite());
}

TEST_CASE("matvec and matmul against hand values") {
  Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  std::vector<double> v{5.0, 6.0};
  std::vector<double> av = matvec(a, v);
  REQUIRE_THAT(av[0], WithinAbs(17.0, 1e-14));
  REQUIRE_THAT(av[1], WithinAbs(39.0, 1e-14));

  Matrix b = Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}});
  Matrix ab = matmul(a, b);
  REQUIRE(ab == Matrix::from_rows({{2.0, 1.0}, {4.0, 3.0}}));

  Matrix at = transpose(a);
  REQUIRE(at == Matrix::from_rows({{1.0, 3.0}, {2.0, 4.0}}));
}

TEST_CASE("gram matrix equals X^T X") {
  Matrix x = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  Matrix g = gram(x);
  REQUIRE(g.rows() == 2);
  REQUIRE_THAT(g(0, 0), WithinAbs(35.0, 1e-12));  // 1+9+25
  REQUIRE_THAT(g(0, 1), WithinAbs(44.0, 1e-12));  // 2+12+30
  REQUIRE_THAT(g(1, 0), WithinAbs(44.0, 1e-12));
  REQUIRE_THAT(g(1, 1), WithinAbs(56.0, 1e-12));  // 4+16+36
}

TEST_CASE("determinant of small matrices") {
  REQUIRE_THAT(determinant(Matrix::from_rows({{4.0}})), WithinAbs(4.0, 1e-14));
  REQUIRE_THAT(determinant(Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}})),
               WithinAbs(-2.0, 1e-12));
  // 3x3 cofactor expansion by hand: 2*(12-2) - 0 + 1*(1-0) = 21
  Matrix m = Matrix::from_rows({{2.0, 0.0, 1.0}, {1.0, 3.0, 2.0}, {0.0, 1.0, 4.0}});
  REQUIRE_THAT(determinant(m), WithinRel(21.0, 1e-12));
  // permutation matrix: det -1
  Matrix p = Matrix::from_rows({{0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}});
  REQUIRE_THAT(determinant(p), WithinAbs(-1.0, 1e-12));
  // singular
  Matrix s = Matrix::from_rows({{1.0, 2.0}, {2.0, 4.0}});
  REQUIRE_THAT(determinant(s), WithinAbs(0.0, 1e-12));
}

TEST_CASE("least squares solves a square system exactly") {
  Matrix a = Matrix::from_rows({{2.0, 1.0}, {1.0, 3.0}});
  // x = (1, 2): b = (4, 7)
  std::vector<double> x = solve_least_squares(a, {4.0, 7.0});
  REQUIRE_THAT(x[0], WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(x[1], WithinAbs(2.0, 1e-12));
}

TEST_CASE("least squares matches the normal equations on a tall system") {
  // rows (t, 1) fitting y = 2t + 3 plus a perturbation on one row
  Matrix x = Matrix::from_rows({{0.0, 1.0}, {1.0, 1.0}, {2.0, 1.0}, {3.0, 1.0}});
  std::vector<double> y{3.0, 5.1, 7.0, 9.0};
  std::vector<double> beta = solve_least_squares(x, y);

  // test-local oracle: solve the 2x2 normal equations with Cramer's rule
  double sxx = 0, sx1 = 0, s11 = 0, sxy = 0, s1y = 0;
  for (int i = 0; i < 4; ++i) {
    double t = x(static_cast<std::size_t>(i), 0);
    sxx += t * t;
    sx1 += t;
    s11 += 1.0;
    sxy += t * y[static_cast<std::size_t>(i)];
    s1y += y[static_cast<std::size_t>(i)];
  }
  double det = sxx * s11 - sx1 * sx1;
  double b0 = (sxy * s11 - sx1 * s1y) / det;
  double b1 = (sxx * s1y - sxy * sx1) / det;
  REQUIRE_THAT(beta[0], WithinAbs(b0, 1e-10));
  REQUIRE_THAT(beta[1], WithinAbs(b1, 1e-10));
}

TEST_CASE("least squares residual is orthogonal to the columns") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix x(20, 3);
  std::vector<double> y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = unif(rng);
    y[i] = unif(rng);
  }
  std::vector<double> beta = solve_least_squares(x, y);
  for (std::size_t j = 0; j < 3; ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      double fit = 0.0;
      for (std::size_t k = 0; k < 3; ++k) fit += x(i, k) * beta[k];
      dot += x(i, j) * (y[i] - fit);
    }
    REQUIRE_THAT(dot, WithinAbs(0.0, 1e-9));
  }
}

TEST_CASE("least squares rejects rank-deficient systems") {
  Matrix x = Matrix::from_rows({{1.0, 2.0}, {2.0, 4.0}, {3.0, 6.0}});
  REQUIRE_THROWS_AS(solve_least_squares(x, {1.0, 2.0, 3.0}), std::runtime_error);
  Matrix wide = Matrix::from_rows({{1.0, 2.0, 3.0}});
  REQUIRE_THROWS_AS(solve_least_squares(wide, {1.0}), std::invalid_argument);
}

TEST_CASE("symmetric eigenvalues of known matrices") {
  std::vector<double> ev = symmetric_eigenvalues(Matrix::from_rows({{2.0, 1.0}, {1.0, 2.0}}));
  REQUIRE(ev.size() == 2);
  REQUIRE_THAT(ev[0], WithinAbs(1.0, 1e-10));
  REQUIRE_THAT(ev[1], WithinAbs(3.0, 1e-10));

  Matrix d = Matrix::from_rows({{5.0, 0.0, 0.0}, {0.0, -2.0, 0.0}, {0.0, 0.0, 7.0}});
  ev = symmetric_eigenvalues(d);
  REQUIRE_THAT(ev[0], WithinAbs(-2.0, 1e-10));
  REQUIRE_THAT(ev[1], WithinAbs(5.0, 1e-10));
  REQUIRE_THAT(ev[2], WithinAbs(7.0, 1e-10));

  // trace and determinant invariants on a random symmetric matrix
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix s(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i; j < 4; ++j) {
      double v = unif(rng);
      s(i, j) = v;
      s(j, i) = v;
    }
  ev = symmetric_eigenvalues(s);
  double trace = 0.0, sum = 0.0, prod = 1.0;
  for (std::size_t i = 0; i < 4; ++i) trace += s(i, i);
  for (double e : ev) {
    sum += e;
    prod *= e;
  }
  REQUIRE_THAT(sum, WithinAbs(trace, 1e-9));
  REQUIRE_THAT(prod, WithinAbs(determinant(s), 1e-9));
}

TEST_CASE("power iteration spectral radius") {
  REQUIRE_THAT(power_iteration_radius(Matrix::from_rows({{2.0, 1.0}, {1.0, 2.0}})),
               WithinAbs(3.0, 1e-9));
  // tridiagonal: eigenvalues 2 + sqrt(2), 2, 2 - sqrt(2)
  Matrix t = Matrix::from_rows({{2.0, 1.0, 0.0}, {1.0, 2.0, 1.0}, {0.0, 1.0, 2.0}});
  REQUIRE_THAT(power_iteration_radius(t), WithinAbs(2.0 + std::sqrt(2.0), 1e-9));
  // zero matrix
  REQUIRE_THAT(power_iteration_radius(Matrix(3, 3)), WithinAbs(0.0, 1e-12));
}
