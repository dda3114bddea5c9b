#include <cmath>
#include <random>

#include "doctest.h"
#include "ivcm/error.hpp"
#include "ivcm/splines.hpp"

using ivcm::SplineBasis;

TEST_CASE("piecewise-constant basis is an indicator system") {
  const auto b = SplineBasis::equal(1, 2, 10.0);
  CHECK(b.eval(3.0) == Eigen::Vector2d(1.0, 0.0));
  CHECK(b.eval(7.0) == Eigen::Vector2d(0.0, 1.0));
  // Right-continuous at the interior knot; t = tau closes the last span.
  CHECK(b.eval(5.0) == Eigen::Vector2d(0.0, 1.0));
  CHECK(b.eval(10.0) == Eigen::Vector2d(0.0, 1.0));
}

TEST_CASE("cubic Bernstein endpoints") {
  const auto b = SplineBasis::equal(4, 4, 2.0);
  CHECK(b.eval(0.0) == Eigen::Vector4d(1, 0, 0, 0));
  CHECK(b.eval(2.0).isApprox(Eigen::Vector4d(0, 0, 0, 1)));
}

TEST_CASE("partition of unity, local support and nonnegativity at random points") {
  std::mt19937_64 rng(3);
  for (int order : {1, 2, 3, 4, 5}) {
    for (int q : {order, order + 1, order + 6}) {
      const auto b = SplineBasis::equal(order, q, 7.5);
      std::uniform_real_distribution<double> u(0.0, 7.5);
      for (int r = 0; r < 200; ++r) {
        const double t = r == 0 ? 7.5 : u(rng);
        const auto v = b.eval(t);
        CHECK(std::abs(v.sum() - 1.0) <= 1e-12);
        CHECK(v.minCoeff() >= 0.0);
        CHECK((v.array() != 0.0).count() <= order);
        for (int k = 0; k < q; ++k) {
          const auto& kn = b.knots();
          if (t < kn[static_cast<std::size_t>(k)] || t > kn[static_cast<std::size_t>(k + order)]) CHECK(v[k] == 0.0);
        }
        if (order > 1) CHECK(std::abs(b.derivative(t, 1).sum()) <= 1e-10);
      }
    }
  }
}

TEST_CASE("derivatives: k = 0 matches eval; second derivative matches finite differences") {
  const auto b = SplineBasis::equal(4, 10, 10.0);
  CHECK(b.derivative(3.3, 0) == b.eval(3.3));
  const double h = 1e-5;
  for (double t : {0.4, 1.7, 3.14, 5.5, 8.01, 9.6}) {
    const Eigen::VectorXd fd = (b.eval(t + h) - 2.0 * b.eval(t) + b.eval(t - h)) / (h * h);
    CHECK((b.derivative(t, 2) - fd).cwiseAbs().maxCoeff() <= 1e-4);
    const Eigen::VectorXd fd1 = (b.eval(t + h) - b.eval(t - h)) / (2 * h);
    CHECK((b.derivative(t, 1) - fd1).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("error paths") {
  const auto b = SplineBasis::equal(3, 6, 1.0);
  CHECK_THROWS_AS(b.eval(-0.1), ivcm::Error);
  CHECK_THROWS_AS(b.eval(1.0001), ivcm::Error);
  try {
    b.derivative(0.5, 3);
    FAIL("expected throw");
  } catch (const ivcm::Error& e) {
    CHECK(e.code() == ivcm::ErrorCode::kDerivativeOrderTooHigh);
  }
  CHECK_THROWS_AS(b.penalty_gram(3), ivcm::Error);
}

TEST_CASE("penalty Gram of linear hats") {
  const auto b = SplineBasis::equal(2, 2, 1.0);
  const Eigen::MatrixXd g = b.penalty_gram(1);
  Eigen::Matrix2d expected;
  expected << 1, -1, -1, 1;
  CHECK((g - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("penalty Gram is PSD, banded and annihilates low-degree polynomials") {
  for (int order : {3, 4, 5}) {
    for (int k = 1; k < order; ++k) {
      const auto b = SplineBasis::equal(order, order + 7, 10.0);
      const Eigen::MatrixXd g = b.penalty_gram(k);
      const int q = b.dimension();
      CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
      const auto ev = es.eigenvalues();
      CHECK(ev.minCoeff() >= -1e-10 * ev.maxCoeff());
      int rank = 0;
      for (int i = 0; i < q; ++i) rank += ev[i] > 1e-9 * ev.maxCoeff();
      CHECK(rank == q - k);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j)
          if (std::abs(i - j) > order - 1) CHECK(g(i, j) == 0.0);
      // Constant coefficients reproduce the constant function.
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(q);
      CHECK(std::abs(ones.dot(g * ones)) <= 1e-10 * ev.maxCoeff());
    }
  }
}

TEST_CASE("least-squares projection reproduces polynomials of degree < order") {
  for (int order : {2, 3, 4}) {
    const double tau = 5.0;
    const auto b = SplineBasis::equal(order, order + 5, tau);
    const int grid = 400;
    Eigen::MatrixXd design(grid + 1, b.dimension());
    Eigen::VectorXd y(grid + 1);
    for (int i = 0; i <= grid; ++i) {
      const double t = tau * i / grid;
      design.row(i) = b.eval(t).transpose();
      double p = 0.3;
      for (int deg = 1; deg < order; ++deg) p += std::pow(t - 1.1, deg) / (deg + 1.0);
      y[i] = p;
    }
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(y);
    CHECK((design * coef - y).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("quantile placement") {
  std::vector<double> times;
  for (int i = 0; i < 101; ++i) times.push_back(i * 0.1);
  const auto b = SplineBasis::quantile(4, 7, 10.0, times);
  CHECK(b.dimension() == 7);
  const auto interior = b.interior_knots();
  REQUIRE(interior.size() == 3);
  CHECK(interior[0] == doctest::Approx(2.5));
  CHECK(interior[1] == doctest::Approx(5.0));
  CHECK(interior[2] == doctest::Approx(7.5));
  CHECK(b.placement() == ivcm::KnotPlacement::kQuantile);

  // Heavily tied times collapse knots; the dimension shrinks.
  const std::vector<double> tied{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0};
  const auto small = SplineBasis::quantile(3, 8, 10.0, tied);
  CHECK(small.requested_dimension() == 8);
  CHECK(small.dimension() < 8);
}
