#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ivcm/error.hpp"
#include "ivcm/vcm.hpp"

using namespace ivcm;

namespace {

// Random regression data with covariates (1, x1, ..., x_{d-1}).
RegressionData make_data(std::mt19937_64& rng, int n_rows, int d, double tau = 10.0, bool unit_weights = false) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, tau);
  std::uniform_real_distribution<double> wdist(0.2, 3.0);
  RegressionData data;
  data.tau = tau;
  data.y.resize(n_rows);
  data.x.resize(n_rows, d);
  data.w.resize(n_rows);
  for (int r = 0; r < n_rows; ++r) {
    data.t.push_back(unif(rng));
    data.x(r, 0) = 1.0;
    for (int j = 1; j < d; ++j) data.x(r, j) = normal(rng);
    data.y[r] = std::sin(data.t.back()) + data.x.row(r).sum() * 0.3 + normal(rng);
    data.w[r] = unit_weights ? 1.0 : wdist(rng);
    data.subject.push_back(static_cast<std::size_t>(r / 3));
  }
  data.n_subjects = static_cast<std::size_t>((n_rows + 2) / 3);
  return data;
}

Eigen::MatrixXd dense_z(const Design& design) {
  Eigen::MatrixXd z(design.rows(), design.cols());
  for (std::size_t r = 0; r < design.rows(); ++r) z.row(static_cast<Eigen::Index>(r)) = design.row(r).z.transpose();
  return z;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& a) { return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()); }

// Dense oracle for the GCV score: builds A_w explicitly.
double dense_gcv(const Design& design, const Eigen::VectorXd& eta) {
  const Eigen::MatrixXd z = dense_z(design);
  const Eigen::VectorXd sw = design.w().cwiseSqrt();
  const Eigen::MatrixXd s = Penalty::for_basis(design.basis(), eta).matrix();
  const Eigen::MatrixXd m = z.transpose() * design.w().asDiagonal() * z + 0.5 * s;
  const Eigen::MatrixXd aw = sw.asDiagonal() * z * m.inverse() * z.transpose() * sw.asDiagonal();
  const auto n = static_cast<Eigen::Index>(design.rows());
  const Eigen::MatrixXd i_minus = Eigen::MatrixXd::Identity(n, n) - aw;
  const Eigen::VectorXd yw = sw.cwiseProduct(design.y());
  const double num = (i_minus * yw).squaredNorm() / static_cast<double>(n);
  const double den = i_minus.trace() / static_cast<double>(n);
  return num / (den * den);
}

}  // namespace

TEST_CASE("design rows use covariate-major Kronecker ordering") {
  RegressionData data;
  data.tau = 1.0;
  data.t = {0.75, 0.0};
  data.y = Eigen::Vector2d(1.0, 2.0);
  data.x.resize(2, 2);
  data.x << 1.0, 0.0, 1.0, 2.0;
  data.w = Eigen::Vector2d::Ones();
  data.subject = {0, 1};
  data.n_subjects = 2;
  const auto basis = SplineBasis::equal(2, 2, 1.0);
  const Design design(data, basis);
  CHECK(design.row(0).z.isApprox(Eigen::Vector4d(0.25, 0.75, 0.0, 0.0)));
  CHECK(design.row(1).z.isApprox(Eigen::Vector4d(1.0, 0.0, 2.0, 0.0)));
  CHECK(design.row(1).w == 1.0);

  RegressionData one = data;
  one.x = Eigen::MatrixXd::Ones(2, 1);
  CHECK(Design(one, basis).row(0).z.isApprox(Eigen::Vector2d(0.25, 0.75)));

  RegressionData bad = data;
  bad.w = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(Design(bad, basis), Error);
}

TEST_CASE("single constant basis function gives the weighted mean") {
  std::mt19937_64 rng(1);
  auto data = make_data(rng, 40, 1);
  const auto fit = solve_wls(Design(data, SplineBasis::equal(1, 1, data.tau)));
  CHECK(fit.a_hat(0, 0) == doctest::Approx(data.w.dot(data.y) / data.w.sum()).epsilon(1e-13));
}

TEST_CASE("unit weights and no penalty reproduce an independent QR least-squares solve") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const auto data = make_data(rng, 200, 3, 10.0, true);
    const Design design(data, SplineBasis::equal(4, 8, data.tau));
    const auto fit = solve_wls(design);
    const Eigen::VectorXd qr = dense_z(design).colPivHouseholderQr().solve(data.y);
    CHECK((vec(fit.a_hat) - qr).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK_FALSE(fit.ridge_applied);
  }
}

TEST_CASE("huge roughness penalty converges to the weighted linear regression") {
  std::mt19937_64 rng(3);
  const auto data = make_data(rng, 300, 1);
  const Design design(data, SplineBasis::equal(4, 10, data.tau));
  const auto fit = solve_wls(design, Penalty::for_basis(design.basis(), Eigen::VectorXd::Constant(1, 1e10)));
  // Oracle: weighted least squares on (1, t).
  Eigen::MatrixXd lin(data.rows(), 2);
  for (std::size_t r = 0; r < data.rows(); ++r) lin.row(static_cast<Eigen::Index>(r)) << 1.0, data.t[r];
  const Eigen::VectorXd sw = data.w.cwiseSqrt();
  const Eigen::Vector2d coef = (sw.asDiagonal() * lin).colPivHouseholderQr().solve(sw.cwiseProduct(data.y));
  double sup = 0.0;
  for (double t = 0.0; t <= 10.0; t += 0.05) sup = std::max(sup, std::abs(eval_beta(fit, t)[0] - coef[0] - coef[1] * t));
  CHECK(sup <= 1e-4);
}

TEST_CASE("normal equations hold on random penalized fits") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> log_eta(-4.0, 4.0);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + rep % 3;
    const auto data = make_data(rng, 120 + rep, d);
    const auto basis = SplineBasis::equal(3 + rep % 2, 5 + rep % 6, data.tau);
    const Design design(data, basis);
    Eigen::VectorXd eta(d);
    for (int j = 0; j < d; ++j) eta[j] = rep % 5 == 0 ? 0.0 : std::pow(10.0, log_eta(rng));
    const Penalty penalty = Penalty::for_basis(basis, eta);
    const auto fit = solve_wls(design, penalty);
    const Eigen::MatrixXd z = dense_z(design);
    const Eigen::VectorXd zwy = z.transpose() * data.w.cwiseProduct(data.y);
    const Eigen::VectorXd lhs = (z.transpose() * data.w.asDiagonal() * z + 0.5 * penalty.matrix()) * vec(fit.a_hat);
    CHECK((lhs - zwy).cwiseAbs().maxCoeff() <= 1e-8 * zwy.cwiseAbs().maxCoeff());
    // Weighted residual orthogonality: Z'W R = (S/2) vec(A).
    const Eigen::VectorXd r = residuals(data, fit);
    const Eigen::VectorXd zwr = z.transpose() * data.w.cwiseProduct(r);
    const Eigen::VectorXd half_s = 0.5 * penalty.matrix() * vec(fit.a_hat);
    CHECK((zwr - half_s).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, half_s.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("row order does not change the fit") {
  std::mt19937_64 rng(5);
  const auto data = make_data(rng, 150, 2);
  auto shuffled = data;
  std::vector<std::size_t> perm(data.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const auto p = static_cast<Eigen::Index>(perm[k]);
    shuffled.t[k] = data.t[perm[k]];
    shuffled.y[i] = data.y[p];
    shuffled.x.row(i) = data.x.row(p);
    shuffled.w[i] = data.w[p];
  }
  const auto basis = SplineBasis::equal(4, 7, data.tau);
  const Eigen::Vector2d eta(0.1, 3.0);
  const auto a = solve_wls(Design(data, basis), Penalty::for_basis(basis, eta));
  const auto b = solve_wls(Design(shuffled, basis), Penalty::for_basis(basis, eta));
  CHECK((a.a_hat - b.a_hat).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("effective degrees of freedom decrease as any penalty grows") {
  std::mt19937_64 rng(6);
  const auto data = make_data(rng, 200, 2);
  const auto basis = SplineBasis::equal(4, 9, data.tau);
  const Design design(data, basis);
  for (int j = 0; j < 2; ++j) {
    double prev = std::numeric_limits<double>::infinity();
    for (double eta : TuningGrid::default_etas()) {
      Eigen::VectorXd e = Eigen::VectorXd::Constant(2, 0.5);
      e[j] = eta;
      const double df = solve_wls(design, Penalty::for_basis(basis, e)).effective_df;
      CHECK(df <= prev + 1e-9);
      prev = df;
    }
  }
}

TEST_CASE("GCV score") {
  std::mt19937_64 rng(7);
  SUBCASE("matches the dense hat-matrix oracle") {
    const auto data = make_data(rng, 30, 2);
    const Design design(data, SplineBasis::equal(3, 3, data.tau));
    REQUIRE(design.cols() == 6);
    for (double eta : {0.0, 0.01, 1.0, 100.0}) {
      const Eigen::Vector2d e(eta, 2 * eta);
      CHECK(gcv_score(design, e) == doctest::Approx(dense_gcv(design, e)).epsilon(1e-10));
    }
  }
  SUBCASE("zero for noiseless data in the spline span") {
    auto data = make_data(rng, 80, 1);
    const auto basis = SplineBasis::equal(4, 6, data.tau);
    const Eigen::VectorXd coef = Eigen::VectorXd::LinSpaced(6, -1.0, 2.0).array().sin();
    for (std::size_t r = 0; r < data.rows(); ++r) data.y[static_cast<Eigen::Index>(r)] = basis.eval(data.t[r]).dot(coef);
    const Design design(data, basis);
    CHECK(gcv_score(design, Eigen::VectorXd::Zero(1)) <= 1e-20);
    const auto fit = solve_wls(design);
    CHECK(residuals(data, fit).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("scaling the weights by kappa scales the score by kappa at eta = 0") {
    const auto data = make_data(rng, 100, 2);
    auto scaled = data;
    const double kappa = 7.5;
    scaled.w *= kappa;
    const auto basis = SplineBasis::equal(4, 7, data.tau);
    const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
    CHECK(gcv_score(Design(scaled, basis), zero) / gcv_score(Design(data, basis), zero) ==
          doctest::Approx(kappa).epsilon(1e-10));
    // With penalties, the same holds once eta is scaled along with the weights.
    const Eigen::Vector2d eta(0.3, 5.0);
    CHECK(gcv_score(Design(scaled, basis), kappa * eta) / gcv_score(Design(data, basis), eta) ==
          doctest::Approx(kappa).epsilon(1e-9));
    const auto eff = GcvSampleSize::kEffective;
    CHECK(gcv_score(Design(scaled, basis), kappa * eta, 2, eff) / gcv_score(Design(data, basis), eta, 2, eff) ==
          doctest::Approx(kappa).epsilon(1e-9));
  }
  SUBCASE("effective sample size") {
    auto data = make_data(rng, 40, 2);
    const auto basis = SplineBasis::equal(3, 4, data.tau);
    const Eigen::Vector2d eta(0.5, 0.05);
    const Design weighted(data, basis);
    const double sw = data.w.sum();
    const double n_eff = sw * sw / data.w.squaredNorm();
    const Eigen::MatrixXd z = dense_z(weighted);
    const Eigen::MatrixXd m = z.transpose() * data.w.asDiagonal() * z + 0.5 * Penalty::for_basis(basis, eta).matrix();
    const Eigen::VectorXd a = m.ldlt().solve(z.transpose() * data.w.asDiagonal() * data.y);
    const double df = m.ldlt().solve(z.transpose() * data.w.asDiagonal() * z).trace();
    const Eigen::VectorXd r = data.y - z * a;
    const double expected = (r.cwiseProduct(r).dot(data.w) / 40.0) / std::pow(1.0 - df / n_eff, 2);
    CHECK(gcv_score(weighted, eta, 2, GcvSampleSize::kEffective) == doctest::Approx(expected).epsilon(1e-10));
    data.w.setConstant(3.0);
    const Design flat(data, basis);
    CHECK(gcv_score(flat, eta, 2, GcvSampleSize::kEffective) ==
          doctest::Approx(gcv_score(flat, eta)).epsilon(1e-12));
  }
}

TEST_CASE("select_tuning") {
  std::mt19937_64 rng(8);
  SUBCASE("single-point grid returns that point") {
    const auto data = make_data(rng, 120, 2);
    TuningGrid grid;
    grid.orders = {3};
    grid.dimensions = {6};
    grid.etas = {0.5};
    const auto res = select_tuning(data, grid);
    CHECK(res.order == 3);
    CHECK(res.dimension == 6);
    CHECK(res.eta == Eigen::Vector2d(0.5, 0.5));
  }
  SUBCASE("noiseless spline data is interpolated") {
    auto data = make_data(rng, 150, 2);
    const auto truth = SplineBasis::equal(4, 7, data.tau);
    const Eigen::VectorXd c0 = Eigen::VectorXd::LinSpaced(7, 0.0, 3.0).array().cos();
    const Eigen::VectorXd c1 = Eigen::VectorXd::LinSpaced(7, -2.0, 1.0).array().square();
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto b = truth.eval(data.t[r]);
      const auto i = static_cast<Eigen::Index>(r);
      data.y[i] = b.dot(c0) + data.x(i, 1) * b.dot(c1);
    }
    TuningGrid grid;
    grid.orders = {3, 4};
    grid.dimensions = {5, 6, 7, 8};
    const auto res = select_tuning(data, grid);
    CHECK(res.gcv <= 1e-20);
    const auto basis = tuned_basis(data, res, grid.placement);
    const auto fit = solve_wls(Design(data, basis), Penalty::for_basis(basis, res.eta));
    CHECK(residuals(data, fit).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("trace replays independently computed scores and the minimum is selected") {
    const auto data = make_data(rng, 160, 2);
    TuningGrid grid;
    grid.orders = {3, 4};
    grid.dimensions = {5, 8};
    const auto res = select_tuning(data, grid);
    double min_score = std::numeric_limits<double>::infinity();
    for (const auto& point : res.trace) {
      const auto basis = SplineBasis::equal(point.order, point.dimension, data.tau);
      CHECK(gcv_score(Design(data, basis), point.eta, 2, grid.sample_size) == doctest::Approx(point.score).epsilon(1e-12));
      min_score = std::min(min_score, point.score);
    }
    CHECK(res.gcv == min_score);
  }
  SUBCASE("default dimension grid follows the sample-size rule") {
    TuningGrid grid;
    CHECK(grid.dimensions_for(3, 1200, 3) == std::vector<int>{4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    CHECK(grid.dimensions_for(4, 96, 3) == std::vector<int>{5, 6, 7, 8});
    CHECK(TuningGrid::default_etas().size() == 14);
  }
}

TEST_CASE("eval_beta and residuals") {
  std::mt19937_64 rng(9);
  const auto basis = SplineBasis::equal(4, 8, 10.0);
  CoefficientFit fit{Eigen::MatrixXd::Zero(8, 2), basis, Eigen::VectorXd::Zero(2), {}, {}, {}, 0.0, false};
  CHECK(eval_beta(fit, 3.0) == Eigen::Vector2d::Zero());
  fit.a_hat.col(0).setOnes();
  CHECK(std::abs(eval_beta(fit, 4.2)[0] - 1.0) <= 1e-12);
  fit.a_hat = Eigen::MatrixXd::Random(8, 2);
  for (double t : {0.0, 3.3, 10.0}) CHECK((eval_beta(fit, t) - fit.a_hat.transpose() * basis.eval(t)).norm() <= 1e-12);
  CHECK_THROWS_AS(eval_beta(fit, 11.0), Error);

  SUBCASE("adding a constant to Y shifts the intercept and leaves residuals unchanged") {
    const auto data = make_data(rng, 150, 2);
    auto shifted = data;
    shifted.y.array() += 4.0;
    const auto b = SplineBasis::equal(4, 7, data.tau);
    const auto f1 = solve_wls(Design(data, b));
    const auto f2 = solve_wls(Design(shifted, b));
    CHECK((residuals(data, f1) - residuals(shifted, f2)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(eval_beta(f2, 5.0)[0] - eval_beta(f1, 5.0)[0] - 4.0) <= 1e-8);
  }
}
