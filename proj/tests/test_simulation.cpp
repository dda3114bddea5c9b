#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ivcm/error.hpp"
#include "ivcm/simulation.hpp"

using namespace ivcm;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an ivcm::Error");
  return ErrorCode::kParse;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

SimulationConfig small_study() {
  SimulationConfig cfg;
  cfg.n = 40;
  cfg.replicates = 3;
  cfg.bootstrap = 5;
  cfg.coverage_points = 20;
  cfg.ise_points = 101;
  return cfg;
}

}  // namespace

TEST_CASE("config text") {
  SUBCASE("defaults follow the simulation design") {
    const SimulationConfig cfg;
    CHECK(cfg.tau == 10.0);
    CHECK(cfg.beta(0, 5.0) == doctest::Approx(0.25));
    CHECK(cfg.beta(1, 5.0) == doctest::Approx(0.25));
    CHECK(cfg.beta(2, 5.0) == doctest::Approx(1.0));
    CHECK(cfg.phi(0, 0.25) == doctest::Approx(std::sqrt(2.0)));
    CHECK(cfg.covariance(0.0, 0.0) == doctest::Approx(0.2 * 2.0));
    CHECK(cfg.exact_exponential());
  }
  SUBCASE("round trip") {
    SimulationConfig cfg;
    cfg.n = 37;
    cfg.theta = {0.5, 0.25};
    cfg.eigenfunctions = EigenfunctionShape::kNormalized;
    cfg.gamma = Eigen::Vector3d(0.5, -0.2, 0.125);
    cfg.baseline_amplitude = 0.3;
    cfg.sampler = Sampler::kThinning;
    cfg.seed = 99;
    cfg.methods = {Method::kUW, Method::kEW};
    cfg.fpca = true;
    cfg.bootstrap_penalized = false;
    const auto back = SimulationConfig::parse(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.n == 37);
    CHECK(back.gamma[2] == 0.125);
    CHECK(back.methods.size() == 2);
    CHECK(back.methods[0] == Method::kUW);
    CHECK_FALSE(back.bootstrap_penalized);
  }
  SUBCASE("comments, sections and spacing") {
    const auto cfg = SimulationConfig::parse("# study\n[model]\n  n = 12   # subjects\n\n[study]\nreplicates=4\nmethods = ew,tw\n");
    CHECK(cfg.n == 12);
    CHECK(cfg.replicates == 4);
    CHECK(cfg.methods == std::vector<Method>{Method::kEW, Method::kTW});
  }
  SUBCASE("errors") {
    CHECK(code_of([] { SimulationConfig::parse("colour = blue\n"); }) == ErrorCode::kParse);
    CHECK(code_of([] { SimulationConfig::parse("n 12\n"); }) == ErrorCode::kParse);
    CHECK(code_of([] { SimulationConfig::parse("n = twelve\n"); }) == ErrorCode::kParse);
    CHECK(message_of([] { SimulationConfig::parse("replicates = 0\n"); }).find("replicates must be ≥ 1") != std::string::npos);
    CHECK(code_of([] { SimulationConfig::parse("methods = EW, XX\n"); }) == ErrorCode::kInvalidArgument);
    SimulationConfig bad;
    bad.theta = {0.1, 0.2};
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
    bad = SimulationConfig{};
    bad.cov_corr = 1.0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("subject generator") {
  SUBCASE("unit intensity gives unit mean gaps") {
    SimulationConfig cfg;
    cfg.gamma.setZero();
    cfg.tau = 1e5;
    cfg.max_events = 200000;
    std::mt19937_64 rng(11);
    const auto g = gen_subject(cfg, rng, "a");
    const auto& obs = g.subject.observations;
    REQUIRE(obs.size() > 90000);
    const double mean_gap = obs.back().time / static_cast<double>(obs.size());
    CHECK(std::abs(mean_gap - 1.0) <= 0.01);
    for (double w : g.true_weights) CHECK(w == 1.0);
  }
  SUBCASE("noise-free outcomes follow the coefficient functions") {
    SimulationConfig cfg;
    cfg.sigma_eps2 = 0.0;
    cfg.theta = {0.0, 0.0};
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
      const auto g = gen_subject(cfg, rng, "s");
      for (const auto& o : g.subject.observations) {
        const double x1 = o.covariates[1], x2 = o.covariates[2];
        const double rest = o.outcome - cfg.beta(1, o.time) * x1 - cfg.beta(2, o.time) * x2;
        CHECK(std::abs(rest - o.time * o.time / 100.0) <= 1e-12);
      }
    }
  }
  SUBCASE("true weights use the history before each visit") {
    SimulationConfig cfg;
    std::mt19937_64 rng(8);
    const auto g = gen_subject(cfg, rng, "w");
    const auto& obs = g.subject.observations;
    REQUIRE(obs.size() >= 2);
    const double x1 = obs[0].covariates[1], x2 = obs[0].covariates[2];
    double y_last = cfg.initial_last_outcome;
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const double rho = std::exp(y_last + 0.3 * x1 + 0.1 * x2);
      CHECK(g.true_weights[k] == doctest::Approx(1.0 / rho).epsilon(1e-12));
      y_last = obs[k].outcome;
    }
  }
  SUBCASE("covariates have the stated correlation") {
    SimulationConfig cfg;
    cfg.gamma.setZero();
    cfg.tau = 0.5;
    std::mt19937_64 rng(21);
    double sxy = 0, sxx = 0, syy = 0;
    int used = 0;
    for (int i = 0; i < 20000; ++i) {
      const auto g = gen_subject(cfg, rng, "c");
      const double x1 = g.subject.baseline[1], x2 = g.subject.baseline[2];
      sxy += x1 * x2;
      sxx += x1 * x1;
      syy += x2 * x2;
      ++used;
    }
    CHECK(sxy / std::sqrt(sxx * syy) == doctest::Approx(std::sqrt(0.5)).epsilon(0.03));
    CHECK(sxx / used == doctest::Approx(1.0).epsilon(0.03));
  }
  SUBCASE("runaway feedback is reported") {
    SimulationConfig cfg;
    cfg.max_events = 3;
    cfg.gamma = Eigen::Vector3d(0.0, 0.0, 0.0);
    std::mt19937_64 rng(1);
    CHECK(code_of([&] { gen_subject(cfg, rng, "r"); }) == ErrorCode::kRunawayProcess);
  }
}

TEST_CASE("median events per subject at the default design") {
  SimulationConfig cfg;
  std::vector<double> medians;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const auto gen = generate_dataset(cfg, r);
    std::vector<double> counts;
    for (const auto& s : gen.data.subjects()) counts.push_back(static_cast<double>(s.size()));
    medians.push_back(median(counts));
  }
  const double m = median(medians);
  MESSAGE("median events per subject: " << m);
  CHECK(std::abs(m - 11.0) <= 2.0);
}

TEST_CASE("thinning agrees with exponential gaps") {
  SimulationConfig exact;
  exact.gamma = Eigen::Vector3d(0.5, 0.3, 0.1);
  SimulationConfig thin = exact;
  thin.sampler = Sampler::kThinning;
  REQUIRE(exact.exact_exponential());
  REQUIRE_FALSE(thin.exact_exponential());
  std::mt19937_64 ra(101), rb(202);
  const int n = 4000;
  std::vector<double> ca, cb, fa, fb;
  for (int i = 0; i < n; ++i) {
    const auto a = gen_subject(exact, ra, "a");
    const auto b = gen_subject(thin, rb, "b");
    ca.push_back(static_cast<double>(a.subject.size()));
    cb.push_back(static_cast<double>(b.subject.size()));
    if (a.subject.size()) fa.push_back(a.subject.observations[0].time);
    if (b.subject.size()) fb.push_back(b.subject.observations[0].time);
  }
  auto mean_var = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s / static_cast<double>(v.size() - 1)};
  };
  const auto [ma, va] = mean_var(ca);
  const auto [mb, vb] = mean_var(cb);
  CHECK(std::abs(ma - mb) <= 4.0 * std::sqrt((va + vb) / n));
  // Two-sample Kolmogorov-Smirnov on the first visit time.
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  double dmax = 0.0;
  std::size_t i = 0, j = 0;
  while (i < fa.size() && j < fb.size()) {
    const double x = std::min(fa[i], fb[j]);
    while (i < fa.size() && fa[i] <= x) ++i;
    while (j < fb.size() && fb[j] <= x) ++j;
    dmax = std::max(dmax, std::abs(static_cast<double>(i) / fa.size() - static_cast<double>(j) / fb.size()));
  }
  const double na = static_cast<double>(fa.size()), nb = static_cast<double>(fb.size());
  CHECK(dmax <= 1.95 * std::sqrt((na + nb) / (na * nb)));
}

TEST_CASE("time-varying visit intensity") {
  SimulationConfig cfg;
  cfg.gamma.setZero();
  cfg.baseline_amplitude = 0.8;
  cfg.tau = 10.0;
  std::mt19937_64 rng(4);
  // Expected count in [0, tau/2] is 5 + 0.8 * 10 / pi; in [tau/2, tau] it is 5 - 0.8 * 10 / pi.
  double first = 0, second = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    for (const auto& o : gen_subject(cfg, rng, "v").subject.observations) (o.time < 5.0 ? first : second) += 1.0;
  }
  const double shift = 8.0 / std::numbers::pi;
  CHECK(first / n == doctest::Approx(5.0 + shift).epsilon(0.03));
  CHECK(second / n == doctest::Approx(5.0 - shift).epsilon(0.03));
}

TEST_CASE("integrated squared error") {
  std::vector<double> grid(1001);
  for (int k = 0; k <= 1000; ++k) grid[static_cast<std::size_t>(k)] = 10.0 * k / 1000.0;
  auto truth = [](double t) { return std::cos(t) + t; };
  std::vector<double> same(grid.size()), shifted(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    same[k] = truth(grid[k]);
    shifted[k] = truth(grid[k]) + 1.0;
  }
  CHECK(ise(grid, same, truth) == 0.0);
  CHECK(ise(grid, shifted, truth) == doctest::Approx(10.0).epsilon(1e-12));
  std::vector<double> g2(1001), s2(1001);
  for (int k = 0; k <= 1000; ++k) {
    g2[static_cast<std::size_t>(k)] = 2.0 * std::numbers::pi * k / 1000.0;
    s2[static_cast<std::size_t>(k)] = std::sin(g2[static_cast<std::size_t>(k)]);
  }
  CHECK(std::abs(ise(g2, s2, [](double) { return 0.0; }) - std::numbers::pi) <= 1e-4);
  CHECK(code_of([&] { ise(grid, std::vector<double>(3), truth); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("datasets and studies are reproducible") {
  const auto cfg = small_study();
  const auto a = generate_dataset(cfg, 2);
  const auto b = generate_dataset(cfg, 2);
  const auto c = generate_dataset(cfg, 3);
  REQUIRE(a.data.total_observations() == b.data.total_observations());
  CHECK(a.true_weights == b.true_weights);
  CHECK(a.data.subjects().front().id == "s01");
  CHECK(a.data.subjects().size() == 40);
  CHECK(a.true_weights.size() == static_cast<Eigen::Index>(a.data.total_observations()));
  CHECK(a.data.total_observations() != c.data.total_observations());

  const auto r1 = run_study(cfg);
  auto threaded = cfg;
  threaded.threads = 3;
  const auto r2 = run_study(threaded);
  CHECK(r1.to_csv() == r2.to_csv());
  CHECK(r1.coverage_csv() == r2.coverage_csv());
  CHECK(r1.summary_table() == r2.summary_table());
  CHECK(r1.rows.size() == 9);
  for (const auto& row : r1.rows) {
    for (int j = 0; j < 3; ++j) {
      CHECK(row.ise[static_cast<std::size_t>(j)] >= 0.0);
      CHECK(row.coverage[static_cast<std::size_t>(j)] >= 0.0);
      CHECK(row.coverage[static_cast<std::size_t>(j)] <= 100.0);
    }
    if (row.method == Method::kEW) CHECK(row.gamma.size() == 3);
  }
  const auto sums = r1.summary();
  REQUIRE(sums.size() == 3);
  CHECK(sums[0].count == 3);
  CHECK(r1.summary_table().find("beta1(t)") != std::string::npos);
}

TEST_CASE("study failure budget") {
  auto cfg = small_study();
  cfg.max_events = 2;
  CHECK(code_of([&] { run_study(cfg); }) == ErrorCode::kStudyAborted);
}

TEST_CASE("fpca metrics in a study") {
  auto cfg = small_study();
  cfg.n = 60;
  cfg.replicates = 1;
  cfg.methods = {Method::kTW};
  cfg.fpca = true;
  cfg.fpca_grid = 41;
  cfg.eigenfunctions = EigenfunctionShape::kNormalized;
  const auto rep = run_study(cfg);
  REQUIRE(rep.rows.size() == 1);
  REQUIRE(rep.rows[0].fpca.has_value());
  const auto& f = *rep.rows[0].fpca;
  CHECK(f.theta1_hat > 0.0);
  CHECK(f.bandwidth > 0.0);
  CHECK(f.n_components >= 1);
  CHECK(rep.to_csv().find("theta1_hat") != std::string::npos);
}

TEST_CASE("application-shaped synthetic cohort") {
  const auto ds = generate_adni_like(5);
  CHECK(ds.subjects().size() == 807);
  CHECK(ds.total_observations() == 3558);
  CHECK(ds.tau() == doctest::Approx(8.0));
  const auto again = generate_adni_like(5);
  CHECK(again.subjects()[10].observations.size() == ds.subjects()[10].observations.size());
  CHECK(ds.covariate_names().size() == 5);
}
