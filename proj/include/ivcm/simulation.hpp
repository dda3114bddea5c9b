#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/data.hpp"

namespace ivcm {

enum class Method { kEW, kTW, kUW };
std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

/// kVerbatim: sqrt(2) sin(2 pi t), sqrt(2) cos(2 pi t).
/// kNormalized: sqrt(2/tau) sin(2 pi t / tau), sqrt(2/tau) cos(2 pi t / tau),
/// orthonormal on [0, tau].
enum class EigenfunctionShape { kVerbatim, kNormalized };

enum class Sampler { kAuto, kThinning };

struct SimulationConfig {
  std::size_t n = 100;
  double tau = 10.0;
  std::array<double, 2> theta{0.4, 0.2};
  EigenfunctionShape eigenfunctions = EigenfunctionShape::kVerbatim;
  double sigma_eps2 = 0.2;
  double cov_corr = 0.70710678118654752;
  Eigen::Vector3d gamma{1.0, 0.3, 0.1};  ///< on (last outcome, X1, X2)
  double baseline_amplitude = 0.0;       ///< lambda0(t) = 1 + a sin(2 pi t / tau)
  double x2_slope = 0.0;                 ///< X2(t) = X2 + slope t / tau
  double initial_last_outcome = 0.0;
  std::size_t max_events = 10000;
  Sampler sampler = Sampler::kAuto;

  std::uint64_t seed = 1;
  int replicates = 200;
  int bootstrap = 100;
  bool bootstrap_penalized = true;
  double alpha = 0.05;
  std::vector<Method> methods{Method::kEW, Method::kTW, Method::kUW};
  int coverage_points = 100;
  int ise_points = 1001;
  bool fpca = false;
  /// Weight raw covariance pairs by w_ij w_ij' using each method's weights.
  bool fpca_weighted = true;
  int fpca_grid = 101;
  double failure_budget = 0.02;
  unsigned threads = 1;

  /// Throws InvalidArgument with a readable message.
  void validate() const;

  double beta(int j, double t) const;
  Eigen::Vector3d beta_all(double t) const;
  double phi(int l, double t) const;
  double covariance(double s, double t) const;
  double baseline(double t) const;
  double x2_at(double x2, double t) const { return x2 + x2_slope * t / tau; }
  bool exact_exponential() const { return sampler == Sampler::kAuto && baseline_amplitude == 0.0 && x2_slope == 0.0; }

  /// key = value lines, optional [section] headers, '#' comments.
  static SimulationConfig parse(std::string_view text);
  static SimulationConfig load(const std::string& path);
  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

struct GeneratedSubject {
  SubjectTrajectory subject;
  std::vector<double> true_weights;  ///< 1 / rho at each visit, pre-visit history
  Eigen::Vector2d scores;            ///< b_i1, b_i2
};

/// One subject from the outcome / visit-process design. RunawayProcess when
/// the visit process explodes.
GeneratedSubject gen_subject(const SimulationConfig& cfg, std::mt19937_64& rng, std::string id);

struct GeneratedData {
  LongitudinalDataset data;
  Eigen::VectorXd true_weights;  ///< flat layout
  std::vector<Eigen::Vector2d> scores;
};

/// Independent stream for (seed, replicate, tag).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t replicate, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replicate, std::uint64_t tag);

GeneratedData generate_dataset(const SimulationConfig& cfg, std::uint64_t replicate);

/// Trapezoid integral of (f_hat - truth)^2 over the grid.
double ise(std::span<const double> grid, std::span<const double> f_hat, const std::function<double(double)>& truth);

struct FpcaMetrics {
  double surface_ise = 0.0;
  double phi1_ise = 0.0;
  double theta1_sq = 0.0;
  double theta1_hat = 0.0;
  double theta2_hat = 0.0;
  double bandwidth = 0.0;
  int n_components = 0;
};

struct ReplicateMetrics {
  int replicate = 0;
  Method method = Method::kEW;
  std::size_t n_obs = 0;
  int order = 0;
  int dimension = 0;
  Eigen::VectorXd eta;
  std::array<double, 3> ise{};
  std::array<double, 3> coverage{};  ///< percent of grid points covered
  Eigen::VectorXd gamma;             ///< EW rows only
  int newton_iterations = 0;
  std::optional<FpcaMetrics> fpca;
};

struct ReplicateFailure {
  int replicate = 0;
  std::string message;
};

struct MethodSummary {
  Method method = Method::kEW;
  int count = 0;
  std::array<double, 3> mise{};
  std::array<double, 3> sd{};
  std::array<double, 3> coverage{};
  std::optional<std::array<double, 3>> fpca_mean;  ///< surface, phi1, theta1 squared errors
  std::optional<std::array<double, 3>> fpca_sd;
  std::optional<double> theta1_hat_mean;
};

struct MetricsReport {
  SimulationConfig config;
  std::vector<ReplicateMetrics> rows;  ///< ordered by replicate, then method
  std::vector<ReplicateFailure> failures;
  std::vector<double> coverage_grid;
  /// coverage_by_time[m](j, k): fraction of replicates whose band for beta_j
  /// covers the truth at coverage_grid[k], for config.methods[m].
  std::vector<Eigen::MatrixXd> coverage_by_time;

  std::vector<MethodSummary> summary() const;
  std::string to_csv() const;
  std::string coverage_csv() const;
  /// Table with rows Par. and columns MISE (SD) and CP per method.
  std::string summary_table() const;
};

/// Runs every replicate for every configured method. Failed replicates are
/// recorded and dropped; StudyAborted when they reach the failure budget.
MetricsReport run_study(const SimulationConfig& cfg);

struct IntensityRecovery {
  std::vector<Eigen::VectorXd> gamma;
  std::vector<int> iterations;
  int failures = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd se;  ///< Monte Carlo standard error of the mean
};

/// Fits only the visit-intensity model on cfg.replicates generated datasets.
IntensityRecovery intensity_recovery(const SimulationConfig& cfg);

/// Synthetic cohort shaped like the application data: 807 subjects, 3558
/// visits, covariates age, female, education, apoe4, horizon 8 years.
LongitudinalDataset generate_adni_like(std::uint64_t seed, std::size_t n_subjects = 807,
                                       std::size_t n_observations = 3558);

}  // namespace ivcm
