#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/data.hpp"
#include "ivcm/fpca.hpp"
#include "ivcm/inference.hpp"
#include "ivcm/intensity.hpp"
#include "ivcm/simulation.hpp"
#include "ivcm/vcm.hpp"

namespace ivcm {

enum class FitMode { kWeighted, kUnweighted };

struct FitOptions {
  FitMode mode = FitMode::kWeighted;
  std::string g_spec;  ///< empty: last outcome plus every baseline covariate
  OutcomeTransform transform = OutcomeTransform::kIdentity;
  std::optional<double> truncation_quantile;
  double min_gap = 0.0;
  bool keep_empty_subjects = false;
  TuningGrid tuning;
  double intensity_bandwidth_c = 0.1;
  int bootstrap = 100;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  bool bootstrap_penalized = true;
  int curve_points = 201;
  bool fpca = true;
  /// Weight raw covariance pairs by the fit weights (no effect when unweighted).
  bool fpca_weighted = true;
  int fpca_grid = 101;
  double fve_threshold = 0.95;
  std::optional<double> fpca_bandwidth;
  unsigned threads = 1;
  /// Test hook: weighted mode with gamma = 0 and lambda0 = 1, so every weight is 1.
  bool unit_intensity_oracle = false;
  /// key = value lines naming the input files; copied into to_text().
  std::string inputs;

  /// Settings used for the application data: min gap 1/12, log1p last
  /// outcome, quantile knots, 0.9 weight truncation, L = 100, alpha = 0.05.
  static FitOptions adni_preset();
  /// Canonical key = value text; hashed into the run manifest.
  std::string to_text() const;
};

struct FitRun {
  LongitudinalDataset data;  ///< after the gap filter
  HistoryCovariateSpec spec;
  std::optional<IntensityFit> intensity;
  WeightSet weights;
  TuningResult tuning;
  CoefficientFit fit;
  std::vector<double> grid;
  std::vector<PointwiseBand> bands;
  std::optional<FpcaResult> fpca;
  std::vector<std::string> warnings;
  std::size_t dropped_subjects = 0;
  std::size_t dropped_observations = 0;
};

FitRun run_fit(const LongitudinalDataset& ds, const FitOptions& options);

/// Per-coefficient curves on the run grid: t followed by one column per covariate.
std::string coefficients_csv(const FitRun& run);
std::string coefficient_fit_json(const CoefficientFit& fit);
std::string intensity_json(const FitRun& run);
std::string eigenvalues_csv(const FpcaResult& fpca);
std::string eigenfunctions_csv(const FpcaResult& fpca);
std::string surface_csv(const FpcaResult& fpca);

struct RunManifest {
  std::string command;
  std::string config_text;
  std::string config_hash;  ///< fnv1a64 of config_text, 16 hex digits
  std::uint64_t seed = 0;
  std::string version;
  std::string started;
  std::string finished;
  std::vector<std::string> files;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  static RunManifest load(const std::filesystem::path& dir);
};

std::string config_hash(const std::string& config_text);
std::string utc_timestamp();
const char* version_string();

/// Writes every fit artifact plus manifest.json. Returns the file names.
std::vector<std::string> write_fit_outputs(const FitRun& run, const FitOptions& options,
                                           const std::filesystem::path& out_dir, const std::string& started);

/// Writes metrics.csv, coverage.csv, summary.txt, config.cfg and manifest.json.
std::vector<std::string> write_study_outputs(const MetricsReport& report, const std::filesystem::path& out_dir,
                                             const std::string& started);

}  // namespace ivcm
