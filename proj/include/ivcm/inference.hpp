#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/vcm.hpp"

namespace ivcm {

enum class MultiplierScheme {
  kBernoulli2,  ///< xi in {0, 2} with probability 1/2 each
  kUnit,        ///< xi = 1 (every replicate reproduces the point fit)
};

struct BootstrapOptions {
  int replicates = 100;
  std::uint64_t seed = 1;
  MultiplierScheme scheme = MultiplierScheme::kBernoulli2;
  int max_redraws = 5;
  unsigned threads = 1;
  /// false: replicates minimize the plain weighted loss on the same basis.
  bool penalized = true;
};

struct BootstrapEnsemble {
  std::vector<Eigen::MatrixXd> replicates;  ///< q x d coefficient matrices
  std::uint64_t seed = 0;
  SplineBasis basis;
  Eigen::VectorXd eta;  ///< penalty used by the replicates
  Eigen::VectorXd weights;
  int redraws = 0;  ///< total degenerate draws that were replaced

  int size() const noexcept { return static_cast<int>(replicates.size()); }
};

/// Subject-level multipliers for replicate l. attempt > 0 gives the stream
/// used after a degenerate draw. Depends only on (seed, l, attempt).
Eigen::VectorXd draw_multipliers(std::size_t n_subjects, std::uint64_t seed, std::uint64_t l, std::uint64_t attempt,
                                 MultiplierScheme scheme = MultiplierScheme::kBernoulli2);

/// Refits the penalized WLS with per-subject multipliers, holding eta and the
/// weights fixed. A replicate whose system is singular is redrawn up to
/// max_redraws times; after that SingularSystem propagates.
BootstrapEnsemble multiplier_bootstrap(const Design& design, const CoefficientFit& fit,
                                       const BootstrapOptions& options = {});

struct PointwiseBand {
  std::vector<double> grid;
  Eigen::VectorXd estimate;
  Eigen::VectorXd variance;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double alpha = 0.05;
  int coefficient = 0;
  std::string name;
};

/// beta_j(t) +- z_{1-alpha/2} sqrt(V_jj(t)), where V is the sample variance
/// of the bootstrap curves around their mean. DegenerateEnsemble if L < 2.
PointwiseBand pointwise_band(const BootstrapEnsemble& ensemble, const CoefficientFit& fit, int j,
                             const std::vector<double>& grid, double alpha = 0.05, std::string name = {});

/// CSV with columns t, estimate, variance, lower, upper, coefficient_name, alpha.
std::string bands_to_csv(const std::vector<PointwiseBand>& bands);

}  // namespace ivcm
