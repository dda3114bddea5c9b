#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/data.hpp"

namespace ivcm {

// ---------------------------------------------------------------------------
// History covariates g{O(t-)}
// ---------------------------------------------------------------------------

enum class OutcomeTransform { kIdentity, kLog1p };

/// Most recently observed outcome before t, optionally log(1 + y) transformed.
/// `initial` is used before the subject's first visit.
struct LastOutcome {
  OutcomeTransform transform = OutcomeTransform::kIdentity;
  double initial = 0.0;
};

/// Time-fixed covariate known at entry (column `index` of the covariate vector).
struct BaselineCovariate {
  int index = 1;
};

/// Most recently observed value of covariate `index` before t.
struct LastCovariate {
  int index = 1;
  double initial = 0.0;
};

using HistoryCovariate = std::variant<LastOutcome, BaselineCovariate, LastCovariate>;

/// Ordered list of predictable covariates for the proportional intensity model.
/// Every constructor only looks at visits strictly before t.
class HistoryCovariateSpec {
 public:
  HistoryCovariateSpec() = default;
  explicit HistoryCovariateSpec(std::vector<HistoryCovariate> items) : items_(std::move(items)) {}

  /// Parses a comma-separated list, e.g. "last_outcome:log1p,baseline:age".
  /// Items: last_outcome[:identity|log1p[:initial]], baseline:<name|index>,
  /// last:<name|index>[:initial].
  static HistoryCovariateSpec parse(std::string_view text, const std::vector<std::string>& covariate_names);

  /// last_outcome followed by every non-intercept baseline covariate.
  static HistoryCovariateSpec standard(int d, OutcomeTransform transform = OutcomeTransform::kIdentity);

  int size() const noexcept { return static_cast<int>(items_.size()); }
  const std::vector<HistoryCovariate>& items() const noexcept { return items_; }

  std::string describe(const std::vector<std::string>& covariate_names) const;

  /// g_i(t) from visits with time < t.
  Eigen::VectorXd evaluate(const SubjectTrajectory& subject, double t) const;

  /// Row k holds g after exactly k visits, k = 0..m_i. g_i(t) is row
  /// #{j : t_ij < t}.
  Eigen::MatrixXd history_table(const SubjectTrajectory& subject) const;

 private:
  std::vector<HistoryCovariate> items_;
};

// ---------------------------------------------------------------------------
// Partial likelihood and Newton-Raphson
// ---------------------------------------------------------------------------

struct PartialLikelihood {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// Log partial likelihood with Breslow handling of tied visit times, together
/// with its analytic gradient and Hessian. Risk sets use 1(C_i >= t).
PartialLikelihood partial_loglik(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                                 const Eigen::VectorXd& gamma);

struct NewtonOptions {
  double tol = 1e-8;  ///< sup-norm of the gradient
  int max_iter = 100;
  int max_halvings = 30;
};

struct GammaFit {
  Eigen::VectorXd gamma;
  double loglik = 0.0;
  int iterations = 0;
  std::vector<double> trace;  ///< loglik after each accepted step, starting at init
};

/// Maximizes the partial likelihood by Newton-Raphson with step halving.
/// Throws SingularHessian for degenerate or collinear g and NoConvergenceError
/// when the gradient tolerance is not met.
GammaFit fit_gamma(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                   const Eigen::VectorXd& init, const NewtonOptions& options = {});

// ---------------------------------------------------------------------------
// Baseline intensity
// ---------------------------------------------------------------------------

/// Right-continuous step function given by sorted jump times and increments.
struct StepFunction {
  std::vector<double> times;
  std::vector<double> increments;

  double operator()(double t) const;
  double total() const;
};

/// Breslow-Aalen estimator of the cumulative baseline intensity at gamma.
StepFunction breslow_cumulative(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                                const Eigen::VectorXd& gamma);

enum class Kernel { kEpanechnikov, kUniform, kTriangular, kBiweight };

std::string_view to_string(Kernel kernel);
Kernel kernel_from_string(std::string_view name);
/// Kernel density on [-1, 1].
double kernel_value(Kernel kernel, double u);

/// Floor applied to the smoothed baseline before it is inverted into weights.
inline constexpr double kBaselineFloor = 1e-8;

/// Kernel-smoothed baseline intensity h^-1 sum_j K((t - s_j)/h) dLambda(s_j),
/// floored at kBaselineFloor.
class SmoothedBaseline {
 public:
  SmoothedBaseline() = default;
  SmoothedBaseline(StepFunction cumulative, double tau, double bandwidth, Kernel kernel = Kernel::kEpanechnikov);

  double operator()(double t) const;
  /// Value without the floor.
  double raw(double t) const;

  double bandwidth() const noexcept { return bandwidth_; }
  double tau() const noexcept { return tau_; }
  Kernel kernel() const noexcept { return kernel_; }
  const StepFunction& cumulative() const noexcept { return cumulative_; }

 private:
  StepFunction cumulative_;
  double tau_ = 0.0;
  double bandwidth_ = 1.0;
  Kernel kernel_ = Kernel::kEpanechnikov;
};

SmoothedBaseline smooth_baseline(const StepFunction& cumulative, double tau, double bandwidth,
                                 Kernel kernel = Kernel::kEpanechnikov);

/// h_n = c * tau * N^(-1/5).
double default_bandwidth(double tau, std::size_t total_observations, double c = 0.1);

// ---------------------------------------------------------------------------
// Full first stage
// ---------------------------------------------------------------------------

struct IntensityOptions {
  NewtonOptions newton;
  std::optional<Eigen::VectorXd> init;  ///< defaults to zeros
  std::optional<double> bandwidth;      ///< defaults to default_bandwidth(tau, N, bandwidth_c)
  double bandwidth_c = 0.1;
  Kernel kernel = Kernel::kEpanechnikov;
};

struct IntensityFit {
  Eigen::VectorXd gamma;
  StepFunction cum_baseline;
  SmoothedBaseline baseline;
  double bandwidth = 0.0;
  Kernel kernel = Kernel::kEpanechnikov;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
  HistoryCovariateSpec spec;
};

IntensityFit fit_intensity(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                           const IntensityOptions& options = {});

/// Per-visit weights in the dataset's flat layout.
struct WeightSet {
  Eigen::VectorXd weights;
  std::optional<double> truncation_quantile;
  double raw_max = 0.0;
  std::optional<double> truncation_value;  ///< the empirical quantile used as the cap

  static WeightSet unit(std::size_t n_obs);
};

/// w_ij = lambda0(t_ij)^-1 exp(-gamma' g_i(t_ij-)), optionally capped at the
/// empirical `truncation_quantile` of the raw weights.
WeightSet compute_weights(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                          const IntensityFit& fit, std::optional<double> truncation_quantile = std::nullopt);

/// Caps weights at their empirical q-quantile (type 7).
WeightSet truncate_weights(Eigen::VectorXd raw, std::optional<double> truncation_quantile);

}  // namespace ivcm
