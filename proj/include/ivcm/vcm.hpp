#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/data.hpp"
#include "ivcm/intensity.hpp"
#include "ivcm/splines.hpp"

namespace ivcm {

/// Basis-independent regression inputs in the dataset's flat layout.
struct RegressionData {
  std::vector<double> t;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;  ///< N x d, intercept first
  Eigen::VectorXd w;
  std::vector<std::size_t> subject;  ///< subject index of each row
  std::size_t n_subjects = 0;
  double tau = 0.0;
  std::optional<double> weight_truncation;

  static RegressionData from(const LongitudinalDataset& ds, const WeightSet& weights);
  std::size_t rows() const noexcept { return t.size(); }
  int d() const noexcept { return static_cast<int>(x.cols()); }
};

/// One dense design row Z_ij = X_ij (x) B(t_ij) with its response and weight.
struct DesignRow {
  Eigen::VectorXd z;
  double y = 0.0;
  double w = 0.0;
  double t = 0.0;
};

/// Rows of Z stored sparsely: each row has d * order nonzeros. Column layout
/// is covariate-major, so column j * q + k multiplies X_j B_k, matching
/// vec(A) for a q x d coefficient matrix A.
class Design {
 public:
  Design(const RegressionData& data, const SplineBasis& basis);

  std::size_t rows() const noexcept { return y_.size(); }
  int d() const noexcept { return static_cast<int>(x_.cols()); }
  int q() const noexcept { return basis_.dimension(); }
  int cols() const noexcept { return d() * q(); }
  const SplineBasis& basis() const noexcept { return basis_; }
  std::size_t n_subjects() const noexcept { return n_subjects_; }
  std::size_t subject(std::size_t r) const { return subject_[r]; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::VectorXd& w() const noexcept { return w_; }
  std::optional<double> weight_truncation() const noexcept { return weight_truncation_; }

  DesignRow row(std::size_t r) const;

  /// Z' diag(w * m) Z and Z' diag(w * m) Y for per-row multipliers m (all ones
  /// when empty).
  void weighted_moments(const Eigen::VectorXd& multipliers, Eigen::MatrixXd& gram, Eigen::VectorXd& score) const;

  /// Z_r' vec(A).
  double predict(std::size_t r, const Eigen::VectorXd& vec_a) const;

 private:
  SplineBasis basis_;
  std::vector<int> first_;
  Eigen::MatrixXd b_;  ///< N x order nonzero basis values
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;
  std::vector<double> t_;
  std::vector<std::size_t> subject_;
  std::size_t n_subjects_ = 0;
  std::optional<double> weight_truncation_;
};

Design assemble_design(const RegressionData& data, const SplineBasis& basis);

/// Roughness penalty S_eta = diag(eta) (x) G_k.
struct Penalty {
  Eigen::VectorXd eta;
  Eigen::MatrixXd gram;

  static Penalty for_basis(const SplineBasis& basis, Eigen::VectorXd eta, int derivative_order = 2);
  Eigen::MatrixXd matrix() const;
};

struct CoefficientFit {
  Eigen::MatrixXd a_hat;  ///< q x d
  SplineBasis basis;
  Eigen::VectorXd eta;  ///< zeros when unpenalized
  Eigen::VectorXd weights;
  std::optional<double> weight_truncation;
  Eigen::MatrixXd system;  ///< Z'WZ + S_eta / 2
  double effective_df = 0.0;
  bool ridge_applied = false;

  int d() const noexcept { return static_cast<int>(a_hat.cols()); }
};

/// Solves (Z'WZ + S_eta/2) vec(A) = Z'WY by Cholesky. A ridge
/// 1e-10 tr(Z'WZ)/(dq) I is added (and flagged) only when the factorization
/// fails or is numerically singular; SingularSystem if that fails too.
CoefficientFit solve_wls(const Design& design, const std::optional<Penalty>& penalty = std::nullopt);

/// Same fit with per-row multipliers applied on top of the design weights.
CoefficientFit solve_wls(const Design& design, const std::optional<Penalty>& penalty,
                         const Eigen::VectorXd& multipliers);

/// Sample size in the GCV denominator. kEffective uses the Kish size
/// (sum w)^2 / sum w^2, which equals N for constant weights.
enum class GcvSampleSize { kObservations, kEffective };

/// Generalized cross-validation score of the penalized fit:
/// (RSS_w / N) / (1 - df / n)^2 with n = N or the effective size.
double gcv_score(const Design& design, const Eigen::VectorXd& eta, int derivative_order = 2,
                 GcvSampleSize sample_size = GcvSampleSize::kObservations);

struct TuningGrid {
  std::vector<int> orders{3, 4};
  std::vector<int> dimensions;  ///< empty: {z+1, ..., min(15, floor(N / (4d)))}
  std::vector<double> etas;     ///< empty: {0} and 13 log-spaced values 1e-4..1e4
  KnotPlacement placement = KnotPlacement::kEqual;
  int derivative_order = 2;
  GcvSampleSize sample_size = GcvSampleSize::kEffective;

  static std::vector<double> default_etas();
  std::vector<int> dimensions_for(int order, std::size_t n_obs, int d) const;
};

struct GcvPoint {
  int order = 0;
  int dimension = 0;
  Eigen::VectorXd eta;
  double score = 0.0;
};

struct TuningResult {
  int order = 0;
  int dimension = 0;
  Eigen::VectorXd eta;
  double gcv = 0.0;
  std::vector<GcvPoint> trace;  ///< every evaluated point, in evaluation order
};

/// Minimizes GCV over (order, dimension, common eta), then refines each
/// eta_j by one coordinate-descent pass. Ties go to the larger eta.
TuningResult select_tuning(const RegressionData& data, const TuningGrid& grid = {});

/// Builds the basis a tuning result refers to.
SplineBasis tuned_basis(const RegressionData& data, const TuningResult& tuning, KnotPlacement placement);

/// beta(t) = A' B(t).
Eigen::VectorXd eval_beta(const CoefficientFit& fit, double t);

/// R_ij = Y_ij - beta(t_ij)' X_ij in flat layout.
Eigen::VectorXd residuals(const LongitudinalDataset& ds, const CoefficientFit& fit);
Eigen::VectorXd residuals(const RegressionData& data, const CoefficientFit& fit);

}  // namespace ivcm
