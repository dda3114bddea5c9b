#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ivcm/data.hpp"
#include "ivcm/intensity.hpp"

namespace ivcm {

struct RawCovariancePoint {
  double s = 0.0;
  double t = 0.0;
  double value = 0.0;
  std::size_t subject = 0;
  double weight = 1.0;  ///< smoother weight, w_ij w_ij' for inverse-intensity weighted pairs
};

/// All ordered within-subject pairs j != j' with value R_ij R_ij'. Residuals
/// are in the dataset's flat layout. With observation weights each pair
/// carries w_ij w_ij'; an empty vector means unit weights.
std::vector<RawCovariancePoint> raw_covariances(const LongitudinalDataset& ds, const Eigen::VectorXd& residuals,
                                                const Eigen::VectorXd& weights = {});
std::vector<RawCovariancePoint> raw_covariances(const std::vector<double>& times,
                                                const std::vector<std::size_t>& subjects,
                                                const Eigen::VectorXd& residuals, const Eigen::VectorXd& weights = {});

struct SurfaceOptions {
  Kernel kernel = Kernel::kEpanechnikov;
  bool symmetrize = true;
};

/// Local-linear estimate of the covariance surface on grid x grid with a
/// product kernel. Cells whose 3x3 system is singular use the local-constant
/// fit; a cell with no kernel mass is retried at 2h and 4h before
/// EmptyNeighborhood is raised.
Eigen::MatrixXd local_linear_surface(const std::vector<RawCovariancePoint>& points, const std::vector<double>& grid,
                                     double h, const SurfaceOptions& options = {});

/// Bilinear interpolation of a surface on an equally spaced grid.
double interpolate_surface(const Eigen::MatrixXd& surface, const std::vector<double>& grid, double s, double t);

struct BandwidthOptions {
  std::vector<double> candidates;  ///< empty: 8 log-spaced values on [2 gap, tau/4]
  int folds = 5;
  std::optional<double> mean_gap;  ///< defaults to the mean within-subject gap of the cloud
  SurfaceOptions surface;
};

struct BandwidthSelection {
  double bandwidth = 0.0;
  std::vector<double> candidates;
  std::vector<double> cv_error;  ///< held-out squared error per candidate (inf when a fit failed)
};

/// Subject-wise K-fold cross-validation; ties go to the larger bandwidth.
BandwidthSelection select_bandwidth_cov(const std::vector<RawCovariancePoint>& points,
                                        const std::vector<double>& grid, const BandwidthOptions& options = {});

/// Mean gap between consecutive distinct visit times within subjects.
double mean_within_subject_gap(const std::vector<RawCovariancePoint>& points);

struct FpcaResult {
  std::vector<double> grid;
  Eigen::MatrixXd surface;
  Eigen::VectorXd eigenvalues;      ///< nonincreasing, negatives set to 0
  Eigen::VectorXd raw_eigenvalues;  ///< untruncated spectrum
  Eigen::MatrixXd eigenfunctions;   ///< columns on grid, orthonormal under the trapezoid rule
  double bandwidth = 0.0;
  int n_components = 0;
  double fve_threshold = 0.95;
};

/// Eigenpairs of the covariance operator discretized with trapezoid
/// quadrature weights; each eigenfunction is signed to be positive where its
/// absolute value peaks.
FpcaResult eigen_decompose(const Eigen::MatrixXd& surface, const std::vector<double>& grid,
                           double fve_threshold = 0.95);

struct FpcaOptions {
  int grid_size = 101;
  double fve_threshold = 0.95;
  std::optional<double> bandwidth;  ///< skip cross-validation when set
  BandwidthOptions selection;
};

/// Raw covariances, bandwidth selection, smoothing and eigendecomposition.
/// Non-empty `weights` give inverse-intensity weighted pairs.
FpcaResult run_fpca(const std::vector<double>& times, const std::vector<std::size_t>& subjects,
                    const Eigen::VectorXd& residuals, double tau, const FpcaOptions& options = {},
                    const Eigen::VectorXd& weights = {});
FpcaResult run_fpca(const LongitudinalDataset& ds, const Eigen::VectorXd& residuals, const FpcaOptions& options = {},
                    const Eigen::VectorXd& weights = {});

}  // namespace ivcm
