#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ivcm {

enum class KnotPlacement { kEqual, kQuantile };

std::string_view to_string(KnotPlacement placement);
KnotPlacement knot_placement_from_string(std::string_view name);

/// Nonzero part of B(t): values[k] is B_{first + k}(t), k < order.
struct LocalBasis {
  int first = 0;
  Eigen::VectorXd values;
};

/// Normalized B-spline system of order z (degree z - 1) on [0, tau] with
/// z-fold boundary knots. Basis dimension q_n = #interior knots + z.
///
/// Evaluation is right-continuous at interior knots; t = tau belongs to the
/// last span so B(tau) is never all zeros.
class SplineBasis {
 public:
  SplineBasis(int order, std::vector<double> interior_knots, double tau,
              KnotPlacement placement = KnotPlacement::kEqual);

  /// Interior knots splitting [0, tau] into dimension - order + 1 equal spans.
  static SplineBasis equal(int order, int dimension, double tau);

  /// Interior knots at equal type-7 quantiles of `times`. Duplicate knots and
  /// knots on the boundary are dropped, so dimension() may be smaller than
  /// requested_dimension().
  static SplineBasis quantile(int order, int dimension, double tau, std::span<const double> times);

  int order() const noexcept { return order_; }
  int dimension() const noexcept { return static_cast<int>(knots_.size()) - order_; }
  int requested_dimension() const noexcept { return requested_dimension_; }
  double tau() const noexcept { return tau_; }
  KnotPlacement placement() const noexcept { return placement_; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  std::vector<double> interior_knots() const;

  Eigen::VectorXd eval(double t) const;
  LocalBasis eval_local(double t) const { return local_derivative(t, 0); }
  Eigen::VectorXd derivative(double t, int k) const;
  LocalBasis local_derivative(double t, int k) const;

  /// G = integral over [0, tau] of B^(k)(t) B^(k)(t)^T, exact by per-span
  /// Gauss-Legendre quadrature.
  Eigen::MatrixXd penalty_gram(int k) const;

 private:
  int find_span(double t) const;

  int order_;
  double tau_;
  std::vector<double> knots_;
  KnotPlacement placement_;
  int requested_dimension_;
};

}  // namespace ivcm
