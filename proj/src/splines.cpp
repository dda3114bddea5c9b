#include "ivcm/splines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ivcm/error.hpp"
#include "ivcm/stats.hpp"

namespace ivcm {

std::string_view to_string(KnotPlacement placement) {
  return placement == KnotPlacement::kEqual ? "equal" : "quantile";
}

KnotPlacement knot_placement_from_string(std::string_view name) {
  if (name == "equal") return KnotPlacement::kEqual;
  if (name == "quantile") return KnotPlacement::kQuantile;
  throw Error(ErrorCode::kInvalidArgument, "unknown knot placement '" + std::string(name) + "'");
}

SplineBasis::SplineBasis(int order, std::vector<double> interior_knots, double tau, KnotPlacement placement)
    : order_(order), tau_(tau), placement_(placement) {
  if (order < 1) throw Error(ErrorCode::kInvalidArgument, "spline order must be >= 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  double prev = 0.0;
  for (double k : interior_knots) {
    if (!(k > prev) || !(k < tau)) {
      throw Error(ErrorCode::kInvalidArgument, "interior knots must be strictly increasing inside (0, tau)");
    }
    prev = k;
  }
  knots_.assign(static_cast<std::size_t>(order), 0.0);
  knots_.insert(knots_.end(), interior_knots.begin(), interior_knots.end());
  knots_.insert(knots_.end(), static_cast<std::size_t>(order), tau);
  requested_dimension_ = dimension();
}

SplineBasis SplineBasis::equal(int order, int dimension, double tau) {
  if (dimension < order) throw Error(ErrorCode::kInvalidArgument, "basis dimension must be >= order");
  const int interior = dimension - order;
  std::vector<double> knots(static_cast<std::size_t>(interior));
  for (int j = 0; j < interior; ++j) knots[static_cast<std::size_t>(j)] = tau * (j + 1) / (interior + 1);
  return SplineBasis(order, std::move(knots), tau, KnotPlacement::kEqual);
}

SplineBasis SplineBasis::quantile(int order, int dimension, double tau, std::span<const double> times) {
  if (dimension < order) throw Error(ErrorCode::kInvalidArgument, "basis dimension must be >= order");
  const int interior = dimension - order;
  std::vector<double> knots;
  for (int j = 0; j < interior; ++j) {
    const double k = quantile_type7(times, static_cast<double>(j + 1) / (interior + 1));
    if (k > 0.0 && k < tau && (knots.empty() || k > knots.back())) knots.push_back(k);
  }
  SplineBasis basis(order, std::move(knots), tau, KnotPlacement::kQuantile);
  basis.requested_dimension_ = dimension;
  return basis;
}

std::vector<double> SplineBasis::interior_knots() const {
  return {knots_.begin() + order_, knots_.end() - order_};
}

int SplineBasis::find_span(double t) const {
  if (!(t >= 0.0 && t <= tau_)) {
    throw Error(ErrorCode::kOutOfDomain, "t = " + std::to_string(t) + " outside [0, tau]");
  }
  const int q = dimension();
  if (t >= tau_) return q - 1;
  const auto it = std::upper_bound(knots_.begin() + order_, knots_.begin() + q, t);
  return static_cast<int>(it - knots_.begin()) - 1;
}

Eigen::VectorXd SplineBasis::eval(double t) const { return derivative(t, 0); }

Eigen::VectorXd SplineBasis::derivative(double t, int k) const {
  const auto local = local_derivative(t, k);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dimension());
  out.segment(local.first, order_) = local.values;
  return out;
}

// Derivatives of the nonzero basis functions on the span containing t,
// following the triangular-table recurrence of Piegl & Tiller (A2.3).
LocalBasis SplineBasis::local_derivative(double t, int k) const {
  if (k < 0 || k >= order_) {
    throw Error(ErrorCode::kDerivativeOrderTooHigh, "derivative order must be < spline order");
  }
  const int p = order_ - 1;
  const int span = find_span(t);
  const auto& u = knots_;

  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[static_cast<std::size_t>(j)] = t - u[static_cast<std::size_t>(span + 1 - j)];
    right[static_cast<std::size_t>(j)] = u[static_cast<std::size_t>(span + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    ndu(j, j) = saved;
  }

  LocalBasis out;
  out.first = span - p;
  out.values.resize(p + 1);
  if (k == 0) {
    for (int j = 0; j <= p; ++j) out.values[j] = ndu(j, p);
    return out;
  }

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a(0, 0) = 1.0;
    double d = 0.0;
    for (int kk = 1; kk <= k; ++kk) {
      d = 0.0;
      const int rk = r - kk;
      const int pk = p - kk;
      if (r >= kk) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? kk - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, kk) = -a(s1, kk - 1) / ndu(pk + 1, r);
        d += a(s2, kk) * ndu(r, pk);
      }
      std::swap(s1, s2);
    }
    out.values[r] = d;
  }
  double factor = 1.0;
  for (int j = p; j > p - k; --j) factor *= j;
  out.values *= factor;
  return out;
}

Eigen::MatrixXd SplineBasis::penalty_gram(int k) const {
  if (k < 0 || k >= order_) {
    throw Error(ErrorCode::kDerivativeOrderTooHigh, "penalty derivative order must be < spline order");
  }
  const int q = dimension();
  const int degree = 2 * (order_ - 1 - k);
  const int nodes_per_span = (degree + 1 + 1) / 2 + 1;
  std::vector<double> x, w;
  gauss_legendre(nodes_per_span, x, w);

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(q, q);
  for (std::size_t s = static_cast<std::size_t>(order_ - 1); s + 1 < knots_.size(); ++s) {
    const double a = knots_[s];
    const double b = knots_[s + 1];
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto local = local_derivative(mid + half * x[i], k);
      g.block(local.first, local.first, order_, order_).noalias() +=
          (half * w[i]) * local.values * local.values.transpose();
    }
  }
  return 0.5 * (g + g.transpose());
}

}  // namespace ivcm
