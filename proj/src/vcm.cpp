#include "ivcm/vcm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ivcm/error.hpp"

namespace ivcm {

RegressionData RegressionData::from(const LongitudinalDataset& ds, const WeightSet& weights) {
  const auto n_obs = ds.total_observations();
  if (static_cast<std::size_t>(weights.weights.size()) != n_obs) {
    throw Error(ErrorCode::kDimensionMismatch, "weights are not aligned with the dataset");
  }
  RegressionData out;
  out.t.reserve(n_obs);
  out.y.resize(static_cast<Eigen::Index>(n_obs));
  out.x.resize(static_cast<Eigen::Index>(n_obs), ds.d());
  out.w = weights.weights;
  out.subject.reserve(n_obs);
  out.n_subjects = ds.n();
  out.tau = ds.tau();
  out.weight_truncation = weights.truncation_quantile;
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (const auto& o : ds.subject(i).observations) {
      out.t.push_back(o.time);
      out.y[r] = o.outcome;
      out.x.row(r) = o.covariates.transpose();
      out.subject.push_back(i);
      ++r;
    }
  }
  return out;
}

Design::Design(const RegressionData& data, const SplineBasis& basis)
    : basis_(basis),
      x_(data.x),
      y_(data.y),
      w_(data.w),
      t_(data.t),
      subject_(data.subject),
      n_subjects_(data.n_subjects),
      weight_truncation_(data.weight_truncation) {
  const auto n = data.rows();
  if (static_cast<std::size_t>(data.y.size()) != n || static_cast<std::size_t>(data.x.rows()) != n ||
      static_cast<std::size_t>(data.w.size()) != n || data.subject.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "regression data arrays have different lengths");
  }
  if (std::abs(basis.tau() - data.tau) > 1e-12 * data.tau) {
    throw Error(ErrorCode::kDimensionMismatch, "basis and data have different horizons");
  }
  first_.resize(n);
  b_.resize(static_cast<Eigen::Index>(n), basis.order());
  for (std::size_t r = 0; r < n; ++r) {
    const auto local = basis.eval_local(data.t[r]);
    first_[r] = local.first;
    b_.row(static_cast<Eigen::Index>(r)) = local.values.transpose();
  }
}

Design assemble_design(const RegressionData& data, const SplineBasis& basis) { return Design(data, basis); }

DesignRow Design::row(std::size_t r) const {
  const auto i = static_cast<Eigen::Index>(r);
  DesignRow out;
  out.z = Eigen::VectorXd::Zero(cols());
  for (int j = 0; j < d(); ++j)
    out.z.segment(j * q() + first_[r], basis_.order()) = x_(i, j) * b_.row(i).transpose();
  out.y = y_[i];
  out.w = w_[i];
  out.t = t_[r];
  return out;
}

void Design::weighted_moments(const Eigen::VectorXd& multipliers, Eigen::MatrixXd& gram,
                              Eigen::VectorXd& score) const {
  const int z = basis_.order();
  const int local = d() * z;
  gram = Eigen::MatrixXd::Zero(cols(), cols());
  score = Eigen::VectorXd::Zero(cols());
  Eigen::VectorXd v(local);
  std::vector<int> idx(static_cast<std::size_t>(local));
  const bool has_mult = multipliers.size() > 0;
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    const double weight = w_[i] * (has_mult ? multipliers[i] : 1.0);
    if (weight == 0.0) continue;
    for (int j = 0; j < d(); ++j) {
      for (int k = 0; k < z; ++k) {
        v[j * z + k] = x_(i, j) * b_(i, k);
        idx[static_cast<std::size_t>(j * z + k)] = j * q() + first_[r] + k;
      }
    }
    for (int a = 0; a < local; ++a) {
      const double wa = weight * v[a];
      const int ia = idx[static_cast<std::size_t>(a)];
      score[ia] += wa * y_[i];
      for (int b = 0; b <= a; ++b) gram(ia, idx[static_cast<std::size_t>(b)]) += wa * v[b];
    }
  }
  // Only one triangle was accumulated per row; indices increase with (j, k)
  // so that triangle is the lower one.
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose().triangularView<Eigen::StrictlyUpper>();
}

double Design::predict(std::size_t r, const Eigen::VectorXd& vec_a) const {
  const auto i = static_cast<Eigen::Index>(r);
  double out = 0.0;
  for (int j = 0; j < d(); ++j)
    out += x_(i, j) * b_.row(i).dot(vec_a.segment(j * q() + first_[r], basis_.order()));
  return out;
}

Penalty Penalty::for_basis(const SplineBasis& basis, Eigen::VectorXd eta, int derivative_order) {
  return Penalty{std::move(eta), basis.penalty_gram(derivative_order)};
}

Eigen::MatrixXd Penalty::matrix() const {
  const auto q = gram.rows();
  const auto d = eta.size();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d * q, d * q);
  for (Eigen::Index j = 0; j < d; ++j) s.block(j * q, j * q, q, q) = eta[j] * gram;
  return s;
}

namespace {

struct Solved {
  Eigen::VectorXd vec_a;
  Eigen::MatrixXd system;
  double effective_df = 0.0;
  bool ridge_applied = false;
};

void add_half_penalty(Eigen::MatrixXd& m, const Penalty& penalty) {
  const auto q = penalty.gram.rows();
  if (m.rows() != q * penalty.eta.size()) throw Error(ErrorCode::kDimensionMismatch, "penalty does not match design");
  for (Eigen::Index j = 0; j < penalty.eta.size(); ++j) {
    if (!(penalty.eta[j] >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "penalty weights must be >= 0");
    if (penalty.eta[j] != 0.0) m.block(j * q, j * q, q, q) += 0.5 * penalty.eta[j] * penalty.gram;
  }
}

bool usable(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return llt.info() == Eigen::Success && llt.rcond() > 1e-13;
}

Solved solve_system(const Eigen::MatrixXd& gram, const Eigen::VectorXd& score, const std::optional<Penalty>& penalty,
                    bool need_df) {
  Solved out;
  out.system = gram;
  if (penalty) add_half_penalty(out.system, *penalty);
  Eigen::LLT<Eigen::MatrixXd> llt(out.system);
  if (!usable(llt)) {
    const double ridge = 1e-10 * gram.trace() / static_cast<double>(gram.rows());
    out.system.diagonal().array() += ridge;
    out.ridge_applied = true;
    llt.compute(out.system);
    if (!(ridge > 0.0) || llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kSingularSystem, "normal equations are singular; reduce the basis dimension");
    }
  }
  out.vec_a = llt.solve(score);
  if (!out.vec_a.allFinite()) throw Error(ErrorCode::kSingularSystem, "non-finite spline coefficients");
  if (need_df) out.effective_df = llt.solve(gram).trace();
  return out;
}

CoefficientFit make_fit(const Design& design, const std::optional<Penalty>& penalty, Solved solved) {
  CoefficientFit fit{Eigen::Map<const Eigen::MatrixXd>(solved.vec_a.data(), design.q(), design.d()),
                     design.basis(),
                     penalty ? penalty->eta : Eigen::VectorXd::Zero(design.d()),
                     design.w(),
                     design.weight_truncation(),
                     std::move(solved.system),
                     solved.effective_df,
                     solved.ridge_applied};
  return fit;
}

double weighted_rss(const Design& design, const Eigen::VectorXd& vec_a) {
  double rss = 0.0;
  for (std::size_t r = 0; r < design.rows(); ++r) {
    const double e = design.y()[static_cast<Eigen::Index>(r)] - design.predict(r, vec_a);
    rss += design.w()[static_cast<Eigen::Index>(r)] * e * e;
  }
  return rss;
}

// GCV for several penalties on one design; the moments are formed once.
class GcvEvaluator {
 public:
  GcvEvaluator(const Design& design, int derivative_order, GcvSampleSize sample_size)
      : design_(design), penalty_gram_(design.basis().penalty_gram(derivative_order)) {
    design.weighted_moments(Eigen::VectorXd(), gram_, score_);
    size_ = static_cast<double>(design.rows());
    if (sample_size == GcvSampleSize::kEffective && design.rows() > 0) {
      const double sw2 = design.w().squaredNorm();
      if (sw2 > 0.0) size_ = design.w().sum() * design.w().sum() / sw2;
    }
    effective_ = sample_size == GcvSampleSize::kEffective;
  }

  double operator()(const Eigen::VectorXd& eta) const {
    const Penalty penalty{eta, penalty_gram_};
    const auto solved = solve_system(gram_, score_, penalty, true);
    const double n = static_cast<double>(design_.rows());
    const double denom = 1.0 - solved.effective_df / size_;
    if (effective_ && !(denom > 0.0)) return std::numeric_limits<double>::infinity();
    return (weighted_rss(design_, solved.vec_a) / n) / (denom * denom);
  }

  // Score, or +inf when the system is singular.
  double safe(const Eigen::VectorXd& eta) const {
    try {
      const double s = (*this)(eta);
      return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularSystem) throw;
      return std::numeric_limits<double>::infinity();
    }
  }

 private:
  const Design& design_;
  Eigen::MatrixXd penalty_gram_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd score_;
  double size_ = 0.0;
  bool effective_ = false;
};

}  // namespace

CoefficientFit solve_wls(const Design& design, const std::optional<Penalty>& penalty) {
  return solve_wls(design, penalty, Eigen::VectorXd());
}

CoefficientFit solve_wls(const Design& design, const std::optional<Penalty>& penalty,
                         const Eigen::VectorXd& multipliers) {
  if (multipliers.size() != 0 && static_cast<std::size_t>(multipliers.size()) != design.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "multipliers are not aligned with the design rows");
  }
  Eigen::MatrixXd gram;
  Eigen::VectorXd score;
  design.weighted_moments(multipliers, gram, score);
  return make_fit(design, penalty, solve_system(gram, score, penalty, true));
}

double gcv_score(const Design& design, const Eigen::VectorXd& eta, int derivative_order, GcvSampleSize sample_size) {
  return GcvEvaluator(design, derivative_order, sample_size)(eta);
}

std::vector<double> TuningGrid::default_etas() {
  std::vector<double> etas{0.0};
  for (int k = 0; k < 13; ++k) etas.push_back(std::pow(10.0, -4.0 + 8.0 * k / 12.0));
  return etas;
}

std::vector<int> TuningGrid::dimensions_for(int order, std::size_t n_obs, int d) const {
  std::vector<int> out;
  if (!dimensions.empty()) {
    for (int q : dimensions)
      if (q >= order) out.push_back(q);
    return out;
  }
  const int limit = std::min<int>(15, static_cast<int>(n_obs / (4 * static_cast<std::size_t>(d))));
  for (int q = order + 1; q <= limit; ++q) out.push_back(q);
  return out;
}

namespace {

SplineBasis make_basis(const RegressionData& data, int order, int dimension, KnotPlacement placement) {
  if (placement == KnotPlacement::kEqual) return SplineBasis::equal(order, dimension, data.tau);
  return SplineBasis::quantile(order, dimension, data.tau, data.t);
}

// a beats b: strictly smaller score, or a tie (relative 1e-12) with larger eta.
bool better(double score, double eta_sum, double best_score, double best_eta_sum) {
  if (!std::isfinite(score)) return false;
  if (!std::isfinite(best_score)) return true;
  const double tol = 1e-12 * std::max(std::abs(best_score), std::numeric_limits<double>::min());
  if (score < best_score - tol) return true;
  return std::abs(score - best_score) <= tol && eta_sum > best_eta_sum;
}

}  // namespace

TuningResult select_tuning(const RegressionData& data, const TuningGrid& grid) {
  const int d = data.d();
  const auto etas = grid.etas.empty() ? TuningGrid::default_etas() : grid.etas;
  if (grid.orders.empty() || etas.empty()) throw Error(ErrorCode::kInvalidArgument, "tuning grid is empty");
  for (double e : etas)
    if (!(e >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "eta grid values must be >= 0");

  TuningResult best;
  best.gcv = std::numeric_limits<double>::infinity();
  double best_eta_sum = -1.0;
  for (int order : grid.orders) {
    if (order <= grid.derivative_order) {
      throw Error(ErrorCode::kInvalidArgument, "spline order must exceed the penalty derivative order");
    }
    std::vector<int> seen;
    for (int requested : grid.dimensions_for(order, data.rows(), d)) {
      const auto basis = make_basis(data, order, requested, grid.placement);
      const int q = basis.dimension();
      if (std::find(seen.begin(), seen.end(), q) != seen.end()) continue;
      seen.push_back(q);
      const Design design(data, basis);
      const GcvEvaluator gcv(design, grid.derivative_order, grid.sample_size);
      for (double eta : etas) {
        const Eigen::VectorXd eta_vec = Eigen::VectorXd::Constant(d, eta);
        const double s = gcv.safe(eta_vec);
        best.trace.push_back({order, q, eta_vec, s});
        if (better(s, eta * d, best.gcv, best_eta_sum)) {
          best.order = order;
          best.dimension = q;
          best.eta = eta_vec;
          best.gcv = s;
          best_eta_sum = eta * d;
        }
      }
    }
  }
  if (!std::isfinite(best.gcv)) {
    throw Error(ErrorCode::kSingularSystem, "no tuning candidate produced a finite GCV score");
  }

  // Coordinate refinement of the per-coefficient penalties.
  const auto basis = make_basis(data, best.order, best.dimension, grid.placement);
  const Design design(data, basis);
  const GcvEvaluator gcv(design, grid.derivative_order, grid.sample_size);
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd eta_vec = best.eta;
    for (double eta : etas) {
      eta_vec[j] = eta;
      const double s = gcv.safe(eta_vec);
      best.trace.push_back({best.order, best.dimension, eta_vec, s});
      if (better(s, eta_vec.sum(), best.gcv, best.eta.sum())) {
        best.eta = eta_vec;
        best.gcv = s;
      }
    }
  }
  return best;
}

SplineBasis tuned_basis(const RegressionData& data, const TuningResult& tuning, KnotPlacement placement) {
  return make_basis(data, tuning.order, tuning.dimension, placement);
}

Eigen::VectorXd eval_beta(const CoefficientFit& fit, double t) { return fit.a_hat.transpose() * fit.basis.eval(t); }

Eigen::VectorXd residuals(const RegressionData& data, const CoefficientFit& fit) {
  if (data.d() != fit.d()) throw Error(ErrorCode::kDimensionMismatch, "fit and data covariate dimensions differ");
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.rows()));
  for (std::size_t k = 0; k < data.rows(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    r[i] = data.y[i] - eval_beta(fit, data.t[k]).dot(data.x.row(i));
  }
  return r;
}

Eigen::VectorXd residuals(const LongitudinalDataset& ds, const CoefficientFit& fit) {
  return residuals(RegressionData::from(ds, WeightSet::unit(ds.total_observations())), fit);
}

}  // namespace ivcm
