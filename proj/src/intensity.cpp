#include "ivcm/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ivcm/error.hpp"
#include "ivcm/io.hpp"
#include "ivcm/stats.hpp"

namespace ivcm {

// ---------------------------------------------------------------------------
// HistoryCovariateSpec
// ---------------------------------------------------------------------------

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double transform_outcome(OutcomeTransform transform, double y) {
  if (transform == OutcomeTransform::kIdentity) return y;
  if (!(y > -1.0)) throw Error(ErrorCode::kInvalidArgument, "log1p transform needs outcomes > -1");
  return std::log1p(y);
}

int resolve_covariate(std::string_view token, const std::vector<std::string>& names) {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == token) return static_cast<int>(k);
  try {
    const double v = io::parse_double(token);
    if (v == std::floor(v) && v >= 0 && v < static_cast<double>(names.size())) return static_cast<int>(v);
  } catch (const Error&) {
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown covariate '" + std::string(token) + "'");
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? text.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

HistoryCovariateSpec HistoryCovariateSpec::parse(std::string_view text, const std::vector<std::string>& names) {
  std::vector<HistoryCovariate> items;
  for (const auto& raw : split(text, ',')) {
    const auto parts = split(raw, ':');
    const auto& kind = parts[0];
    if (kind == "last_outcome") {
      LastOutcome item;
      if (parts.size() > 1 && !parts[1].empty()) {
        if (parts[1] == "log1p") item.transform = OutcomeTransform::kLog1p;
        else if (parts[1] != "identity") throw Error(ErrorCode::kInvalidArgument, "unknown transform '" + parts[1] + "'");
      }
      if (parts.size() > 2) item.initial = io::parse_double(parts[2]);
      if (parts.size() > 3) throw Error(ErrorCode::kInvalidArgument, "too many fields in '" + raw + "'");
      items.emplace_back(item);
    } else if (kind == "baseline") {
      if (parts.size() != 2) throw Error(ErrorCode::kInvalidArgument, "baseline needs one covariate: '" + raw + "'");
      items.emplace_back(BaselineCovariate{resolve_covariate(parts[1], names)});
    } else if (kind == "last") {
      if (parts.size() < 2 || parts.size() > 3) throw Error(ErrorCode::kInvalidArgument, "bad item '" + raw + "'");
      LastCovariate item{resolve_covariate(parts[1], names), 0.0};
      if (parts.size() == 3) item.initial = io::parse_double(parts[2]);
      items.emplace_back(item);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown history covariate '" + raw + "'");
    }
  }
  return HistoryCovariateSpec(std::move(items));
}

HistoryCovariateSpec HistoryCovariateSpec::standard(int d, OutcomeTransform transform) {
  std::vector<HistoryCovariate> items{LastOutcome{transform, 0.0}};
  for (int k = 1; k < d; ++k) items.emplace_back(BaselineCovariate{k});
  return HistoryCovariateSpec(std::move(items));
}

std::string HistoryCovariateSpec::describe(const std::vector<std::string>& names) const {
  std::string out;
  for (const auto& item : items_) {
    if (!out.empty()) out += ",";
    out += std::visit(Overloaded{
                          [](const LastOutcome& x) {
                            return std::string("last_outcome:") +
                                   (x.transform == OutcomeTransform::kLog1p ? "log1p" : "identity") + ":" +
                                   io::format_double(x.initial);
                          },
                          [&](const BaselineCovariate& x) {
                            return "baseline:" + names.at(static_cast<std::size_t>(x.index));
                          },
                          [&](const LastCovariate& x) {
                            return "last:" + names.at(static_cast<std::size_t>(x.index)) + ":" +
                                   io::format_double(x.initial);
                          },
                      },
                      item);
  }
  return out;
}

Eigen::MatrixXd HistoryCovariateSpec::history_table(const SubjectTrajectory& s) const {
  const auto m = static_cast<Eigen::Index>(s.observations.size());
  Eigen::MatrixXd table(m + 1, size());
  for (int c = 0; c < size(); ++c) {
    std::visit(Overloaded{
                   [&](const LastOutcome& x) {
                     table(0, c) = x.initial;
                     for (Eigen::Index k = 1; k <= m; ++k)
                       table(k, c) = transform_outcome(x.transform, s.observations[static_cast<std::size_t>(k - 1)].outcome);
                   },
                   [&](const BaselineCovariate& x) {
                     if (s.baseline.size() <= x.index) {
                       throw Error(ErrorCode::kInvalidArgument,
                                   "subject '" + s.id + "' has no baseline covariates");
                     }
                     table.col(c).setConstant(s.baseline[x.index]);
                   },
                   [&](const LastCovariate& x) {
                     table(0, c) = x.initial;
                     for (Eigen::Index k = 1; k <= m; ++k) {
                       const auto& cov = s.observations[static_cast<std::size_t>(k - 1)].covariates;
                       if (cov.size() <= x.index) throw Error(ErrorCode::kDimensionMismatch, "last covariate index");
                       table(k, c) = cov[x.index];
                     }
                   },
               },
               items_[static_cast<std::size_t>(c)]);
  }
  return table;
}

Eigen::VectorXd HistoryCovariateSpec::evaluate(const SubjectTrajectory& s, double t) const {
  const auto before = std::count_if(s.observations.begin(), s.observations.end(),
                                    [t](const Observation& o) { return o.time < t; });
  return history_table(s).row(before).transpose();
}

// ---------------------------------------------------------------------------
// Risk-set bookkeeping shared by the likelihood and Breslow estimator
// ---------------------------------------------------------------------------

namespace {

struct EventTime {
  double time;
  // (subject, visit index) of every visit at this time
  std::vector<std::pair<std::size_t, std::size_t>> events;
};

class RiskSetData {
 public:
  RiskSetData(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec) : ds_(ds), p_(spec.size()) {
    if (p_ == 0) throw Error(ErrorCode::kInvalidArgument, "history covariate spec is empty");
    tables_.reserve(ds.n());
    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> all;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      tables_.push_back(spec.history_table(ds.subject(i)));
      if (!tables_.back().allFinite()) {
        throw Error(ErrorCode::kNonFiniteValue, "history covariates of subject '" + ds.subject(i).id + "'");
      }
      for (std::size_t j = 0; j < ds.subject(i).size(); ++j)
        all.push_back({ds.subject(i).observations[j].time, {i, j}});
    }
    std::sort(all.begin(), all.end());
    for (const auto& [t, ev] : all) {
      if (times_.empty() || times_.back().time != t) times_.push_back({t, {}});
      times_.back().events.push_back(ev);
    }
  }

  int p() const { return p_; }
  const std::vector<EventTime>& event_times() const { return times_; }
  const Eigen::MatrixXd& table(std::size_t i) const { return tables_[i]; }

  // Calls fn(k, risk) for each event time k in increasing order, where the
  // rows of `risk` are g_i(u_k) for every subject with C_i >= u_k.
  template <class Fn>
  void sweep(Fn&& fn) const {
    std::vector<std::size_t> cursor(ds_.n(), 0);
    Eigen::MatrixXd risk(static_cast<Eigen::Index>(ds_.n()), p_);
    for (std::size_t k = 0; k < times_.size(); ++k) {
      const double u = times_[k].time;
      Eigen::Index r = 0;
      for (std::size_t i = 0; i < ds_.n(); ++i) {
        const auto& s = ds_.subject(i);
        if (s.follow_up < u) continue;
        auto& c = cursor[i];
        while (c < s.size() && s.observations[c].time < u) ++c;
        risk.row(r++) = tables_[i].row(static_cast<Eigen::Index>(c));
      }
      if (r == 0) throw Error(ErrorCode::kEmptyRiskSet, "no subject at risk at t = " + io::format_double(u));
      fn(k, risk.topRows(r));
    }
  }

 private:
  const LongitudinalDataset& ds_;
  int p_;
  std::vector<Eigen::MatrixXd> tables_;
  std::vector<EventTime> times_;
};

PartialLikelihood evaluate_likelihood(const RiskSetData& data, const Eigen::VectorXd& gamma) {
  const int p = data.p();
  if (gamma.size() != p) throw Error(ErrorCode::kDimensionMismatch, "gamma has wrong length");
  if (!gamma.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "gamma");
  PartialLikelihood out{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  data.sweep([&](std::size_t k, const auto& risk) {
    const Eigen::VectorXd eta = risk * gamma;
    const double shift = eta.maxCoeff();
    const Eigen::VectorXd e = (eta.array() - shift).exp();
    const double s0 = e.sum();
    const Eigen::VectorXd mean = risk.transpose() * e / s0;
    const Eigen::MatrixXd second = risk.transpose() * e.asDiagonal() * risk / s0;
    const double log_s0 = shift + std::log(s0);
    const auto& events = data.event_times()[k].events;
    for (const auto& [i, j] : events) {
      const auto g = data.table(i).row(static_cast<Eigen::Index>(j)).transpose();
      out.value += g.dot(gamma) - log_s0;
      out.gradient += g - mean;
    }
    out.hessian -= static_cast<double>(events.size()) * (second - mean * mean.transpose());
  });
  out.hessian = 0.5 * (out.hessian + out.hessian.transpose());
  return out;
}

}  // namespace

PartialLikelihood partial_loglik(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                                 const Eigen::VectorXd& gamma) {
  return evaluate_likelihood(RiskSetData(ds, spec), gamma);
}

GammaFit fit_gamma(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec, const Eigen::VectorXd& init,
                   const NewtonOptions& options) {
  if (!(options.tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tolerance must be positive");
  const RiskSetData data(ds, spec);
  if (data.event_times().empty()) throw Error(ErrorCode::kInvalidArgument, "dataset has no visits");
  const int p = data.p();
  const Eigen::MatrixXd ridge = 1e-10 * Eigen::MatrixXd::Identity(p, p);

  GammaFit fit;
  fit.gamma = init;
  auto current = evaluate_likelihood(data, fit.gamma);
  fit.trace.push_back(current.value);
  for (int iter = 0;; ++iter) {
    const Eigen::MatrixXd info = -current.hessian;
    // A numerically zero direction of curvature means g is degenerate or collinear.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, info.diagonal().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() <= 1e-10 * scale) {
      throw Error(ErrorCode::kSingularHessian, "partial-likelihood information matrix is not positive definite");
    }
    if (current.gradient.cwiseAbs().maxCoeff() <= options.tol) {
      fit.loglik = current.value;
      fit.iterations = iter;
      return fit;
    }
    if (iter >= options.max_iter) {
      throw NoConvergenceError("Newton-Raphson hit max_iter = " + std::to_string(options.max_iter), fit.gamma, iter);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(info + ridge);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kSingularHessian, "information matrix factorization failed");
    }
    const Eigen::VectorXd step = llt.solve(current.gradient);
    double scale_step = 1.0;
    bool accepted = false;
    // differences below this are rounding noise in the summed log likelihood
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(current.value));
    for (int h = 0; h <= options.max_halvings; ++h, scale_step *= 0.5) {
      const Eigen::VectorXd candidate = fit.gamma + scale_step * step;
      if (!candidate.allFinite()) continue;
      auto next = evaluate_likelihood(data, candidate);
      if (std::isfinite(next.value) && next.value >= current.value - slack) {
        fit.gamma = candidate;
        current = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw NoConvergenceError("step halving failed to increase the partial likelihood", fit.gamma, iter);
    }
    fit.trace.push_back(current.value);
  }
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

double StepFunction::operator()(double t) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k) sum += increments[k];
  return sum;
}

double StepFunction::total() const { return std::accumulate(increments.begin(), increments.end(), 0.0); }

StepFunction breslow_cumulative(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                                const Eigen::VectorXd& gamma) {
  const RiskSetData data(ds, spec);
  if (gamma.size() != data.p()) throw Error(ErrorCode::kDimensionMismatch, "gamma has wrong length");
  StepFunction out;
  data.sweep([&](std::size_t k, const auto& risk) {
    const Eigen::VectorXd eta = risk * gamma;
    const double s0 = eta.array().exp().sum();
    const auto& et = data.event_times()[k];
    out.times.push_back(et.time);
    out.increments.push_back(static_cast<double>(et.events.size()) / s0);
  });
  return out;
}

std::string_view to_string(Kernel kernel) {
  switch (kernel) {
    case Kernel::kEpanechnikov: return "epanechnikov";
    case Kernel::kUniform: return "uniform";
    case Kernel::kTriangular: return "triangular";
    case Kernel::kBiweight: return "biweight";
  }
  return "epanechnikov";
}

Kernel kernel_from_string(std::string_view name) {
  for (auto k : {Kernel::kEpanechnikov, Kernel::kUniform, Kernel::kTriangular, Kernel::kBiweight})
    if (to_string(k) == name) return k;
  throw Error(ErrorCode::kInvalidArgument, "unknown kernel '" + std::string(name) + "'");
}

double kernel_value(Kernel kernel, double u) {
  const double a = std::abs(u);
  if (a > 1.0) return 0.0;
  switch (kernel) {
    case Kernel::kEpanechnikov: return 0.75 * (1.0 - u * u);
    case Kernel::kUniform: return 0.5;
    case Kernel::kTriangular: return 1.0 - a;
    case Kernel::kBiweight: {
      const double v = 1.0 - u * u;
      return 0.9375 * v * v;
    }
  }
  return 0.0;
}

SmoothedBaseline::SmoothedBaseline(StepFunction cumulative, double tau, double bandwidth, Kernel kernel)
    : cumulative_(std::move(cumulative)), tau_(tau), bandwidth_(bandwidth), kernel_(kernel) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw Error(ErrorCode::kNonPositiveBandwidth, "bandwidth must be positive");
  }
}

double SmoothedBaseline::raw(double t) const {
  const auto& ts = cumulative_.times;
  const auto lo = std::lower_bound(ts.begin(), ts.end(), t - bandwidth_);
  const auto hi = std::upper_bound(lo, ts.end(), t + bandwidth_);
  double sum = 0.0;
  for (auto it = lo; it != hi; ++it) {
    const auto k = static_cast<std::size_t>(it - ts.begin());
    sum += kernel_value(kernel_, (t - *it) / bandwidth_) * cumulative_.increments[k];
  }
  return sum / bandwidth_;
}

double SmoothedBaseline::operator()(double t) const { return std::max(raw(t), kBaselineFloor); }

SmoothedBaseline smooth_baseline(const StepFunction& cumulative, double tau, double bandwidth, Kernel kernel) {
  return SmoothedBaseline(cumulative, tau, bandwidth, kernel);
}

double default_bandwidth(double tau, std::size_t total_observations, double c) {
  if (total_observations < 1) throw Error(ErrorCode::kInvalidArgument, "bandwidth needs N >= 1");
  if (!(c > 0.0)) throw Error(ErrorCode::kInvalidArgument, "bandwidth constant must be positive");
  return c * tau * std::pow(static_cast<double>(total_observations), -0.2);
}

// ---------------------------------------------------------------------------
// First stage and weights
// ---------------------------------------------------------------------------

IntensityFit fit_intensity(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec,
                           const IntensityOptions& options) {
  const Eigen::VectorXd init = options.init.value_or(Eigen::VectorXd::Zero(spec.size()));
  const auto gfit = fit_gamma(ds, spec, init, options.newton);
  IntensityFit fit;
  fit.gamma = gfit.gamma;
  fit.loglik = gfit.loglik;
  fit.iterations = gfit.iterations;
  fit.trace = gfit.trace;
  fit.converged = true;
  fit.spec = spec;
  fit.cum_baseline = breslow_cumulative(ds, spec, fit.gamma);
  fit.bandwidth = options.bandwidth.value_or(default_bandwidth(ds.tau(), ds.total_observations(), options.bandwidth_c));
  fit.kernel = options.kernel;
  fit.baseline = SmoothedBaseline(fit.cum_baseline, ds.tau(), fit.bandwidth, fit.kernel);
  return fit;
}

WeightSet WeightSet::unit(std::size_t n_obs) {
  WeightSet w;
  w.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_obs));
  w.raw_max = 1.0;
  return w;
}

WeightSet truncate_weights(Eigen::VectorXd raw, std::optional<double> q) {
  WeightSet out;
  out.raw_max = raw.size() ? raw.maxCoeff() : 0.0;
  if (q) {
    if (!(*q > 0.0 && *q <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "truncation quantile must be in (0, 1]");
    const double cap = quantile_type7(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())), *q);
    raw = raw.cwiseMin(cap);
    out.truncation_quantile = q;
    out.truncation_value = cap;
  }
  out.weights = std::move(raw);
  return out;
}

WeightSet compute_weights(const LongitudinalDataset& ds, const HistoryCovariateSpec& spec, const IntensityFit& fit,
                          std::optional<double> truncation_quantile) {
  Eigen::VectorXd raw(static_cast<Eigen::Index>(ds.total_observations()));
  Eigen::Index r = 0;
  for (const auto& s : ds.subjects()) {
    const Eigen::MatrixXd table = spec.history_table(s);
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double eta = table.row(static_cast<Eigen::Index>(j)).dot(fit.gamma);
      raw[r++] = std::exp(-eta) / fit.baseline(s.observations[j].time);
    }
  }
  return truncate_weights(std::move(raw), truncation_quantile);
}

}  // namespace ivcm
