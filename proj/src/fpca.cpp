#include "ivcm/fpca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "ivcm/error.hpp"
#include "ivcm/stats.hpp"

namespace ivcm {

std::vector<RawCovariancePoint> raw_covariances(const std::vector<double>& times,
                                                const std::vector<std::size_t>& subjects,
                                                const Eigen::VectorXd& residuals, const Eigen::VectorXd& weights) {
  if (times.size() != subjects.size() || static_cast<Eigen::Index>(times.size()) != residuals.size())
    throw Error(ErrorCode::kDimensionMismatch, "times, subjects and residuals differ in length");
  const bool weighted = weights.size() > 0;
  if (weighted && weights.size() != residuals.size())
    throw Error(ErrorCode::kDimensionMismatch, "weights not aligned with the residuals");
  if (weighted && !(weights.array() > 0.0).all()) throw Error(ErrorCode::kInvalidArgument, "weights must be positive");
  std::map<std::size_t, std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < times.size(); ++r) rows[subjects[r]].push_back(r);
  std::vector<RawCovariancePoint> out;
  for (const auto& [id, idx] : rows) {
    for (std::size_t a : idx)
      for (std::size_t b : idx) {
        if (a == b) continue;
        const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
        out.push_back({times[a], times[b], residuals[ia] * residuals[ib], id, weighted ? weights[ia] * weights[ib] : 1.0});
      }
  }
  return out;
}

std::vector<RawCovariancePoint> raw_covariances(const LongitudinalDataset& ds, const Eigen::VectorXd& residuals,
                                                const Eigen::VectorXd& weights) {
  if (static_cast<std::size_t>(residuals.size()) != ds.total_observations())
    throw Error(ErrorCode::kDimensionMismatch, "residuals not aligned with the dataset");
  std::vector<double> times;
  std::vector<std::size_t> subjects;
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (const auto& obs : ds.subject(i).observations) {
      times.push_back(obs.time);
      subjects.push_back(i);
    }
  return raw_covariances(times, subjects, residuals, weights);
}

namespace {

struct SPoint {
  double s, t, y, n;
};

// Clouds much larger than the number of bins of width h/8 are collapsed to
// one point per bin at the weighted bin centroid, carrying the weighted mean
// value and the total weight. Points on a plane stay on it, so constants and planes are
// still reproduced exactly.
std::vector<SPoint> prepare_points(const std::vector<RawCovariancePoint>& points, double h) {
  std::vector<SPoint> out;
  if (points.empty()) return out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : points) {
    lo = std::min({lo, p.s, p.t});
    hi = std::max({hi, p.s, p.t});
  }
  const double width = h / 8.0;
  const double bins = std::floor((hi - lo) / width) + 1.0;
  if (bins * bins * 2.0 > static_cast<double>(points.size())) {
    out.reserve(points.size());
    for (const auto& p : points) out.push_back({p.s, p.t, p.value, p.weight});
    return out;
  }
  const auto m = static_cast<std::size_t>(bins);
  struct Bin {
    double n = 0, s = 0, t = 0, y = 0;
  };
  std::vector<Bin> grid(m * m);
  auto index = [&](double x) { return std::min(static_cast<std::size_t>((x - lo) / width), m - 1); };
  for (const auto& p : points) {
    auto& b = grid[index(p.s) * m + index(p.t)];
    b.n += p.weight;
    b.s += p.weight * p.s;
    b.t += p.weight * p.t;
    b.y += p.weight * p.value;
  }
  for (const auto& b : grid)
    if (b.n > 0.0) out.push_back({b.s / b.n, b.t / b.n, b.y / b.n, b.n});
  return out;
}

// Moments for one cell; u, v are scaled offsets (x_i - x) / h.
struct Moments {
  double m[6] = {0, 0, 0, 0, 0, 0};  // w, wu, wv, wuu, wuv, wvv
  double r[3] = {0, 0, 0};           // wy, wuy, wvy
  void add(double w, double u, double v, double y) {
    m[0] += w;
    m[1] += w * u;
    m[2] += w * v;
    m[3] += w * u * u;
    m[4] += w * u * v;
    m[5] += w * v * v;
    r[0] += w * y;
    r[1] += w * u * y;
    r[2] += w * v * y;
  }
  double solve() const {
    Eigen::Matrix3d a;
    a << m[0], m[1], m[2], m[1], m[3], m[4], m[2], m[4], m[5];
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(a);
    const auto& ev = es.eigenvalues();
    if (ev[0] > 1e-10 * ev[2]) {
      const Eigen::Vector3d sol = es.eigenvectors() * (es.eigenvectors().transpose() * Eigen::Vector3d(r[0], r[1], r[2]))
                                                          .cwiseQuotient(ev);
      return sol[0];
    }
    return r[0] / m[0];
  }
};

// Row-wise smoother. Points within h of the row value in s form a t-sorted
// window; cells along t are then fitted either directly or, for the
// Epanechnikov kernel, from power sums about a nearby anchor that slide with
// the grid.
class CellSmoother {
 public:
  CellSmoother(std::vector<SPoint> points, Kernel kernel) : kernel_(kernel), pts_(std::move(points)) {
    std::sort(pts_.begin(), pts_.end(), [](const SPoint& a, const SPoint& b) { return a.t < b.t; });
  }

  // Fits cells (gs, grid[j]) for j in [j_begin, j_end); cells with no kernel
  // mass are listed in `empty`.
  void row(double gs, const std::vector<double>& grid, std::size_t j_begin, std::size_t j_end, double h,
           double* out, std::vector<std::size_t>& empty) {
    window_.clear();
    for (const auto& p : pts_) {
      const double u = (p.s - gs) / h;
      const double w = kernel_value(kernel_, u);
      if (w > 0.0) window_.push_back({p.t, u, p.y, p.n * w});
    }
    if (kernel_ == Kernel::kEpanechnikov && j_end - j_begin > 1) {
      sliding(grid, j_begin, j_end, h, out, empty);
      return;
    }
    for (std::size_t j = j_begin; j < j_end; ++j) {
      const auto start = std::upper_bound(window_.begin(), window_.end(), grid[j] - h,
                                          [](double x, const WPoint& p) { return x < p.t; }) -
                         window_.begin();
      if (!direct(static_cast<std::size_t>(start), grid[j], h, out[j])) empty.push_back(j);
    }
  }

 private:
  struct WPoint {
    double t, u, y, ws;
  };

  bool direct(std::size_t start, double gt, double h, double& value) const {
    Moments mo;
    for (std::size_t k = start; k < window_.size() && window_[k].t < gt + h; ++k) {
      const auto& p = window_[k];
      const double v = (p.t - gt) / h;
      const double wt = kernel_value(kernel_, v);
      if (wt <= 0.0) continue;
      mo.add(p.ws * wt, p.u, v, p.y);
    }
    if (!(mo.m[0] > 0.0)) return false;
    value = mo.solve();
    return true;
  }

  // A[f][p] = sum ws f a^p over the window, a = (t - anchor) / h and
  // f in {1, u, u^2, y, uy}; only the powers used below are kept.
  void accumulate(const WPoint& p, double anchor, double h, double sign) {
    const double a = (p.t - anchor) / h;
    const double a2 = a * a;
    const double w = sign * p.ws;
    const double wu = w * p.u, wuu = wu * p.u, wy = w * p.y, wuy = wu * p.y;
    acc_[0][0] += w;
    acc_[0][1] += w * a;
    acc_[0][2] += w * a2;
    acc_[0][3] += w * a2 * a;
    acc_[0][4] += w * a2 * a2;
    acc_[1][0] += wu;
    acc_[1][1] += wu * a;
    acc_[1][2] += wu * a2;
    acc_[1][3] += wu * a2 * a;
    acc_[2][0] += wuu;
    acc_[2][1] += wuu * a;
    acc_[2][2] += wuu * a2;
    acc_[3][0] += wy;
    acc_[3][1] += wy * a;
    acc_[3][2] += wy * a2;
    acc_[3][3] += wy * a2 * a;
    acc_[4][0] += wuy;
    acc_[4][1] += wuy * a;
    acc_[4][2] += wuy * a2;
  }

  void sliding(const std::vector<double>& grid, std::size_t j_begin, std::size_t j_end, double h, double* out,
               std::vector<std::size_t>& empty) {
    static constexpr double kBinom[5][5] = {
        {1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, {1, 2, 1, 0, 0}, {1, 3, 3, 1, 0}, {1, 4, 6, 4, 1}};
    const std::size_t n = window_.size();
    std::size_t lo = 0, hi = 0;
    double anchor = 0.0;
    bool anchored = false;
    for (std::size_t j = j_begin; j < j_end; ++j) {
      const double gt = grid[j];
      const bool reanchor = !anchored || std::abs(gt - anchor) > h;
      while (lo < n && window_[lo].t <= gt - h) {
        if (lo < hi && !reanchor) accumulate(window_[lo], anchor, h, -1.0);
        ++lo;
      }
      if (hi < lo) hi = lo;
      while (hi < n && window_[hi].t < gt + h) {
        if (!reanchor) accumulate(window_[hi], anchor, h, 1.0);
        ++hi;
      }
      if (reanchor) {
        anchor = gt;
        anchored = true;
        for (auto& r : acc_) std::fill(std::begin(r), std::end(r), 0.0);
        for (std::size_t k = lo; k < hi; ++k) accumulate(window_[k], anchor, h, 1.0);
      }
      if (lo == hi) {
        empty.push_back(j);
        continue;
      }
      // shift the power sums to center gt: v = a + d
      const double d = (anchor - gt) / h;
      double dp[5] = {1, d, d * d, d * d * d, d * d * d * d};
      double sm[5][5];
      for (int c = 0; c < 5; ++c)
        for (int p = 0; p < 5; ++p) {
          double v = 0.0;
          for (int r = 0; r <= p; ++r) v += kBinom[p][r] * acc_[c][r] * dp[p - r];
          sm[c][p] = v;
        }
      Moments mo;
      mo.m[0] = 0.75 * (sm[0][0] - sm[0][2]);
      mo.m[1] = 0.75 * (sm[1][0] - sm[1][2]);
      mo.m[2] = 0.75 * (sm[0][1] - sm[0][3]);
      mo.m[3] = 0.75 * (sm[2][0] - sm[2][2]);
      mo.m[4] = 0.75 * (sm[1][1] - sm[1][3]);
      mo.m[5] = 0.75 * (sm[0][2] - sm[0][4]);
      mo.r[0] = 0.75 * (sm[3][0] - sm[3][2]);
      mo.r[1] = 0.75 * (sm[4][0] - sm[4][2]);
      mo.r[2] = 0.75 * (sm[3][1] - sm[3][3]);
      if (mo.m[0] > 1e-8 * acc_[0][0]) {
        out[j] = mo.solve();
      } else if (!direct(lo, gt, h, out[j])) {
        empty.push_back(j);
      }
    }
  }

  Kernel kernel_;
  std::vector<SPoint> pts_;
  std::vector<WPoint> window_;
  double acc_[5][5] = {};
};

}  // namespace

Eigen::MatrixXd local_linear_surface(const std::vector<RawCovariancePoint>& points, const std::vector<double>& grid,
                                     double h, const SurfaceOptions& options) {
  if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorCode::kNonPositiveBandwidth, "surface bandwidth must be positive");
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw Error(ErrorCode::kInvalidArgument, "grid must be increasing");
  const std::size_t g = grid.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
  out.setZero();
  CellSmoother smoother(prepare_points(points, h), options.kernel);
  std::vector<std::pair<std::size_t, std::size_t>> empty_cells;
  std::vector<double> row_buf(g);
  std::vector<std::size_t> empty;
  for (std::size_t i = 0; i < g; ++i) {
    empty.clear();
    smoother.row(grid[i], grid, 0, g, h, row_buf.data(), empty);
    std::size_t e = 0;
    for (std::size_t j = 0; j < g; ++j) {
      if (e < empty.size() && empty[e] == j) {
        empty_cells.emplace_back(i, j);
        ++e;
        continue;
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row_buf[j];
    }
  }
  for (const auto& [i, j] : empty_cells) {
    bool filled = false;
    for (double wide : {2.0 * h, 4.0 * h}) {
      std::vector<std::size_t> still;
      smoother.row(grid[i], grid, j, j + 1, wide, row_buf.data(), still);
      if (still.empty()) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row_buf[j];
        filled = true;
        break;
      }
    }
    if (!filled)
      throw Error(ErrorCode::kEmptyNeighborhood,
                  "no raw covariance points near (" + std::to_string(grid[i]) + ", " + std::to_string(grid[j]) +
                      ") even at 4h");
  }
  if (options.symmetrize) {
    const Eigen::MatrixXd sym = 0.5 * (out + out.transpose());
    out = sym;
  }
  return out;
}

double interpolate_surface(const Eigen::MatrixXd& surface, const std::vector<double>& grid, double s, double t) {
  const std::size_t g = grid.size();
  if (g < 2) return surface(0, 0);
  const double delta = (grid.back() - grid.front()) / static_cast<double>(g - 1);
  auto locate = [&](double x, std::size_t& k, double& frac) {
    double pos = (x - grid.front()) / delta;
    pos = std::clamp(pos, 0.0, static_cast<double>(g - 1));
    k = std::min(static_cast<std::size_t>(pos), g - 2);
    frac = pos - static_cast<double>(k);
  };
  std::size_t i, j;
  double fs, ft;
  locate(s, i, fs);
  locate(t, j, ft);
  const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
  return (1 - fs) * (1 - ft) * surface(a, b) + fs * (1 - ft) * surface(a + 1, b) + (1 - fs) * ft * surface(a, b + 1) +
         fs * ft * surface(a + 1, b + 1);
}

double mean_within_subject_gap(const std::vector<RawCovariancePoint>& points) {
  std::map<std::size_t, std::set<double>> times;
  for (const auto& p : points) {
    times[p.subject].insert(p.s);
    times[p.subject].insert(p.t);
  }
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& [id, ts] : times) {
    if (ts.size() < 2) continue;
    total += *ts.rbegin() - *ts.begin();
    count += ts.size() - 1;
  }
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "no within-subject gaps in the covariance cloud");
  return total / static_cast<double>(count);
}

BandwidthSelection select_bandwidth_cov(const std::vector<RawCovariancePoint>& points,
                                        const std::vector<double>& grid, const BandwidthOptions& options) {
  if (points.size() < 50) throw Error(ErrorCode::kInvalidArgument, "bandwidth selection needs at least 50 points");
  if (options.folds < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 folds");
  BandwidthSelection out;
  out.candidates = options.candidates;
  if (out.candidates.empty()) {
    const double tau = grid.back() - grid.front();
    const double gap = options.mean_gap ? *options.mean_gap : mean_within_subject_gap(points);
    const double hi = tau / 4.0;
    const double lo = std::min(2.0 * gap, hi);
    for (int k = 0; k < 8; ++k) out.candidates.push_back(lo * std::pow(hi / lo, k / 7.0));
  }
  std::sort(out.candidates.begin(), out.candidates.end());
  out.candidates.erase(std::unique(out.candidates.begin(), out.candidates.end()), out.candidates.end());

  // folds follow each subject's own data, not its label
  struct Key {
    double first = std::numeric_limits<double>::infinity();
    double last = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;
  };
  std::map<std::size_t, Key> keys;
  for (const auto& p : points) {
    auto& k = keys[p.subject];
    k.first = std::min(k.first, p.s);
    k.last = std::max(k.last, p.s);
    ++k.count;
  }
  std::vector<std::pair<std::tuple<double, double, std::size_t, std::size_t>, std::size_t>> order;
  for (const auto& [id, k] : keys) order.push_back({{k.first, k.last, k.count, id}, id});
  std::sort(order.begin(), order.end());
  std::map<std::size_t, int> fold_of;
  for (std::size_t r = 0; r < order.size(); ++r) fold_of[order[r].second] = static_cast<int>(r % static_cast<std::size_t>(options.folds));
  std::vector<std::vector<RawCovariancePoint>> train(static_cast<std::size_t>(options.folds));
  std::vector<std::vector<RawCovariancePoint>> test(static_cast<std::size_t>(options.folds));
  for (const auto& p : points) {
    const int f = fold_of[p.subject];
    for (int k = 0; k < options.folds; ++k) (k == f ? test : train)[static_cast<std::size_t>(k)].push_back(p);
  }

  double scale = 0.0;
  for (const auto& p : points) scale += p.weight * p.value * p.value;
  for (double h : out.candidates) {
    double err = 0.0;
    try {
      for (int k = 0; k < options.folds; ++k) {
        const auto& te = test[static_cast<std::size_t>(k)];
        if (te.empty()) continue;
        const auto surf = local_linear_surface(train[static_cast<std::size_t>(k)], grid, h, options.surface);
        for (const auto& p : te) {
          const double r = p.value - interpolate_surface(surf, grid, p.s, p.t);
          err += p.weight * r * r;
        }
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyNeighborhood) throw;
      err = std::numeric_limits<double>::infinity();
    }
    out.cv_error.push_back(err);
  }
  const double best = *std::min_element(out.cv_error.begin(), out.cv_error.end());
  if (!std::isfinite(best))
    throw Error(ErrorCode::kEmptyNeighborhood, "every candidate bandwidth left grid cells without data");
  const double tol = 1e-12 * std::max(best, 1e-4 * scale);
  for (std::size_t k = out.candidates.size(); k-- > 0;)
    if (out.cv_error[k] <= best + tol) {
      out.bandwidth = out.candidates[k];
      break;
    }
  return out;
}

FpcaResult eigen_decompose(const Eigen::MatrixXd& surface, const std::vector<double>& grid, double fve_threshold) {
  const auto g = static_cast<Eigen::Index>(grid.size());
  if (surface.rows() != g || surface.cols() != g) throw Error(ErrorCode::kDimensionMismatch, "surface does not match grid");
  if (!(fve_threshold > 0.0 && fve_threshold <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "fve threshold must lie in (0, 1]");
  const double mag = std::max(1.0, surface.cwiseAbs().maxCoeff());
  if ((surface - surface.transpose()).cwiseAbs().maxCoeff() > 1e-10 * mag)
    throw Error(ErrorCode::kNonSymmetricInput, "covariance surface is not symmetric");

  const std::vector<double> wv = g > 1 ? trapezoid_weights(grid) : std::vector<double>{1.0};
  const Eigen::VectorXd sw = Eigen::Map<const Eigen::VectorXd>(wv.data(), g).cwiseSqrt();
  Eigen::MatrixXd op = sw.asDiagonal() * surface * sw.asDiagonal();
  op = 0.5 * (op + op.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op);

  FpcaResult out;
  out.grid = grid;
  out.surface = surface;
  out.fve_threshold = fve_threshold;
  out.raw_eigenvalues = es.eigenvalues().reverse();
  out.eigenvalues = out.raw_eigenvalues.cwiseMax(0.0);
  out.eigenfunctions = sw.cwiseInverse().asDiagonal() * es.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < g; ++k) {
    Eigen::Index arg;
    out.eigenfunctions.col(k).cwiseAbs().maxCoeff(&arg);
    if (out.eigenfunctions(arg, k) < 0.0) out.eigenfunctions.col(k) *= -1.0;
  }
  const double total = out.eigenvalues.sum();
  if (total > 0.0) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < g; ++k) {
      acc += out.eigenvalues[k];
      if (acc >= fve_threshold * total * (1 - 1e-12)) {
        out.n_components = static_cast<int>(k + 1);
        break;
      }
    }
  }
  return out;
}

FpcaResult run_fpca(const std::vector<double>& times, const std::vector<std::size_t>& subjects,
                    const Eigen::VectorXd& residuals, double tau, const FpcaOptions& options,
                    const Eigen::VectorXd& weights) {
  if (options.grid_size < 2) throw Error(ErrorCode::kInvalidArgument, "grid size must be at least 2");
  const auto points = raw_covariances(times, subjects, residuals, weights);
  const auto grid = linspace(0.0, tau, static_cast<std::size_t>(options.grid_size));
  double h;
  if (options.bandwidth) {
    h = *options.bandwidth;
  } else {
    h = select_bandwidth_cov(points, grid, options.selection).bandwidth;
  }
  auto out = eigen_decompose(local_linear_surface(points, grid, h, options.selection.surface), grid,
                             options.fve_threshold);
  out.bandwidth = h;
  return out;
}

FpcaResult run_fpca(const LongitudinalDataset& ds, const Eigen::VectorXd& residuals, const FpcaOptions& options,
                    const Eigen::VectorXd& weights) {
  std::vector<double> times;
  std::vector<std::size_t> subjects;
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (const auto& obs : ds.subject(i).observations) {
      times.push_back(obs.time);
      subjects.push_back(i);
    }
  return run_fpca(times, subjects, residuals, ds.tau(), options, weights);
}

}  // namespace ivcm
