#include "ivcm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ivcm/error.hpp"
#include "ivcm/fpca.hpp"
#include "ivcm/inference.hpp"
#include "ivcm/intensity.hpp"
#include "ivcm/io.hpp"
#include "ivcm/parallel.hpp"
#include "ivcm/stats.hpp"
#include "ivcm/vcm.hpp"

namespace ivcm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    return io::parse_double(v);
  } catch (const Error&) {
    throw Error(ErrorCode::kParse, "config key '" + key + "': not a number: " + v);
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  const double x = parse_real(key, v);
  if (x != std::floor(x) || std::abs(x) > 9e15) throw Error(ErrorCode::kParse, "config key '" + key + "': not an integer: " + v);
  return static_cast<long long>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto s = lower(v);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw Error(ErrorCode::kParse, "config key '" + key + "': not a boolean: " + v);
}

std::vector<double> parse_reals(const std::string& key, const std::string& v, std::size_t n) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_real(key, item));
  if (out.size() != n) throw Error(ErrorCode::kParse, "config key '" + key + "' needs " + std::to_string(n) + " values");
  return out;
}

double sample_sd(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double mean_of(const std::vector<double>& x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kEW: return "EW";
    case Method::kTW: return "TW";
    case Method::kUW: return "UW";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  const auto s = lower(std::string(name));
  if (s == "ew") return Method::kEW;
  if (s == "tw") return Method::kTW;
  if (s == "uw") return Method::kUW;
  throw Error(ErrorCode::kInvalidArgument, "unknown method '" + std::string(name) + "' (expected EW, TW or UW)");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void SimulationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
  if (n < 1) fail("n must be ≥ 1");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(theta[0] >= theta[1] && theta[1] >= 0.0)) fail("theta must satisfy theta1 ≥ theta2 ≥ 0");
  if (!(sigma_eps2 >= 0.0)) fail("sigma_eps2 must be ≥ 0");
  if (!(std::abs(cov_corr) < 1.0)) fail("cov_corr must lie in (-1, 1)");
  if (!gamma.allFinite()) fail("gamma must be finite");
  if (!(std::abs(baseline_amplitude) < 1.0)) fail("baseline_amplitude must lie in (-1, 1)");
  if (!std::isfinite(x2_slope) || !std::isfinite(initial_last_outcome)) fail("x2_slope and initial_last_outcome must be finite");
  if (max_events < 1) fail("max_events must be ≥ 1");
  if (replicates < 1) fail("replicates must be ≥ 1");
  if (bootstrap < 2) fail("bootstrap must be ≥ 2");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (methods.empty()) fail("methods must not be empty");
  if (coverage_points < 2 || ise_points < 2 || fpca_grid < 2) fail("grid sizes must be ≥ 2");
  if (!(failure_budget >= 0.0 && failure_budget <= 1.0)) fail("failure_budget must lie in [0, 1]");
}

double SimulationConfig::beta(int j, double t) const {
  switch (j) {
    case 0: return t * t / (tau * tau);
    case 1: return (tau - t) * (tau - t) / (tau * tau);
    case 2: return 4.0 * t * (tau - t) / (tau * tau);
    default: throw Error(ErrorCode::kInvalidArgument, "beta index out of range");
  }
}

Eigen::Vector3d SimulationConfig::beta_all(double t) const { return {beta(0, t), beta(1, t), beta(2, t)}; }

double SimulationConfig::phi(int l, double t) const {
  const bool verbatim = eigenfunctions == EigenfunctionShape::kVerbatim;
  const double arg = verbatim ? kTwoPi * t : kTwoPi * t / tau;
  const double scale = verbatim ? std::sqrt(2.0) : std::sqrt(2.0 / tau);
  switch (l) {
    case 0: return scale * std::sin(arg);
    case 1: return scale * std::cos(arg);
    default: throw Error(ErrorCode::kInvalidArgument, "eigenfunction index out of range");
  }
}

double SimulationConfig::covariance(double s, double t) const {
  return theta[0] * phi(0, s) * phi(0, t) + theta[1] * phi(1, s) * phi(1, t);
}

double SimulationConfig::baseline(double t) const { return 1.0 + baseline_amplitude * std::sin(kTwoPi * t / tau); }

SimulationConfig SimulationConfig::parse(std::string_view text) {
  SimulationConfig cfg;
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": bad section header");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = lower(trim(line.substr(0, eq)));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "n") {
      const auto x = parse_int(key, v);
      if (x < 1) throw Error(ErrorCode::kInvalidArgument, "n must be ≥ 1");
      cfg.n = static_cast<std::size_t>(x);
    } else if (key == "tau") {
      cfg.tau = parse_real(key, v);
    } else if (key == "theta") {
      const auto t = parse_reals(key, v, 2);
      cfg.theta = {t[0], t[1]};
    } else if (key == "eigenfunctions") {
      const auto s = lower(v);
      if (s == "verbatim") cfg.eigenfunctions = EigenfunctionShape::kVerbatim;
      else if (s == "normalized") cfg.eigenfunctions = EigenfunctionShape::kNormalized;
      else throw Error(ErrorCode::kParse, "eigenfunctions must be verbatim or normalized");
    } else if (key == "sigma_eps2") {
      cfg.sigma_eps2 = parse_real(key, v);
    } else if (key == "cov_corr") {
      cfg.cov_corr = parse_real(key, v);
    } else if (key == "gamma") {
      const auto g = parse_reals(key, v, 3);
      cfg.gamma = {g[0], g[1], g[2]};
    } else if (key == "baseline_amplitude") {
      cfg.baseline_amplitude = parse_real(key, v);
    } else if (key == "x2_slope") {
      cfg.x2_slope = parse_real(key, v);
    } else if (key == "initial_last_outcome") {
      cfg.initial_last_outcome = parse_real(key, v);
    } else if (key == "max_events") {
      cfg.max_events = static_cast<std::size_t>(std::max(0LL, parse_int(key, v)));
    } else if (key == "sampler") {
      const auto s = lower(v);
      if (s == "auto") cfg.sampler = Sampler::kAuto;
      else if (s == "thinning") cfg.sampler = Sampler::kThinning;
      else throw Error(ErrorCode::kParse, "sampler must be auto or thinning");
    } else if (key == "seed") {
      const auto x = parse_int(key, v);
      if (x < 0) throw Error(ErrorCode::kInvalidArgument, "seed must be ≥ 0");
      cfg.seed = static_cast<std::uint64_t>(x);
    } else if (key == "replicates") {
      const auto x = parse_int(key, v);
      if (x < 1) throw Error(ErrorCode::kInvalidArgument, "replicates must be ≥ 1");
      cfg.replicates = static_cast<int>(x);
    } else if (key == "bootstrap") {
      cfg.bootstrap = static_cast<int>(parse_int(key, v));
    } else if (key == "bootstrap_penalized") {
      cfg.bootstrap_penalized = parse_bool(key, v);
    } else if (key == "alpha") {
      cfg.alpha = parse_real(key, v);
    } else if (key == "methods") {
      cfg.methods.clear();
      for (const auto& m : split_list(v)) cfg.methods.push_back(method_from_string(m));
    } else if (key == "coverage_points") {
      cfg.coverage_points = static_cast<int>(parse_int(key, v));
    } else if (key == "ise_points") {
      cfg.ise_points = static_cast<int>(parse_int(key, v));
    } else if (key == "fpca") {
      cfg.fpca = parse_bool(key, v);
    } else if (key == "fpca_weighted") {
      cfg.fpca_weighted = parse_bool(key, v);
    } else if (key == "fpca_grid") {
      cfg.fpca_grid = static_cast<int>(parse_int(key, v));
    } else if (key == "failure_budget") {
      cfg.failure_budget = parse_real(key, v);
    } else if (key == "threads") {
      cfg.threads = static_cast<unsigned>(std::max(0LL, parse_int(key, v)));
    } else {
      throw Error(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

SimulationConfig SimulationConfig::load(const std::string& path) { return parse(io::read_file(path)); }

std::string SimulationConfig::to_text() const {
  using io::format_double;
  std::ostringstream os;
  os << "[model]\n";
  os << "n = " << n << "\n";
  os << "tau = " << format_double(tau) << "\n";
  os << "theta = " << format_double(theta[0]) << ", " << format_double(theta[1]) << "\n";
  os << "eigenfunctions = " << (eigenfunctions == EigenfunctionShape::kVerbatim ? "verbatim" : "normalized") << "\n";
  os << "sigma_eps2 = " << format_double(sigma_eps2) << "\n";
  os << "cov_corr = " << format_double(cov_corr) << "\n";
  os << "gamma = " << format_double(gamma[0]) << ", " << format_double(gamma[1]) << ", " << format_double(gamma[2]) << "\n";
  os << "baseline_amplitude = " << format_double(baseline_amplitude) << "\n";
  os << "x2_slope = " << format_double(x2_slope) << "\n";
  os << "initial_last_outcome = " << format_double(initial_last_outcome) << "\n";
  os << "max_events = " << max_events << "\n";
  os << "sampler = " << (sampler == Sampler::kAuto ? "auto" : "thinning") << "\n";
  os << "\n[study]\n";
  os << "seed = " << seed << "\n";
  os << "replicates = " << replicates << "\n";
  os << "bootstrap = " << bootstrap << "\n";
  os << "bootstrap_penalized = " << (bootstrap_penalized ? "true" : "false") << "\n";
  os << "alpha = " << format_double(alpha) << "\n";
  os << "methods = ";
  for (std::size_t k = 0; k < methods.size(); ++k) os << (k ? ", " : "") << to_string(methods[k]);
  os << "\n";
  os << "coverage_points = " << coverage_points << "\n";
  os << "ise_points = " << ise_points << "\n";
  os << "fpca = " << (fpca ? "true" : "false") << "\n";
  os << "fpca_weighted = " << (fpca_weighted ? "true" : "false") << "\n";
  os << "fpca_grid = " << fpca_grid << "\n";
  os << "failure_budget = " << format_double(failure_budget) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replicate, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t replicate, std::uint64_t tag) {
  return std::mt19937_64(derive_seed(seed, replicate, tag));
}

GeneratedSubject gen_subject(const SimulationConfig& cfg, std::mt19937_64& rng, std::string id) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double z1 = normal(rng), z2 = normal(rng);
  const double x1 = z1;
  const double x2 = cfg.cov_corr * z1 + std::sqrt(1.0 - cfg.cov_corr * cfg.cov_corr) * z2;
  GeneratedSubject out;
  out.scores = {std::sqrt(cfg.theta[0]) * normal(rng), std::sqrt(cfg.theta[1]) * normal(rng)};
  out.subject.id = std::move(id);
  out.subject.follow_up = cfg.tau;
  out.subject.baseline = Eigen::Vector3d(1.0, x1, cfg.x2_at(x2, 0.0));
  const double eps_sd = std::sqrt(cfg.sigma_eps2);

  auto rho = [&](double t, double y_last) {
    return cfg.baseline(t) * std::exp(cfg.gamma[0] * y_last + cfg.gamma[1] * x1 + cfg.gamma[2] * cfg.x2_at(x2, t));
  };
  auto runaway = [&](const std::string& why) {
    throw Error(ErrorCode::kRunawayProcess, "subject " + out.subject.id + ": " + why);
  };

  double t = 0.0;
  double y_last = cfg.initial_last_outcome;
  for (;;) {
    double rate;
    if (cfg.exact_exponential()) {
      rate = rho(t, y_last);
      if (!std::isfinite(rate)) runaway("visit intensity overflowed");
      const double next = t + std::exponential_distribution<double>(rate)(rng);
      if (next > cfg.tau) break;
      if (next == t) runaway("visit times no longer distinct");
      t = next;
    } else {
      // thinning against a bound valid on [t, tau]
      const double x2_term = std::max(cfg.gamma[2] * cfg.x2_at(x2, t), cfg.gamma[2] * cfg.x2_at(x2, cfg.tau));
      const double bound = (1.0 + std::abs(cfg.baseline_amplitude)) *
                           std::exp(cfg.gamma[0] * y_last + cfg.gamma[1] * x1 + x2_term);
      if (!std::isfinite(bound)) runaway("visit intensity overflowed");
      bool accepted = false;
      double s = t;
      for (;;) {
        const double next = s + std::exponential_distribution<double>(bound)(rng);
        if (next > cfg.tau) break;
        if (next == s) runaway("visit times no longer distinct");
        s = next;
        if (unif(rng) * bound <= rho(s, y_last)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      t = s;
    }
    if (out.subject.observations.size() >= cfg.max_events)
      runaway("more than " + std::to_string(cfg.max_events) + " visits");
    rate = rho(t, y_last);
    const double x2t = cfg.x2_at(x2, t);
    const double y = cfg.beta(0, t) + cfg.beta(1, t) * x1 + cfg.beta(2, t) * x2t + out.scores[0] * cfg.phi(0, t) +
                     out.scores[1] * cfg.phi(1, t) + eps_sd * normal(rng);
    out.subject.observations.push_back({t, y, Eigen::Vector3d(1.0, x1, x2t)});
    out.true_weights.push_back(1.0 / rate);
    y_last = y;
  }
  return out;
}

GeneratedData generate_dataset(const SimulationConfig& cfg, std::uint64_t replicate) {
  auto rng = stream_rng(cfg.seed, replicate, 0);
  std::vector<SubjectTrajectory> subjects;
  std::vector<double> weights;
  std::vector<Eigen::Vector2d> scores;
  subjects.reserve(cfg.n);
  const int width = static_cast<int>(std::to_string(cfg.n).size());
  for (std::size_t i = 0; i < cfg.n; ++i) {
    std::ostringstream id;
    id << 's' << std::setw(width) << std::setfill('0') << i + 1;
    auto g = gen_subject(cfg, rng, id.str());
    weights.insert(weights.end(), g.true_weights.begin(), g.true_weights.end());
    scores.push_back(g.scores);
    subjects.push_back(std::move(g.subject));
  }
  GeneratedData out{LongitudinalDataset(std::move(subjects), cfg.tau, {"intercept", "x1", "x2"}),
                    Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size())),
                    std::move(scores)};
  return out;
}

double ise(std::span<const double> grid, std::span<const double> f_hat, const std::function<double(double)>& truth) {
  if (grid.size() != f_hat.size()) throw Error(ErrorCode::kDimensionMismatch, "grid and values differ in length");
  std::vector<double> sq(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double r = f_hat[k] - truth(grid[k]);
    sq[k] = r * r;
  }
  return trapezoid(grid, sq);
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

namespace {

struct MethodOutcome {
  ReplicateMetrics metrics;
  Eigen::MatrixXd covered;  // 3 x G indicators
};

FpcaMetrics fpca_metrics(const SimulationConfig& cfg, const RegressionData& rd, const CoefficientFit& fit) {
  FpcaOptions opt;
  opt.grid_size = cfg.fpca_grid;
  const auto res =
      run_fpca(rd.t, rd.subject, residuals(rd, fit), cfg.tau, opt, cfg.fpca_weighted ? rd.w : Eigen::VectorXd());
  const auto& grid = res.grid;
  const auto w = trapezoid_weights(grid);
  const auto g = static_cast<Eigen::Index>(grid.size());
  FpcaMetrics m;
  for (Eigen::Index i = 0; i < g; ++i)
    for (Eigen::Index j = 0; j < g; ++j) {
      const double r = res.surface(i, j) - cfg.covariance(grid[static_cast<std::size_t>(i)], grid[static_cast<std::size_t>(j)]);
      m.surface_ise += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(j)] * r * r;
    }
  std::vector<double> phi_hat(grid.size());
  double inner = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    phi_hat[k] = res.eigenfunctions(static_cast<Eigen::Index>(k), 0);
    inner += w[k] * phi_hat[k] * cfg.phi(0, grid[k]);
  }
  if (inner < 0.0)
    for (double& v : phi_hat) v = -v;
  m.phi1_ise = ise(grid, phi_hat, [&](double t) { return cfg.phi(0, t); });
  m.theta1_hat = res.eigenvalues[0];
  m.theta2_hat = g > 1 ? res.eigenvalues[1] : 0.0;
  m.theta1_sq = (m.theta1_hat - cfg.theta[0]) * (m.theta1_hat - cfg.theta[0]);
  m.bandwidth = res.bandwidth;
  m.n_components = res.n_components;
  return m;
}

std::vector<MethodOutcome> run_replicate(const SimulationConfig& cfg, int rep, const std::vector<double>& cov_grid,
                                         const std::vector<double>& ise_grid) {
  const auto gen = generate_dataset(cfg, static_cast<std::uint64_t>(rep));
  const auto& ds = gen.data;
  const std::size_t n_obs = ds.total_observations();
  std::vector<MethodOutcome> out;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const Method method = cfg.methods[mi];
    MethodOutcome mo;
    auto& m = mo.metrics;
    m.replicate = rep;
    m.method = method;
    m.n_obs = n_obs;
    WeightSet ws;
    if (method == Method::kEW) {
      IntensityOptions iopt;
      const auto spec = HistoryCovariateSpec({LastOutcome{OutcomeTransform::kIdentity, cfg.initial_last_outcome},
                                              BaselineCovariate{1}, BaselineCovariate{2}});
      const auto ifit = fit_intensity(ds, spec, iopt);
      ws = compute_weights(ds, spec, ifit);
      m.gamma = ifit.gamma;
      m.newton_iterations = ifit.iterations;
    } else if (method == Method::kTW) {
      ws.weights = gen.true_weights;
      ws.raw_max = gen.true_weights.size() ? gen.true_weights.maxCoeff() : 0.0;
    } else {
      ws = WeightSet::unit(n_obs);
    }
    const auto rd = RegressionData::from(ds, ws);
    const auto tuning = select_tuning(rd);
    const auto basis = tuned_basis(rd, tuning, KnotPlacement::kEqual);
    const Design design(rd, basis);
    const auto fit = solve_wls(design, Penalty::for_basis(basis, tuning.eta));
    m.order = tuning.order;
    m.dimension = tuning.dimension;
    m.eta = tuning.eta;

    BootstrapOptions bopt;
    bopt.replicates = cfg.bootstrap;
    bopt.penalized = cfg.bootstrap_penalized;
    bopt.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep), 100 + static_cast<std::uint64_t>(method));
    const auto ens = multiplier_bootstrap(design, fit, bopt);
    mo.covered = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(cov_grid.size()));
    for (int j = 0; j < 3; ++j) {
      const auto band = pointwise_band(ens, fit, j, cov_grid, cfg.alpha);
      int hits = 0;
      for (std::size_t k = 0; k < cov_grid.size(); ++k) {
        const double truth = cfg.beta(j, cov_grid[k]);
        const auto i = static_cast<Eigen::Index>(k);
        if (band.lower[i] <= truth && truth <= band.upper[i]) {
          ++hits;
          mo.covered(j, i) = 1.0;
        }
      }
      m.coverage[static_cast<std::size_t>(j)] = 100.0 * hits / static_cast<double>(cov_grid.size());
    }
    std::array<std::vector<double>, 3> curves;
    for (auto& c : curves) c.resize(ise_grid.size());
    for (std::size_t k = 0; k < ise_grid.size(); ++k) {
      const auto b = eval_beta(fit, ise_grid[k]);
      for (int j = 0; j < 3; ++j) curves[static_cast<std::size_t>(j)][k] = b[j];
    }
    for (int j = 0; j < 3; ++j)
      m.ise[static_cast<std::size_t>(j)] = ise(ise_grid, curves[static_cast<std::size_t>(j)], [&](double t) { return cfg.beta(j, t); });
    if (cfg.fpca) m.fpca = fpca_metrics(cfg, rd, fit);
    out.push_back(std::move(mo));
  }
  return out;
}

}  // namespace

MetricsReport run_study(const SimulationConfig& cfg) {
  cfg.validate();
  const auto cov_grid = linspace(0.0, cfg.tau, static_cast<std::size_t>(cfg.coverage_points));
  const auto ise_grid = linspace(0.0, cfg.tau, static_cast<std::size_t>(cfg.ise_points));
  const auto reps = static_cast<std::size_t>(cfg.replicates);
  std::vector<std::vector<MethodOutcome>> results(reps);
  std::vector<std::string> errors(reps);
  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    try {
      results[r] = run_replicate(cfg, static_cast<int>(r), cov_grid, ise_grid);
    } catch (const Error& e) {
      errors[r] = e.what();
      results[r].clear();
    }
  });

  MetricsReport report;
  report.config = cfg;
  report.coverage_grid = cov_grid;
  report.coverage_by_time.assign(cfg.methods.size(), Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(cov_grid.size())));
  int ok = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    if (!errors[r].empty()) {
      report.failures.push_back({static_cast<int>(r), errors[r]});
      continue;
    }
    ++ok;
    for (std::size_t mi = 0; mi < results[r].size(); ++mi) {
      report.coverage_by_time[mi] += results[r][mi].covered;
      report.rows.push_back(std::move(results[r][mi].metrics));
    }
  }
  if (ok > 0)
    for (auto& m : report.coverage_by_time) m /= static_cast<double>(ok);
  const double budget = cfg.failure_budget * static_cast<double>(cfg.replicates);
  if (!report.failures.empty() && static_cast<double>(report.failures.size()) >= budget) {
    std::string msg = std::to_string(report.failures.size()) + " of " + std::to_string(cfg.replicates) +
                      " replicates failed (budget " + io::format_double(cfg.failure_budget * 100.0) + "%); first: replicate " +
                      std::to_string(report.failures.front().replicate) + ": " + report.failures.front().message;
    throw Error(ErrorCode::kStudyAborted, msg);
  }
  return report;
}

std::vector<MethodSummary> MetricsReport::summary() const {
  std::vector<MethodSummary> out;
  for (Method method : config.methods) {
    MethodSummary s;
    s.method = method;
    std::array<std::vector<double>, 3> ises, covs;
    std::array<std::vector<double>, 3> fp;
    std::vector<double> theta_hat;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      ++s.count;
      for (std::size_t j = 0; j < 3; ++j) {
        ises[j].push_back(r.ise[j]);
        covs[j].push_back(r.coverage[j]);
      }
      if (r.fpca) {
        fp[0].push_back(r.fpca->surface_ise);
        fp[1].push_back(r.fpca->phi1_ise);
        fp[2].push_back(r.fpca->theta1_sq);
        theta_hat.push_back(r.fpca->theta1_hat);
      }
    }
    for (std::size_t j = 0; j < 3; ++j) {
      s.mise[j] = mean_of(ises[j]);
      s.sd[j] = sample_sd(ises[j]);
      s.coverage[j] = mean_of(covs[j]);
    }
    if (!theta_hat.empty()) {
      s.fpca_mean = std::array<double, 3>{mean_of(fp[0]), mean_of(fp[1]), mean_of(fp[2])};
      s.fpca_sd = std::array<double, 3>{sample_sd(fp[0]), sample_sd(fp[1]), sample_sd(fp[2])};
      s.theta1_hat_mean = mean_of(theta_hat);
    }
    out.push_back(s);
  }
  return out;
}

std::string MetricsReport::to_csv() const {
  using io::format_double;
  std::ostringstream os;
  os << "replicate,method,n_obs,order,dimension,eta_1,eta_2,eta_3,ise_beta1,ise_beta2,ise_beta3,"
        "coverage_beta1,coverage_beta2,coverage_beta3,gamma_1,gamma_2,gamma_3,newton_iterations";
  if (config.fpca) os << ",surface_ise,phi1_ise,theta1_sq,theta1_hat,theta2_hat,fpca_bandwidth,n_components";
  os << "\n";
  for (const auto& r : rows) {
    os << r.replicate << ',' << to_string(r.method) << ',' << r.n_obs << ',' << r.order << ',' << r.dimension;
    for (Eigen::Index j = 0; j < 3; ++j) os << ',' << (j < r.eta.size() ? format_double(r.eta[j]) : "");
    for (double v : r.ise) os << ',' << format_double(v);
    for (double v : r.coverage) os << ',' << format_double(v);
    for (Eigen::Index j = 0; j < 3; ++j) os << ',' << (j < r.gamma.size() ? format_double(r.gamma[j]) : "");
    os << ',' << r.newton_iterations;
    if (config.fpca) {
      if (r.fpca) {
        const auto& f = *r.fpca;
        os << ',' << format_double(f.surface_ise) << ',' << format_double(f.phi1_ise) << ',' << format_double(f.theta1_sq)
           << ',' << format_double(f.theta1_hat) << ',' << format_double(f.theta2_hat) << ','
           << format_double(f.bandwidth) << ',' << f.n_components;
      } else {
        os << ",,,,,,,";
      }
    }
    os << "\n";
  }
  return os.str();
}

std::string MetricsReport::coverage_csv() const {
  std::ostringstream os;
  os << "method,coefficient,t,coverage\n";
  for (std::size_t mi = 0; mi < config.methods.size() && mi < coverage_by_time.size(); ++mi)
    for (int j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < coverage_grid.size(); ++k)
        os << to_string(config.methods[mi]) << ",beta" << j + 1 << ',' << io::format_double(coverage_grid[k]) << ','
           << io::format_double(coverage_by_time[mi](j, static_cast<Eigen::Index>(k))) << "\n";
  return os.str();
}

std::string MetricsReport::summary_table() const {
  const auto sums = summary();
  auto fixed = [](double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
  };
  std::ostringstream os;
  os << "n = " << config.n << ", replicates = " << config.replicates << ", failed = " << failures.size() << "\n";
  os << std::left << std::setw(14) << "Par.";
  for (const auto& s : sums) os << std::setw(18) << ("MISE (SD) " + std::string(to_string(s.method)));
  for (const auto& s : sums) os << std::setw(7) << ("CP " + std::string(to_string(s.method)));
  os << "\n";
  const char* names[3] = {"beta1(t)", "beta2(t)", "beta3(t)"};
  for (std::size_t j = 0; j < 3; ++j) {
    os << std::setw(14) << names[j];
    for (const auto& s : sums) os << std::setw(18) << (fixed(s.mise[j], 3) + " (" + fixed(s.sd[j], 3) + ")");
    for (const auto& s : sums) os << std::setw(7) << fixed(s.coverage[j], 0);
    os << "\n";
  }
  if (config.fpca) {
    const char* fnames[3] = {"Sigma_b(s,t)", "phi1(t)", "theta1"};
    for (std::size_t k = 0; k < 3; ++k) {
      os << std::setw(14) << fnames[k];
      for (const auto& s : sums)
        os << std::setw(18) << (s.fpca_mean ? fixed((*s.fpca_mean)[k], 3) + " (" + fixed((*s.fpca_sd)[k], 3) + ")" : "");
      os << "\n";
    }
  }
  return os.str();
}

IntensityRecovery intensity_recovery(const SimulationConfig& cfg) {
  cfg.validate();
  const auto reps = static_cast<std::size_t>(cfg.replicates);
  std::vector<std::optional<std::pair<Eigen::VectorXd, int>>> fits(reps);
  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    try {
      const auto gen = generate_dataset(cfg, r);
      const auto spec = HistoryCovariateSpec({LastOutcome{OutcomeTransform::kIdentity, cfg.initial_last_outcome},
                                              BaselineCovariate{1}, BaselineCovariate{2}});
      const auto g = fit_gamma(gen.data, spec, Eigen::VectorXd::Zero(3));
      fits[r] = std::make_pair(g.gamma, g.iterations);
    } catch (const Error&) {
      fits[r].reset();
    }
  });
  IntensityRecovery out;
  for (const auto& f : fits) {
    if (!f) {
      ++out.failures;
      continue;
    }
    out.gamma.push_back(f->first);
    out.iterations.push_back(f->second);
  }
  out.mean = Eigen::VectorXd::Zero(3);
  out.se = Eigen::VectorXd::Zero(3);
  if (!out.gamma.empty()) {
    for (const auto& g : out.gamma) out.mean += g;
    out.mean /= static_cast<double>(out.gamma.size());
    if (out.gamma.size() > 1) {
      Eigen::VectorXd ss = Eigen::VectorXd::Zero(3);
      for (const auto& g : out.gamma) ss += (g - out.mean).cwiseAbs2();
      const double k = static_cast<double>(out.gamma.size());
      out.se = (ss / (k - 1.0) / k).cwiseSqrt();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Application-shaped synthetic cohort
// ---------------------------------------------------------------------------

LongitudinalDataset generate_adni_like(std::uint64_t seed, std::size_t n_subjects, std::size_t n_observations) {
  if (n_subjects == 0 || n_observations < n_subjects)
    throw Error(ErrorCode::kInvalidArgument, "need at least one observation per subject");
  const double tau = 8.0;
  auto rng = stream_rng(seed, 0, 0xad41);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  struct Person {
    Eigen::VectorXd x;  // 1, age, female, education, apoe4
    double follow_up;
    double level, slope;
    std::vector<double> times;
  };
  std::vector<Person> people(n_subjects);
  const std::vector<double> schedule{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0};
  for (auto& p : people) {
    const double age = std::clamp(73.5 + 7.2 * normal(rng), 55.0, 90.0);
    const double female = unif(rng) < 0.41 ? 1.0 : 0.0;
    const double edu = std::clamp(std::round(16.0 + 2.8 * normal(rng)), 6.0, 20.0);
    const double u = unif(rng);
    const double apoe = u < 0.47 ? 0.0 : (u < 0.88 ? 1.0 : 2.0);
    p.x = Eigen::VectorXd(5);
    p.x << 1.0, age, female, edu, apoe;
    p.level = 17.0 + 0.15 * (age - 73.5) - 0.4 * (edu - 16.0) + 2.5 * apoe + 4.0 * normal(rng);
    p.slope = 1.2 + 0.9 * apoe + 0.6 * normal(rng);
    p.follow_up = std::clamp(2.42 + 1.26 * normal(rng), 0.3, 7.67);
  }
  auto outcome_mean = [](const Person& p, double t) { return std::max(0.0, p.level + p.slope * t); };
  // scheduled visits, attended more often by subjects doing worse
  for (auto& p : people) {
    for (double s : schedule) {
      const double t = s == 0.0 ? 0.02 * unif(rng) : s + 0.06 * normal(rng);
      if (t < 0.0 || t > p.follow_up) continue;
      const double attend = 1.0 / (1.0 + std::exp(-(0.2 + 0.08 * (outcome_mean(p, t) - 17.0))));
      if (s == 0.0 || unif(rng) < attend) p.times.push_back(t);
    }
    if (p.times.empty()) p.times.push_back(std::min(p.follow_up, 0.02 * unif(rng)));
  }
  std::size_t total = 0;
  for (const auto& p : people) total += p.times.size();
  // match the requested visit count exactly
  while (total > n_observations) {
    auto& p = people[static_cast<std::size_t>(unif(rng) * static_cast<double>(n_subjects)) % n_subjects];
    if (p.times.size() < 2) continue;
    p.times.erase(p.times.begin() + 1 + static_cast<std::ptrdiff_t>(unif(rng) * static_cast<double>(p.times.size() - 1)) %
                                             static_cast<std::ptrdiff_t>(p.times.size() - 1));
    --total;
  }
  while (total < n_observations) {
    auto& p = people[static_cast<std::size_t>(unif(rng) * static_cast<double>(n_subjects)) % n_subjects];
    const double t = unif(rng) * p.follow_up;
    const double extra = 1.0 / (1.0 + std::exp(-0.1 * (outcome_mean(p, t) - 25.0)));
    if (unif(rng) >= extra) continue;
    if (std::find(p.times.begin(), p.times.end(), t) != p.times.end()) continue;
    p.times.push_back(t);
    ++total;
  }

  std::vector<SubjectTrajectory> subjects;
  subjects.reserve(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    auto& p = people[i];
    std::sort(p.times.begin(), p.times.end());
    SubjectTrajectory s;
    std::ostringstream id;
    id << "adni" << std::setw(4) << std::setfill('0') << i + 1;
    s.id = id.str();
    s.follow_up = std::max(p.follow_up, p.times.back());
    const double b = 1.5 * normal(rng);
    for (double t : p.times) {
      const double y = std::max(0.0, outcome_mean(p, t) + b * std::sin(t) + 2.0 * normal(rng));
      Eigen::VectorXd x = p.x;
      s.observations.push_back({t, std::round(y * 100.0) / 100.0, x});
    }
    s.baseline = p.x;
    subjects.push_back(std::move(s));
  }
  return LongitudinalDataset(std::move(subjects), tau, {"intercept", "age", "female", "education", "apoe4"});
}

}  // namespace ivcm
