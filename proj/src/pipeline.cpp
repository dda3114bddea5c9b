#include "ivcm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ivcm/error.hpp"
#include "ivcm/io.hpp"
#include "ivcm/stats.hpp"

namespace ivcm {

using io::format_double;
using json = nlohmann::ordered_json;

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? ", " : "") + format_double(v[k]);
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? ", " : "") + std::to_string(v[k]);
  return out;
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

// Standard errors from the observed information at the fitted gamma.
Eigen::VectorXd gamma_standard_errors(const LongitudinalDataset& ds, const IntensityFit& fit) {
  const auto pl = partial_loglik(ds, fit.spec, fit.gamma);
  const Eigen::MatrixXd info = -pl.hessian;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    return Eigen::VectorXd::Constant(fit.gamma.size(), std::numeric_limits<double>::quiet_NaN());
  }
  const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

FitOptions FitOptions::adni_preset() {
  FitOptions o;
  o.min_gap = 1.0 / 12.0;
  o.transform = OutcomeTransform::kLog1p;
  o.tuning.placement = KnotPlacement::kQuantile;
  o.truncation_quantile = 0.9;
  o.bootstrap = 100;
  o.alpha = 0.05;
  return o;
}

std::string FitOptions::to_text() const {
  std::ostringstream os;
  os << inputs;
  os << "mode = " << (mode == FitMode::kWeighted ? "weighted" : "unweighted") << "\n";
  os << "g = " << g_spec << "\n";
  os << "transform = " << (transform == OutcomeTransform::kLog1p ? "log1p" : "identity") << "\n";
  os << "truncate_weights = " << (truncation_quantile ? format_double(*truncation_quantile) : "none") << "\n";
  os << "min_gap = " << format_double(min_gap) << "\n";
  os << "keep_empty_subjects = " << (keep_empty_subjects ? "true" : "false") << "\n";
  os << "knots = " << to_string(tuning.placement) << "\n";
  os << "orders = " << join_ints(tuning.orders) << "\n";
  os << "dimensions = " << (tuning.dimensions.empty() ? "auto" : join_ints(tuning.dimensions)) << "\n";
  os << "etas = " << (tuning.etas.empty() ? "auto" : join_doubles(tuning.etas)) << "\n";
  os << "gcv_sample_size = " << (tuning.sample_size == GcvSampleSize::kEffective ? "effective" : "observations") << "\n";
  os << "intensity_bandwidth_c = " << format_double(intensity_bandwidth_c) << "\n";
  os << "bootstrap = " << bootstrap << "\n";
  os << "bootstrap_penalized = " << (bootstrap_penalized ? "true" : "false") << "\n";
  os << "alpha = " << format_double(alpha) << "\n";
  os << "seed = " << seed << "\n";
  os << "curve_points = " << curve_points << "\n";
  os << "fpca = " << (fpca ? "true" : "false") << "\n";
  os << "fpca_weighted = " << (fpca_weighted ? "true" : "false") << "\n";
  os << "fpca_grid = " << fpca_grid << "\n";
  os << "fve_threshold = " << format_double(fve_threshold) << "\n";
  os << "fpca_bandwidth = " << (fpca_bandwidth ? format_double(*fpca_bandwidth) : "cv") << "\n";
  os << "unit_intensity_oracle = " << (unit_intensity_oracle ? "true" : "false") << "\n";
  return os.str();
}

FitRun run_fit(const LongitudinalDataset& input, const FitOptions& options) {
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  if (options.bootstrap < 2) throw Error(ErrorCode::kInvalidArgument, "bootstrap must be ≥ 2");
  if (options.curve_points < 2) throw Error(ErrorCode::kInvalidArgument, "curve_points must be ≥ 2");
  if (!(options.min_gap >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "min_gap must be ≥ 0");

  auto data = options.min_gap > 0.0 ? apply_gap_filter(input, options.min_gap, options.keep_empty_subjects)
                                    : (options.keep_empty_subjects ? input : drop_empty_subjects(input));
  if (data.total_observations() == 0) throw Error(ErrorCode::kInvalidArgument, "no observations left after filtering");
  const auto& ds = data;
  std::vector<std::string> warnings;

  auto spec = options.g_spec.empty() ? HistoryCovariateSpec::standard(ds.d(), options.transform)
                                     : HistoryCovariateSpec::parse(options.g_spec, ds.covariate_names());
  const std::size_t n_obs = ds.total_observations();
  std::optional<IntensityFit> intensity;
  WeightSet weights;
  if (options.mode == FitMode::kUnweighted) {
    weights = WeightSet::unit(n_obs);
  } else if (options.unit_intensity_oracle) {
    weights = truncate_weights(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_obs)), options.truncation_quantile);
  } else {
    IntensityOptions iopt;
    iopt.bandwidth_c = options.intensity_bandwidth_c;
    intensity = fit_intensity(ds, spec, iopt);
    weights = compute_weights(ds, spec, *intensity, options.truncation_quantile);
  }

  const auto rd = RegressionData::from(ds, weights);
  auto tuning = select_tuning(rd, options.tuning);
  const auto basis = tuned_basis(rd, tuning, options.tuning.placement);
  if (basis.dimension() < basis.requested_dimension()) {
    warnings.push_back("quantile knots coincide; basis dimension reduced from " +
                       std::to_string(basis.requested_dimension()) + " to " + std::to_string(basis.dimension()));
  }
  const Design design(rd, basis);
  auto fit = solve_wls(design, Penalty::for_basis(basis, tuning.eta, options.tuning.derivative_order));
  if (fit.ridge_applied) warnings.push_back("coefficient system needed a ridge");

  BootstrapOptions bopt;
  bopt.replicates = options.bootstrap;
  bopt.seed = options.seed;
  bopt.threads = options.threads;
  bopt.penalized = options.bootstrap_penalized;
  const auto ens = multiplier_bootstrap(design, fit, bopt);
  if (ens.redraws > 0) warnings.push_back(std::to_string(ens.redraws) + " bootstrap draws were degenerate and redrawn");

  auto grid = linspace(0.0, ds.tau(), static_cast<std::size_t>(options.curve_points));
  std::vector<PointwiseBand> bands;
  for (int j = 0; j < ds.d(); ++j) {
    bands.push_back(pointwise_band(ens, fit, j, grid, options.alpha, ds.covariate_names()[static_cast<std::size_t>(j)]));
  }

  std::optional<FpcaResult> fpca;
  if (options.fpca) {
    FpcaOptions fopt;
    fopt.grid_size = options.fpca_grid;
    fopt.fve_threshold = options.fve_threshold;
    fopt.bandwidth = options.fpca_bandwidth;
    fpca = run_fpca(ds, residuals(rd, fit), fopt, options.fpca_weighted ? rd.w : Eigen::VectorXd());
  }
  const std::size_t dropped_subjects = input.n() - ds.n();
  const std::size_t dropped_obs = input.total_observations() - n_obs;
  return FitRun{std::move(data), std::move(spec), std::move(intensity), std::move(weights), std::move(tuning),
                std::move(fit), std::move(grid), std::move(bands), std::move(fpca), std::move(warnings),
                dropped_subjects, dropped_obs};
}

std::string coefficients_csv(const FitRun& run) {
  std::ostringstream os;
  os << "t";
  for (const auto& name : run.data.covariate_names()) os << ',' << name;
  os << "\n";
  for (std::size_t k = 0; k < run.grid.size(); ++k) {
    const auto b = eval_beta(run.fit, run.grid[k]);
    os << format_double(run.grid[k]);
    for (Eigen::Index j = 0; j < b.size(); ++j) os << ',' << format_double(b[j]);
    os << "\n";
  }
  return os.str();
}

std::string coefficient_fit_json(const CoefficientFit& fit) {
  json j;
  j["z"] = fit.basis.order();
  j["q"] = fit.basis.dimension();
  j["knots"] = fit.basis.knots();
  j["knot_placement"] = std::string(to_string(fit.basis.placement()));
  j["A_hat_shape"] = {fit.a_hat.rows(), fit.a_hat.cols()};
  j["A_hat"] = to_json(Eigen::Map<const Eigen::VectorXd>(fit.a_hat.data(), fit.a_hat.size()));
  j["eta"] = to_json(fit.eta);
  j["weight_truncation"] = fit.weight_truncation ? json(*fit.weight_truncation) : json(nullptr);
  j["effective_df"] = fit.effective_df;
  j["ridge_applied"] = fit.ridge_applied;
  return j.dump(2) + "\n";
}

std::string intensity_json(const FitRun& run) {
  json j;
  const auto& names = run.data.covariate_names();
  j["mode"] = run.intensity ? "estimated" : "unit";
  j["g"] = run.spec.describe(names);
  if (run.intensity) {
    const auto& f = *run.intensity;
    j["gamma"] = to_json(f.gamma);
    j["gamma_se"] = to_json(gamma_standard_errors(run.data, f));
    j["loglik"] = f.loglik;
    j["iterations"] = f.iterations;
    j["converged"] = f.converged;
    j["bandwidth"] = f.bandwidth;
    j["kernel"] = std::string(to_string(f.kernel));
    json baseline = json::array();
    for (double t : linspace(0.0, run.data.tau(), 101)) {
      baseline.push_back({{"t", t}, {"cumulative", f.cum_baseline(t)}, {"intensity", f.baseline(t)}});
    }
    j["baseline"] = baseline;
  } else {
    j["gamma"] = json::array();
  }
  j["truncation_quantile"] = run.weights.truncation_quantile ? json(*run.weights.truncation_quantile) : json(nullptr);
  j["truncation_value"] = run.weights.truncation_value ? json(*run.weights.truncation_value) : json(nullptr);
  j["raw_max_weight"] = run.weights.raw_max;
  const auto& w = run.weights.weights;
  j["weights"] = {{"count", w.size()},
                  {"min", w.size() ? w.minCoeff() : 0.0},
                  {"mean", w.size() ? w.mean() : 0.0},
                  {"max", w.size() ? w.maxCoeff() : 0.0}};
  return j.dump(2) + "\n";
}

std::string eigenvalues_csv(const FpcaResult& fpca) {
  std::ostringstream os;
  os << "component,eigenvalue,raw_eigenvalue,fve,selected\n";
  double total = 0.0;
  for (Eigen::Index k = 0; k < fpca.eigenvalues.size(); ++k) total += fpca.eigenvalues[k];
  double cum = 0.0;
  for (Eigen::Index k = 0; k < fpca.eigenvalues.size(); ++k) {
    cum += fpca.eigenvalues[k];
    os << k + 1 << ',' << format_double(fpca.eigenvalues[k]) << ',' << format_double(fpca.raw_eigenvalues[k]) << ','
       << format_double(total > 0.0 ? cum / total : 0.0) << ',' << (k < fpca.n_components ? 1 : 0) << "\n";
  }
  return os.str();
}

std::string eigenfunctions_csv(const FpcaResult& fpca) {
  std::ostringstream os;
  const int m = std::max(1, fpca.n_components);
  os << "t";
  for (int k = 0; k < m; ++k) os << ",phi" << k + 1;
  os << "\n";
  for (std::size_t g = 0; g < fpca.grid.size(); ++g) {
    os << format_double(fpca.grid[g]);
    for (int k = 0; k < m; ++k) os << ',' << format_double(fpca.eigenfunctions(static_cast<Eigen::Index>(g), k));
    os << "\n";
  }
  return os.str();
}

std::string surface_csv(const FpcaResult& fpca) {
  std::ostringstream os;
  os << "s,t,covariance\n";
  for (std::size_t a = 0; a < fpca.grid.size(); ++a)
    for (std::size_t b = 0; b < fpca.grid.size(); ++b)
      os << format_double(fpca.grid[a]) << ',' << format_double(fpca.grid[b]) << ','
         << format_double(fpca.surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) << "\n";
  return os.str();
}

std::string config_hash(const std::string& config_text) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << io::fnv1a64(config_text);
  return os.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

const char* version_string() { return "0.1.0"; }

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  j["files"] = files;
  j["config"] = config_text;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto j = json::parse(text);
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.value("version", "");
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.files = j.at("files").get<std::vector<std::string>>();
    m.config_text = j.value("config", "");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad manifest: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kInvalidArgument, "no manifest.json in " + dir.string());
  return from_json(io::read_file(path));
}

std::vector<std::string> write_fit_outputs(const FitRun& run, const FitOptions& options,
                                           const std::filesystem::path& out_dir, const std::string& started) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  auto put = [&](const std::string& name, const std::string& text) {
    io::write_file(out_dir / name, text);
    files.push_back(name);
  };
  put("coefficients.csv", coefficients_csv(run));
  put("bands.csv", bands_to_csv(run.bands));
  put("coefficient_fit.json", coefficient_fit_json(run.fit));
  put("intensity_fit.json", intensity_json(run));
  if (run.fpca) {
    put("fpca_eigenvalues.csv", eigenvalues_csv(*run.fpca));
    put("fpca_eigenfunctions.csv", eigenfunctions_csv(*run.fpca));
    put("fpca_surface.csv", surface_csv(*run.fpca));
  }
  std::string log;
  log += "subjects " + std::to_string(run.data.n()) + ", observations " + std::to_string(run.data.total_observations()) +
         " (dropped " + std::to_string(run.dropped_subjects) + " subjects, " +
         std::to_string(run.dropped_observations) + " observations)\n";
  log += "tuning z=" + std::to_string(run.tuning.order) + " q=" + std::to_string(run.tuning.dimension) + " eta=";
  for (Eigen::Index j = 0; j < run.tuning.eta.size(); ++j) log += (j ? "," : "") + format_double(run.tuning.eta[j]);
  log += " gcv=" + format_double(run.tuning.gcv) + "\n";
  if (run.fpca) {
    log += "fpca bandwidth=" + format_double(run.fpca->bandwidth) + " components=" +
           std::to_string(run.fpca->n_components) + "\n";
  }
  for (const auto& w : run.warnings) log += "warning: " + w + "\n";
  put("fit_log.txt", log);

  RunManifest m;
  m.command = "fit";
  m.config_text = options.to_text();
  m.config_hash = config_hash(m.config_text);
  m.seed = options.seed;
  m.version = version_string();
  m.started = started;
  m.finished = utc_timestamp();
  m.files = files;
  io::write_file(out_dir / "manifest.json", m.to_json());
  files.push_back("manifest.json");
  return files;
}

std::vector<std::string> write_study_outputs(const MetricsReport& report, const std::filesystem::path& out_dir,
                                             const std::string& started) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  auto put = [&](const std::string& name, const std::string& text) {
    io::write_file(out_dir / name, text);
    files.push_back(name);
  };
  put("metrics.csv", report.to_csv());
  put("coverage.csv", report.coverage_csv());
  put("summary.txt", report.summary_table());
  put("config.cfg", report.config.to_text());
  if (!report.failures.empty()) {
    std::string text = "replicate,message\n";
    for (const auto& f : report.failures) text += std::to_string(f.replicate) + ",\"" + f.message + "\"\n";
    put("failures.csv", text);
  }
  RunManifest m;
  m.command = "simulate";
  m.config_text = report.config.to_text();
  m.config_hash = config_hash(m.config_text);
  m.seed = report.config.seed;
  m.version = version_string();
  m.started = started;
  m.finished = utc_timestamp();
  m.files = files;
  io::write_file(out_dir / "manifest.json", m.to_json());
  files.push_back("manifest.json");
  return files;
}

}  // namespace ivcm
