#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ivcm/data.hpp"
#include "ivcm/error.hpp"
#include "ivcm/io.hpp"
#include "ivcm/pipeline.hpp"
#include "ivcm/report.hpp"
#include "ivcm/simulation.hpp"
#include "ivcm/splines.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kAborted = 3;
constexpr int kNumericalError = 4;

int exit_code_for(ivcm::ErrorCode code) {
  using ivcm::ErrorCode;
  switch (code) {
    case ErrorCode::kNoConvergence:
    case ErrorCode::kSingularHessian:
    case ErrorCode::kSingularSystem:
    case ErrorCode::kEmptyRiskSet:
    case ErrorCode::kDegenerateEnsemble:
    case ErrorCode::kEmptyNeighborhood:
    case ErrorCode::kNonPositiveBandwidth:
    case ErrorCode::kRunawayProcess:
      return kNumericalError;
    case ErrorCode::kStudyAborted:
      return kAborted;
    default:
      return kInputError;
  }
}

std::vector<double> split_reals(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : ivcm::io::split_csv_line(text)) out.push_back(ivcm::io::parse_double(f));
  return out;
}

std::vector<int> split_ints(const std::string& text) {
  std::vector<int> out;
  for (const auto& f : ivcm::io::split_csv_line(text)) {
    const double v = ivcm::io::parse_double(f);
    if (v != static_cast<int>(v)) throw ivcm::Error(ivcm::ErrorCode::kParse, "expected integers, got '" + text + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::optional<std::size_t> n;
  std::optional<int> bootstrap;
  std::optional<std::string> methods;
  bool fpca = false;
  unsigned threads = 0;
  std::vector<std::string> set;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto started = ivcm::utc_timestamp();
  ivcm::SimulationConfig cfg;
  try {
    std::string text = a.config.empty() ? std::string() : ivcm::io::read_file(a.config);
    text += "\n";
    for (const auto& kv : a.set) text += kv + "\n";
    if (a.seed) text += "seed = " + std::to_string(*a.seed) + "\n";
    if (a.replicates) text += "replicates = " + std::to_string(*a.replicates) + "\n";
    if (a.n) text += "n = " + std::to_string(*a.n) + "\n";
    if (a.bootstrap) text += "bootstrap = " + std::to_string(*a.bootstrap) + "\n";
    if (a.methods) text += "methods = " + *a.methods + "\n";
    if (a.fpca) text += "fpca = true\n";
    cfg = ivcm::SimulationConfig::parse(text);
    cfg.threads = a.threads ? a.threads : default_threads();
    cfg.validate();
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm simulate: config error: " << e.what() << "\n";
    return kInputError;
  }
  try {
    const auto report = ivcm::run_study(cfg);
    ivcm::write_study_outputs(report, a.out, started);
    std::cout << report.summary_table();
    if (!report.failures.empty()) std::cerr << report.failures.size() << " replicate(s) failed; see failures.csv\n";
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm simulate: " << e.what() << "\n";
    return e.code() == ivcm::ErrorCode::kStudyAborted ? kAborted : exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ivcm simulate: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

struct FitArgs {
  std::string data;
  std::string followup;
  std::optional<double> tau;
  std::string out;
  std::string method = "weighted";
  std::string g;
  std::string transform;
  std::optional<double> truncate;
  std::string knots;
  std::string orders;
  std::string dimensions;
  std::string etas;
  std::string gcv_n;
  std::optional<int> bootstrap;
  bool bootstrap_unpenalized = false;
  std::optional<double> alpha;
  std::optional<double> min_gap;
  bool keep_empty = false;
  bool adni_preset = false;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  bool no_fpca = false;
  bool fpca_unweighted = false;
  std::optional<int> curve_points;
  std::optional<int> fpca_grid;
  std::optional<double> fpca_bandwidth;
  std::optional<double> fve;
  std::optional<double> bandwidth_c;
  bool unit_oracle = false;
};

double max_followup(const std::string& path) {
  const auto table = ivcm::read_csv_table(path);
  if (table.header.size() < 2) throw ivcm::Error(ivcm::ErrorCode::kParse, "follow-up file needs two columns");
  double tau = 0.0;
  for (const auto& r : table.rows) tau = std::max(tau, ivcm::io::parse_double(r.at(1)));
  if (!(tau > 0.0)) throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "follow-up times must be positive");
  return tau;
}

int cmd_fit(const FitArgs& a) {
  const auto started = ivcm::utc_timestamp();
  ivcm::FitOptions o = a.adni_preset ? ivcm::FitOptions::adni_preset() : ivcm::FitOptions{};
  ivcm::LongitudinalDataset ds;
  try {
    if (a.method == "weighted") {
      o.mode = ivcm::FitMode::kWeighted;
    } else if (a.method == "unweighted") {
      o.mode = ivcm::FitMode::kUnweighted;
    } else {
      throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "method must be weighted or unweighted");
    }
    if (!a.g.empty()) o.g_spec = a.g;
    if (!a.transform.empty()) {
      if (a.transform == "identity") {
        o.transform = ivcm::OutcomeTransform::kIdentity;
      } else if (a.transform == "log1p") {
        o.transform = ivcm::OutcomeTransform::kLog1p;
      } else {
        throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "transform must be identity or log1p");
      }
    }
    if (a.truncate) {
      if (!(*a.truncate > 0.0 && *a.truncate <= 1.0))
        throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "truncate-weights must lie in (0, 1]");
      o.truncation_quantile = *a.truncate;
    }
    if (!a.knots.empty()) o.tuning.placement = ivcm::knot_placement_from_string(a.knots);
    if (!a.orders.empty()) o.tuning.orders = split_ints(a.orders);
    if (!a.dimensions.empty()) o.tuning.dimensions = split_ints(a.dimensions);
    if (!a.etas.empty()) o.tuning.etas = split_reals(a.etas);
    if (!a.gcv_n.empty()) {
      if (a.gcv_n == "effective") {
        o.tuning.sample_size = ivcm::GcvSampleSize::kEffective;
      } else if (a.gcv_n == "observations") {
        o.tuning.sample_size = ivcm::GcvSampleSize::kObservations;
      } else {
        throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "gcv-n must be effective or observations");
      }
    }
    if (a.bootstrap) o.bootstrap = *a.bootstrap;
    if (a.bootstrap_unpenalized) o.bootstrap_penalized = false;
    if (a.alpha) o.alpha = *a.alpha;
    if (a.min_gap) o.min_gap = *a.min_gap;
    if (a.keep_empty) o.keep_empty_subjects = true;
    if (a.no_fpca) o.fpca = false;
    if (a.fpca_unweighted) o.fpca_weighted = false;
    if (a.curve_points) o.curve_points = *a.curve_points;
    if (a.fpca_grid) o.fpca_grid = *a.fpca_grid;
    if (a.fpca_bandwidth) o.fpca_bandwidth = *a.fpca_bandwidth;
    if (a.fve) o.fve_threshold = *a.fve;
    if (a.bandwidth_c) o.intensity_bandwidth_c = *a.bandwidth_c;
    o.seed = a.seed;
    o.threads = a.threads ? a.threads : default_threads();
    o.unit_intensity_oracle = a.unit_oracle;

    const double tau = a.tau ? *a.tau : max_followup(a.followup);
    ds = ivcm::load_dataset(a.data, a.followup, tau);
    o.inputs = "data = " + a.data + "\nfollowup = " + a.followup + "\ntau = " + ivcm::io::format_double(tau) + "\n";
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm fit: " << e.what() << "\n";
    return kInputError;
  }
  try {
    const auto run = ivcm::run_fit(ds, o);
    ivcm::write_fit_outputs(run, o, a.out, started);
    std::cout << "subjects " << run.data.n() << ", observations " << run.data.total_observations() << "\n";
    std::cout << "order " << run.tuning.order << ", dimension " << run.tuning.dimension << "\n";
    for (const auto& w : run.warnings) std::cerr << "warning: " << w << "\n";
  } catch (const ivcm::NoConvergenceError& e) {
    std::cerr << "ivcm fit: " << e.what() << " after " << e.iterations() << " iterations; last iterate";
    for (Eigen::Index k = 0; k < e.last_iterate().size(); ++k) std::cerr << ' ' << e.last_iterate()[k];
    std::cerr << "\n";
    return kNumericalError;
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm fit: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ivcm fit: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

int cmd_report(const std::string& run, const std::string& format) {
  try {
    const auto files = ivcm::write_report(run, ivcm::report_format_from_string(format));
    for (const auto& f : files) std::cout << (std::filesystem::path(run) / "report" / f).string() << "\n";
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm report: " << e.what() << "\n";
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ivcm report: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

struct SynthArgs {
  std::string kind = "adni";
  std::string out;
  std::string config;
  std::uint64_t seed = 1;
  std::optional<std::size_t> n;
  std::optional<std::size_t> observations;
  std::uint64_t replicate = 0;
};

int cmd_synth(const SynthArgs& a) {
  const auto started = ivcm::utc_timestamp();
  try {
    ivcm::LongitudinalDataset ds;
    std::ostringstream cfg_text;
    cfg_text << "kind = " << a.kind << "\n";
    if (a.kind == "adni") {
      const std::size_t n = a.n.value_or(807), m = a.observations.value_or(3558);
      ds = ivcm::generate_adni_like(a.seed, n, m);
      cfg_text << "n = " << n << "\nobservations = " << m << "\n";
    } else if (a.kind == "simulation") {
      std::string text = a.config.empty() ? std::string() : ivcm::io::read_file(a.config);
      text += "\nseed = " + std::to_string(a.seed) + "\n";
      if (a.n) text += "n = " + std::to_string(*a.n) + "\n";
      const auto cfg = ivcm::SimulationConfig::parse(text);
      cfg.validate();
      ds = ivcm::generate_dataset(cfg, a.replicate).data;
      cfg_text << cfg.to_text() << "replicate = " << a.replicate << "\n";
    } else {
      throw ivcm::Error(ivcm::ErrorCode::kInvalidArgument, "kind must be adni or simulation");
    }
    std::filesystem::create_directories(a.out);
    const std::filesystem::path out(a.out);
    ivcm::write_dataset(ds, out / "observations.csv", out / "followup.csv");
    ivcm::RunManifest m;
    m.command = "synth";
    m.config_text = cfg_text.str();
    m.config_hash = ivcm::config_hash(m.config_text);
    m.seed = a.seed;
    m.version = ivcm::version_string();
    m.started = started;
    m.finished = ivcm::utc_timestamp();
    m.files = {"observations.csv", "followup.csv"};
    ivcm::io::write_file(out / "manifest.json", m.to_json());
    std::cout << ds.n() << " subjects, " << ds.total_observations() << " observations, tau "
              << ivcm::io::format_double(ds.tau()) << "\n";
  } catch (const ivcm::Error& e) {
    std::cerr << "ivcm synth: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ivcm synth: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse-intensity weighted varying coefficient models for irregular longitudinal data"};
  app.set_version_flag("--version", ivcm::version_string());
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo study");
  simulate->add_option("--config", sim.config, "Study config file (key = value)")->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--replicates", sim.replicates, "Number of replicates");
  simulate->add_option("--n", sim.n, "Subjects per dataset");
  simulate->add_option("--bootstrap", sim.bootstrap, "Bootstrap replicates per fit");
  simulate->add_option("--methods", sim.methods, "Comma-separated subset of EW,TW,UW");
  simulate->add_flag("--fpca", sim.fpca, "Also run residual FPCA per replicate");
  simulate->add_option("--threads", sim.threads, "Worker cap (default: all cores)");
  simulate->add_option("--set", sim.set, "Extra config line key=value (repeatable)");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a dataset");
  fit->add_option("--data", fa.data, "Observation CSV: subject_id,time,outcome,x1,...")->required()->check(CLI::ExistingFile);
  fit->add_option("--followup", fa.followup, "Follow-up CSV: subject_id,followup")->required()->check(CLI::ExistingFile);
  fit->add_option("--tau", fa.tau, "Study horizon (default: largest follow-up)");
  fit->add_option("--out", fa.out, "Output directory")->required();
  fit->add_option("--method", fa.method, "weighted or unweighted");
  fit->add_option("--g", fa.g, "Intensity covariates, e.g. last_outcome:log1p,baseline:age");
  fit->add_option("--transform", fa.transform, "Last-outcome transform: identity or log1p");
  fit->add_option("--truncate-weights", fa.truncate, "Truncate weights at this quantile");
  fit->add_option("--knots", fa.knots, "Knot placement: equal or quantile");
  fit->add_option("--orders", fa.orders, "Spline orders, e.g. 3,4");
  fit->add_option("--dimensions", fa.dimensions, "Spline dimensions to search");
  fit->add_option("--etas", fa.etas, "Penalty grid");
  fit->add_option("--gcv-n", fa.gcv_n, "GCV sample size: effective or observations");
  fit->add_option("--bootstrap", fa.bootstrap, "Bootstrap replicates L");
  fit->add_flag("--bootstrap-unpenalized", fa.bootstrap_unpenalized, "Refit bootstrap replicates without the penalty");
  fit->add_option("--alpha", fa.alpha, "Band level");
  fit->add_option("--min-gap", fa.min_gap, "Drop visits closer than this to the previous one");
  fit->add_flag("--keep-empty-subjects", fa.keep_empty, "Keep subjects left without visits in the risk sets");
  fit->add_flag("--adni-preset", fa.adni_preset, "min-gap 1/12, log1p outcome, quantile knots, truncation 0.9");
  fit->add_option("--seed", fa.seed, "Bootstrap seed");
  fit->add_option("--threads", fa.threads, "Worker cap (default: all cores)");
  fit->add_flag("--no-fpca", fa.no_fpca, "Skip residual FPCA");
  fit->add_flag("--fpca-unweighted", fa.fpca_unweighted, "Smooth raw covariances without pair weights");
  fit->add_option("--curve-points", fa.curve_points, "Points on the output grid");
  fit->add_option("--fpca-grid", fa.fpca_grid, "FPCA grid size");
  fit->add_option("--fpca-bandwidth", fa.fpca_bandwidth, "Fixed FPCA bandwidth (default: cross-validation)");
  fit->add_option("--fve", fa.fve, "Fraction of variance explained threshold");
  fit->add_option("--bandwidth-c", fa.bandwidth_c, "Baseline smoothing constant");
  fit->add_flag("--unit-intensity-oracle", fa.unit_oracle)->group("");

  std::string run_dir, format = "svg";
  auto* report = app.add_subcommand("report", "Render plots and tables for a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_option("--format", format, "svg or csv");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--kind", sy.kind, "adni or simulation");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--config", sy.config, "Study config for --kind simulation")->check(CLI::ExistingFile);
  synth->add_option("--seed", sy.seed, "Seed");
  synth->add_option("--n", sy.n, "Subjects");
  synth->add_option("--observations", sy.observations, "Total visits (adni only)");
  synth->add_option("--replicate", sy.replicate, "Replicate index (simulation only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  if (*simulate) return cmd_simulate(sim);
  if (*fit) return cmd_fit(fa);
  if (*report) return cmd_report(run_dir, format);
  if (*synth) return cmd_synth(sy);
  return kInputError;
}
