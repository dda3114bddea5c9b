#include <map>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ivcm/data.hpp"
#include "ivcm/error.hpp"
#include "ivcm/intensity.hpp"
#include "ivcm/pipeline.hpp"
#include "ivcm/report.hpp"
#include "ivcm/simulation.hpp"
#include "ivcm/splines.hpp"
#include "ivcm/vcm.hpp"

namespace py = pybind11;
using namespace ivcm;

namespace {

LongitudinalDataset dataset_from_arrays(const std::vector<std::string>& ids, const Eigen::VectorXd& times,
                                        const Eigen::VectorXd& outcomes, const Eigen::MatrixXd& covariates,
                                        const std::map<std::string, double>& followup, double tau,
                                        std::vector<std::string> names) {
  const auto n_obs = static_cast<Eigen::Index>(ids.size());
  if (times.size() != n_obs || outcomes.size() != n_obs || covariates.rows() != n_obs)
    throw Error(ErrorCode::kDimensionMismatch, "ids, times, outcomes and covariates must have the same length");
  if (names.empty())
    for (Eigen::Index k = 0; k < covariates.cols(); ++k) names.push_back("x" + std::to_string(k + 1));
  if (static_cast<Eigen::Index>(names.size()) != covariates.cols())
    throw Error(ErrorCode::kDimensionMismatch, "one name per covariate column");
  std::map<std::string, SubjectTrajectory> by_id;
  for (const auto& [id, c] : followup) by_id[id] = SubjectTrajectory{id, c, {}, {}};
  for (Eigen::Index r = 0; r < n_obs; ++r) {
    const auto& id = ids[static_cast<std::size_t>(r)];
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::kMissingFollowUp, "no follow-up time for subject " + id);
    Eigen::VectorXd x(covariates.cols() + 1);
    x << 1.0, covariates.row(r).transpose();
    it->second.observations.push_back({times[r], outcomes[r], std::move(x)});
  }
  std::vector<SubjectTrajectory> subjects;
  for (auto& [id, s] : by_id) {
    std::stable_sort(s.observations.begin(), s.observations.end(),
                     [](const Observation& a, const Observation& b) { return a.time < b.time; });
    subjects.push_back(std::move(s));
  }
  names.insert(names.begin(), "intercept");
  return LongitudinalDataset(std::move(subjects), tau, std::move(names));
}

py::dict dataset_arrays(const LongitudinalDataset& ds) {
  const auto n_obs = static_cast<Eigen::Index>(ds.total_observations());
  std::vector<std::string> ids;
  Eigen::VectorXd t(n_obs), y(n_obs);
  Eigen::MatrixXd x(n_obs, ds.d());
  Eigen::Index r = 0;
  for (const auto& s : ds.subjects()) {
    for (const auto& o : s.observations) {
      ids.push_back(s.id);
      t[r] = o.time;
      y[r] = o.outcome;
      x.row(r++) = o.covariates.transpose();
    }
  }
  py::dict out;
  out["subject_id"] = ids;
  out["time"] = t;
  out["outcome"] = y;
  out["covariates"] = x;
  return out;
}

FitOptions make_fit_options(const std::string& method, bool adni_preset, int bootstrap, double alpha,
                            std::uint64_t seed, std::optional<double> truncate_weights, std::optional<double> min_gap,
                            const std::string& knots, const std::string& g, bool fpca, unsigned threads,
                            bool unit_intensity_oracle) {
  FitOptions o = adni_preset ? FitOptions::adni_preset() : FitOptions{};
  if (method == "weighted") {
    o.mode = FitMode::kWeighted;
  } else if (method == "unweighted") {
    o.mode = FitMode::kUnweighted;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "method must be weighted or unweighted");
  }
  if (bootstrap > 0) o.bootstrap = bootstrap;
  o.alpha = alpha;
  o.seed = seed;
  if (truncate_weights) o.truncation_quantile = truncate_weights;
  if (min_gap) o.min_gap = *min_gap;
  if (!knots.empty()) o.tuning.placement = knot_placement_from_string(knots);
  o.g_spec = g;
  o.fpca = fpca;
  o.threads = threads;
  o.unit_intensity_oracle = unit_intensity_oracle;
  return o;
}

}  // namespace

PYBIND11_MODULE(_ivcm, m) {
  m.doc() = "Inverse-intensity weighted varying coefficient models";
  m.attr("__version__") = version_string();

  static py::exception<Error> error(m, "IvcmError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), e.what());
    }
  });

  py::class_<SplineBasis>(m, "SplineBasis")
      .def_static("equal", &SplineBasis::equal, py::arg("order"), py::arg("dimension"), py::arg("tau"))
      .def_static(
          "quantile",
          [](int order, int dimension, double tau, const std::vector<double>& times) {
            return SplineBasis::quantile(order, dimension, tau, times);
          },
          py::arg("order"), py::arg("dimension"), py::arg("tau"), py::arg("times"))
      .def_property_readonly("order", &SplineBasis::order)
      .def_property_readonly("dimension", &SplineBasis::dimension)
      .def_property_readonly("tau", &SplineBasis::tau)
      .def_property_readonly("knots", &SplineBasis::knots)
      .def("eval", &SplineBasis::eval, py::arg("t"))
      .def("derivative", &SplineBasis::derivative, py::arg("t"), py::arg("k"))
      .def("penalty_gram", &SplineBasis::penalty_gram, py::arg("k") = 2)
      .def("matrix", [](const SplineBasis& b, const std::vector<double>& ts) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(ts.size()), b.dimension());
        for (std::size_t i = 0; i < ts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = b.eval(ts[i]).transpose();
        return out;
      });

  py::class_<LongitudinalDataset>(m, "Dataset")
      .def_static("load", &load_dataset, py::arg("observations"), py::arg("followup"), py::arg("tau"))
      .def_static("from_arrays", &dataset_from_arrays, py::arg("subject_id"), py::arg("time"), py::arg("outcome"),
                  py::arg("covariates"), py::arg("followup"), py::arg("tau"),
                  py::arg("names") = std::vector<std::string>{},
                  "Covariates exclude the intercept; followup maps subject id to censoring time.")
      .def("save",
           [](const LongitudinalDataset& ds, const std::filesystem::path& obs, const std::filesystem::path& fu) {
             write_dataset(ds, obs, fu);
           })
      .def_property_readonly("n", &LongitudinalDataset::n)
      .def_property_readonly("d", &LongitudinalDataset::d)
      .def_property_readonly("tau", &LongitudinalDataset::tau)
      .def_property_readonly("covariate_names", &LongitudinalDataset::covariate_names)
      .def_property_readonly("total_observations", &LongitudinalDataset::total_observations)
      .def("arrays", &dataset_arrays)
      .def("__repr__", [](const LongitudinalDataset& ds) {
        return "<Dataset n=" + std::to_string(ds.n()) + " observations=" + std::to_string(ds.total_observations()) +
               ">";
      });

  py::class_<SimulationConfig>(m, "SimulationConfig")
      .def(py::init<>())
      .def_static("parse", &SimulationConfig::parse, py::arg("text"))
      .def_static("load", &SimulationConfig::load, py::arg("path"))
      .def_readwrite("n", &SimulationConfig::n)
      .def_readwrite("tau", &SimulationConfig::tau)
      .def_readwrite("seed", &SimulationConfig::seed)
      .def_readwrite("replicates", &SimulationConfig::replicates)
      .def_readwrite("bootstrap", &SimulationConfig::bootstrap)
      .def_readwrite("alpha", &SimulationConfig::alpha)
      .def_readwrite("fpca", &SimulationConfig::fpca)
      .def_readwrite("threads", &SimulationConfig::threads)
      .def_readwrite("gamma", &SimulationConfig::gamma)
      .def("beta", &SimulationConfig::beta, py::arg("j"), py::arg("t"))
      .def("validate", &SimulationConfig::validate)
      .def("to_text", &SimulationConfig::to_text);

  m.def(
      "generate_dataset",
      [](const SimulationConfig& cfg, std::uint64_t replicate) {
        auto g = generate_dataset(cfg, replicate);
        return py::make_tuple(std::move(g.data), g.true_weights);
      },
      py::arg("config"), py::arg("replicate") = 0, "Returns (dataset, true inverse-intensity weights).");
  m.def("generate_adni_like", &generate_adni_like, py::arg("seed"), py::arg("n_subjects") = 807,
        py::arg("n_observations") = 3558);

  m.def(
      "run_study",
      [](const SimulationConfig& cfg) {
        MetricsReport r;
        {
          py::gil_scoped_release release;
          r = run_study(cfg);
        }
        py::dict out;
        out["summary"] = r.summary_table();
        out["metrics_csv"] = r.to_csv();
        out["coverage_csv"] = r.coverage_csv();
        out["failures"] = r.failures.size();
        py::list rows;
        for (const auto& s : r.summary()) {
          py::dict d;
          d["method"] = std::string(to_string(s.method));
          d["count"] = s.count;
          d["mise"] = s.mise;
          d["sd"] = s.sd;
          d["coverage"] = s.coverage;
          rows.append(d);
        }
        out["methods"] = rows;
        return out;
      },
      py::arg("config"));

  m.def(
      "fit_intensity",
      [](const LongitudinalDataset& ds, const std::string& g, std::optional<double> truncate_weights) {
        const auto spec = g.empty() ? HistoryCovariateSpec::standard(ds.d()) : HistoryCovariateSpec::parse(g, ds.covariate_names());
        const auto fit = fit_intensity(ds, spec);
        const auto w = compute_weights(ds, spec, fit, truncate_weights);
        py::dict out;
        out["gamma"] = fit.gamma;
        out["iterations"] = fit.iterations;
        out["converged"] = fit.converged;
        out["loglik"] = fit.loglik;
        out["bandwidth"] = fit.bandwidth;
        out["weights"] = w.weights;
        out["g"] = spec.describe(ds.covariate_names());
        return out;
      },
      py::arg("dataset"), py::arg("g") = "", py::arg("truncate_weights") = std::nullopt);

  py::class_<FitRun>(m, "FitRun")
      .def_property_readonly("grid", [](const FitRun& r) { return r.grid; })
      .def_property_readonly("coefficients",
                             [](const FitRun& r) {
                               Eigen::MatrixXd out(static_cast<Eigen::Index>(r.grid.size()), r.fit.d());
                               for (std::size_t k = 0; k < r.grid.size(); ++k)
                                 out.row(static_cast<Eigen::Index>(k)) = eval_beta(r.fit, r.grid[k]).transpose();
                               return out;
                             })
      .def_property_readonly("a_hat", [](const FitRun& r) { return r.fit.a_hat; })
      .def_property_readonly("covariate_names", [](const FitRun& r) { return r.data.covariate_names(); })
      .def_property_readonly("weights", [](const FitRun& r) { return r.weights.weights; })
      .def_property_readonly("gamma", [](const FitRun& r) -> std::optional<Eigen::VectorXd> {
        if (!r.intensity) return std::nullopt;
        return r.intensity->gamma;
      })
      .def_property_readonly("tuning",
                             [](const FitRun& r) {
                               py::dict d;
                               d["order"] = r.tuning.order;
                               d["dimension"] = r.tuning.dimension;
                               d["eta"] = r.tuning.eta;
                               d["gcv"] = r.tuning.gcv;
                               return d;
                             })
      .def_property_readonly("bands",
                             [](const FitRun& r) {
                               py::list out;
                               for (const auto& b : r.bands) {
                                 py::dict d;
                                 d["name"] = b.name;
                                 d["estimate"] = b.estimate;
                                 d["lower"] = b.lower;
                                 d["upper"] = b.upper;
                                 d["variance"] = b.variance;
                                 out.append(d);
                               }
                               return out;
                             })
      .def_property_readonly("fpca",
                             [](const FitRun& r) -> py::object {
                               if (!r.fpca) return py::none();
                               py::dict d;
                               d["grid"] = r.fpca->grid;
                               d["eigenvalues"] = r.fpca->eigenvalues;
                               d["eigenfunctions"] = r.fpca->eigenfunctions;
                               d["surface"] = r.fpca->surface;
                               d["bandwidth"] = r.fpca->bandwidth;
                               d["n_components"] = r.fpca->n_components;
                               return d;
                             })
      .def_property_readonly("warnings", [](const FitRun& r) { return r.warnings; })
      .def("beta", [](const FitRun& r, double t) { return eval_beta(r.fit, t); }, py::arg("t"));

  m.def(
      "fit",
      [](const LongitudinalDataset& ds, const std::string& method, bool adni_preset, int bootstrap, double alpha,
         std::uint64_t seed, std::optional<double> truncate_weights, std::optional<double> min_gap,
         const std::string& knots, const std::string& g, bool fpca, unsigned threads, bool unit_intensity_oracle,
         std::optional<std::filesystem::path> out) {
        const auto started = utc_timestamp();
        const auto o = make_fit_options(method, adni_preset, bootstrap, alpha, seed, truncate_weights, min_gap, knots,
                                        g, fpca, threads, unit_intensity_oracle);
        py::gil_scoped_release release;
        auto run = run_fit(ds, o);
        if (out) write_fit_outputs(run, o, *out, started);
        return run;
      },
      py::arg("dataset"), py::arg("method") = "weighted", py::arg("adni_preset") = false, py::arg("bootstrap") = 0,
      py::arg("alpha") = 0.05, py::arg("seed") = 1, py::arg("truncate_weights") = std::nullopt,
      py::arg("min_gap") = std::nullopt, py::arg("knots") = "", py::arg("g") = "", py::arg("fpca") = true,
      py::arg("threads") = 1, py::arg("unit_intensity_oracle") = false, py::arg("out") = std::nullopt);

  m.def(
      "report",
      [](const std::filesystem::path& run, const std::string& format) {
        return write_report(run, report_format_from_string(format));
      },
      py::arg("run"), py::arg("format") = "svg");
}
