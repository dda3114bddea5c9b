#include "ivcm/inference.hpp"

#include <random>
#include <sstream>

#include "ivcm/error.hpp"
#include "ivcm/io.hpp"
#include "ivcm/parallel.hpp"
#include "ivcm/stats.hpp"

namespace ivcm {

Eigen::VectorXd draw_multipliers(std::size_t n_subjects, std::uint64_t seed, std::uint64_t l, std::uint64_t attempt,
                                 MultiplierScheme scheme) {
  Eigen::VectorXd xi = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_subjects));
  if (scheme == MultiplierScheme::kUnit) return xi;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(l >> 32),
                    static_cast<std::uint32_t>(attempt), 0x6d756c74u};
  std::mt19937_64 rng(seq);
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = (rng() >> 63) ? 2.0 : 0.0;
  return xi;
}

BootstrapEnsemble multiplier_bootstrap(const Design& design, const CoefficientFit& fit,
                                       const BootstrapOptions& options) {
  if (options.replicates < 2) throw Error(ErrorCode::kDegenerateEnsemble, "bootstrap needs at least 2 replicates");
  if (fit.a_hat.rows() != design.q() || fit.d() != design.d())
    throw Error(ErrorCode::kDimensionMismatch, "fit does not match the design");

  std::optional<Penalty> penalty;
  const bool penalize = options.penalized && fit.eta.size() == design.d() && fit.eta.maxCoeff() > 0.0;
  if (penalize) penalty = Penalty::for_basis(design.basis(), fit.eta);

  BootstrapEnsemble out{{}, options.seed, fit.basis, penalize ? fit.eta : Eigen::VectorXd::Zero(fit.eta.size()),
                        fit.weights, 0};
  out.replicates.resize(static_cast<std::size_t>(options.replicates));
  std::vector<int> redraws(out.replicates.size(), 0);
  const std::size_t n = design.n_subjects();

  parallel_for(out.replicates.size(), options.threads, [&](std::size_t l) {
    for (int attempt = 0;; ++attempt) {
      const Eigen::VectorXd xi = draw_multipliers(n, options.seed, l, static_cast<std::uint64_t>(attempt), options.scheme);
      Eigen::VectorXd rows(static_cast<Eigen::Index>(design.rows()));
      for (std::size_t r = 0; r < design.rows(); ++r)
        rows[static_cast<Eigen::Index>(r)] = xi[static_cast<Eigen::Index>(design.subject(r))];
      bool degenerate = false;
      try {
        auto rep = solve_wls(design, penalty, rows);
        // a replicate that only solves after ridging has lost identifiability
        degenerate = rep.ridge_applied && !fit.ridge_applied;
        if (!degenerate) {
          out.replicates[l] = std::move(rep.a_hat);
          return;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kSingularSystem) throw;
        degenerate = true;
      }
      if (attempt >= options.max_redraws)
        throw Error(ErrorCode::kSingularSystem,
                    "bootstrap replicate " + std::to_string(l) + " stayed singular after redraws");
      ++redraws[l];
    }
  });
  for (int r : redraws) out.redraws += r;
  return out;
}

PointwiseBand pointwise_band(const BootstrapEnsemble& ensemble, const CoefficientFit& fit, int j,
                             const std::vector<double>& grid, double alpha, std::string name) {
  const int L = ensemble.size();
  if (L < 2) throw Error(ErrorCode::kDegenerateEnsemble, "ensemble has fewer than 2 replicates");
  if (j < 0 || j >= fit.d()) throw Error(ErrorCode::kInvalidArgument, "coefficient index out of range");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  const int q = fit.basis.dimension();
  Eigen::MatrixXd cols(q, L);
  for (int l = 0; l < L; ++l) {
    const auto& a = ensemble.replicates[static_cast<std::size_t>(l)];
    if (a.rows() != q || a.cols() != fit.d())
      throw Error(ErrorCode::kDimensionMismatch, "replicate dimensions differ from the fit");
    cols.col(l) = a.col(j);
  }

  const double z = normal_quantile(1.0 - alpha / 2.0);
  const auto g = static_cast<Eigen::Index>(grid.size());
  PointwiseBand band{grid, Eigen::VectorXd(g), Eigen::VectorXd(g), Eigen::VectorXd(g), Eigen::VectorXd(g), alpha, j,
                     std::move(name)};
  for (Eigen::Index k = 0; k < g; ++k) {
    const Eigen::VectorXd b = fit.basis.eval(grid[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd curves = cols.transpose() * b;
    const double mean = curves.mean();
    const double v = (curves.array() - mean).square().sum() / (L - 1);
    const double est = fit.a_hat.col(j).dot(b);
    const double half = z * std::sqrt(v);
    band.estimate[k] = est;
    band.variance[k] = v;
    band.lower[k] = est - half;
    band.upper[k] = est + half;
  }
  return band;
}

std::string bands_to_csv(const std::vector<PointwiseBand>& bands) {
  std::ostringstream os;
  os << "t,estimate,variance,lower,upper,coefficient_name,alpha\n";
  for (const auto& band : bands) {
    const std::string name = band.name.empty() ? "beta" + std::to_string(band.coefficient) : band.name;
    for (std::size_t k = 0; k < band.grid.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      os << io::format_double(band.grid[k]) << ',' << io::format_double(band.estimate[i]) << ','
         << io::format_double(band.variance[i]) << ',' << io::format_double(band.lower[i]) << ','
         << io::format_double(band.upper[i]) << ',' << name << ',' << io::format_double(band.alpha) << '\n';
    }
  }
  return os.str();
}

}  // namespace ivcm
