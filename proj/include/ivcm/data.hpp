#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ivcm {

/// One visit: outcome Y_ij and covariates X_ij observed at time t_ij.
/// covariates[0] is the intercept and is always exactly 1.
struct Observation {
  double time = 0.0;
  double outcome = 0.0;
  Eigen::VectorXd covariates;
};

/// A subject's follow-up window [0, C_i] and the visits inside it.
struct SubjectTrajectory {
  std::string id;
  double follow_up = 0.0;
  std::vector<Observation> observations;
  /// Time-fixed covariates known at study entry (intercept first). Empty means
  /// "take them from the first observation"; the loader fills this in.
  Eigen::VectorXd baseline;

  std::size_t size() const noexcept { return observations.size(); }
};

/// Immutable collection of subjects sharing covariate dimension d and horizon tau.
///
/// Per-observation arrays elsewhere in the library (weights, residuals) use the
/// flat layout: subjects in dataset order, observations in time order.
class LongitudinalDataset {
 public:
  LongitudinalDataset() = default;
  /// Validates every invariant; throws ivcm::Error on violation.
  LongitudinalDataset(std::vector<SubjectTrajectory> subjects, double tau,
                      std::vector<std::string> covariate_names);

  const std::vector<SubjectTrajectory>& subjects() const noexcept { return subjects_; }
  const SubjectTrajectory& subject(std::size_t i) const { return subjects_.at(i); }
  std::size_t n() const noexcept { return subjects_.size(); }
  int d() const noexcept { return static_cast<int>(covariate_names_.size()); }
  double tau() const noexcept { return tau_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

  /// N = sum of m_i.
  std::size_t total_observations() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
  /// Flat index of subject i's first observation; offset(n()) == N.
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }

  /// All observation times in flat layout.
  std::vector<double> pooled_times() const;

 private:
  std::vector<SubjectTrajectory> subjects_;
  double tau_ = 0.0;
  std::vector<std::string> covariate_names_;
  std::vector<std::size_t> offsets_;
};

/// Reads the long-format observation CSV (`subject_id,time,outcome,x1,...`)
/// and the follow-up sidecar (`subject_id,followup`). The intercept column is
/// prepended; subjects are ordered by id and observations by time.
/// Subjects listed only in the follow-up file are kept with zero observations.
LongitudinalDataset load_dataset(const std::filesystem::path& obs_path,
                                 const std::filesystem::path& followup_path, double tau);

/// Inverse of load_dataset; numbers are written with 17 significant digits.
void write_dataset(const LongitudinalDataset& ds, const std::filesystem::path& obs_path,
                   const std::filesystem::path& followup_path);

/// Drops visits closer than min_gap to the previously retained visit, then
/// drops subjects left with fewer than two visits. With keep_empty the dropped
/// subjects stay in the dataset with zero observations (they remain at risk).
LongitudinalDataset apply_gap_filter(const LongitudinalDataset& ds, double min_gap,
                                     bool keep_empty = false);

/// Removes subjects with m_i = 0.
LongitudinalDataset drop_empty_subjects(const LongitudinalDataset& ds);

}  // namespace ivcm
