#include "ivcm/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "ivcm/error.hpp"
#include "ivcm/io.hpp"

namespace ivcm {

LongitudinalDataset::LongitudinalDataset(std::vector<SubjectTrajectory> subjects, double tau,
                                         std::vector<std::string> covariate_names)
    : subjects_(std::move(subjects)), tau_(tau), covariate_names_(std::move(covariate_names)) {
  if (!std::isfinite(tau_) || tau_ <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "tau must be positive and finite");
  }
  if (covariate_names_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "at least the intercept covariate is required");
  }
  const auto d = static_cast<Eigen::Index>(covariate_names_.size());
  std::set<std::string> ids;
  offsets_.assign(1, 0);
  for (auto& s : subjects_) {
    if (!ids.insert(s.id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate subject id '" + s.id + "'");
    }
    if (!std::isfinite(s.follow_up)) throw Error(ErrorCode::kNonFiniteValue, "follow-up of " + s.id);
    if (s.follow_up <= 0.0 || s.follow_up > tau_) {
      throw Error(ErrorCode::kTimeOutOfRange, "follow-up of subject '" + s.id + "' outside (0, tau]");
    }
    double prev = -1.0;
    for (const auto& o : s.observations) {
      if (!std::isfinite(o.time) || !std::isfinite(o.outcome) || !o.covariates.allFinite()) {
        throw Error(ErrorCode::kNonFiniteValue, "observation of subject '" + s.id + "'");
      }
      if (o.time < 0.0 || o.time > s.follow_up) {
        throw Error(ErrorCode::kTimeOutOfRange,
                    "time " + io::format_double(o.time) + " of subject '" + s.id + "' outside [0, followup]");
      }
      if (o.time == prev) {
        throw Error(ErrorCode::kDuplicateTime, "subject '" + s.id + "' at time " + io::format_double(o.time));
      }
      if (o.time < prev) {
        throw Error(ErrorCode::kInvalidArgument, "observations of '" + s.id + "' not sorted by time");
      }
      prev = o.time;
      if (o.covariates.size() != d) {
        throw Error(ErrorCode::kDimensionMismatch, "covariate vector of subject '" + s.id + "'");
      }
      if (o.covariates[0] != 1.0) {
        throw Error(ErrorCode::kInvalidArgument, "first covariate must be the intercept 1");
      }
    }
    if (s.baseline.size() == 0 && !s.observations.empty()) s.baseline = s.observations.front().covariates;
    if (s.baseline.size() != 0 && s.baseline.size() != d) {
      throw Error(ErrorCode::kDimensionMismatch, "baseline covariates of subject '" + s.id + "'");
    }
    offsets_.push_back(offsets_.back() + s.observations.size());
  }
}

std::vector<double> LongitudinalDataset::pooled_times() const {
  std::vector<double> out;
  out.reserve(total_observations());
  for (const auto& s : subjects_)
    for (const auto& o : s.observations) out.push_back(o.time);
  return out;
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

double finite_field(const std::string& text, const std::string& what) {
  const double v = io::parse_double(text);
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, what + " = '" + text + "'");
  return v;
}

}  // namespace

LongitudinalDataset load_dataset(const std::filesystem::path& obs_path,
                                 const std::filesystem::path& followup_path, double tau) {
  const auto obs_lines = split_lines(io::read_file(obs_path));
  const auto fu_lines = split_lines(io::read_file(followup_path));
  if (obs_lines.empty()) throw Error(ErrorCode::kParse, "observation file has no header");
  if (fu_lines.empty()) throw Error(ErrorCode::kParse, "follow-up file has no header");

  const auto header = io::split_csv_line(obs_lines.front());
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "time" || header[2] != "outcome") {
    throw Error(ErrorCode::kParse, "observation header must start with subject_id,time,outcome");
  }
  const auto fu_header = io::split_csv_line(fu_lines.front());
  if (fu_header.size() != 2 || fu_header[0] != "subject_id" || fu_header[1] != "followup") {
    throw Error(ErrorCode::kParse, "follow-up header must be subject_id,followup");
  }
  std::vector<std::string> names{"intercept"};
  for (std::size_t k = 3; k < header.size(); ++k) names.push_back(header[k]);
  const auto d = static_cast<Eigen::Index>(names.size());

  std::map<std::string, double> followups;
  for (std::size_t r = 1; r < fu_lines.size(); ++r) {
    const auto f = io::split_csv_line(fu_lines[r]);
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      throw Error(ErrorCode::kParse, "follow-up row " + std::to_string(r + 1) + " has missing fields");
    }
    if (!followups.emplace(f[0], finite_field(f[1], "followup of " + f[0])).second) {
      throw Error(ErrorCode::kParse, "duplicate follow-up row for subject '" + f[0] + "'");
    }
  }

  std::map<std::string, std::vector<Observation>> grouped;
  for (std::size_t r = 1; r < obs_lines.size(); ++r) {
    const auto f = io::split_csv_line(obs_lines[r]);
    if (f.size() != header.size()) {
      throw Error(ErrorCode::kParse, "observation row " + std::to_string(r + 1) + " has wrong field count");
    }
    for (const auto& field : f) {
      if (field.empty()) throw Error(ErrorCode::kParse, "observation row " + std::to_string(r + 1) + " has missing data");
    }
    Observation o;
    o.time = finite_field(f[1], "time");
    o.outcome = finite_field(f[2], "outcome");
    o.covariates.resize(d);
    o.covariates[0] = 1.0;
    for (Eigen::Index k = 1; k < d; ++k) o.covariates[k] = finite_field(f[static_cast<std::size_t>(k) + 2], names[k]);
    grouped[f[0]].push_back(std::move(o));
  }

  std::vector<SubjectTrajectory> subjects;
  for (auto& [id, obs] : grouped) {
    const auto it = followups.find(id);
    if (it == followups.end()) throw Error(ErrorCode::kMissingFollowUp, "subject '" + id + "'");
    std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (std::size_t j = 0; j < obs.size(); ++j) {
      if (obs[j].time < 0.0 || obs[j].time > it->second) {
        throw Error(ErrorCode::kTimeOutOfRange, "subject '" + id + "' time " + io::format_double(obs[j].time));
      }
      if (j > 0 && obs[j].time == obs[j - 1].time) {
        throw Error(ErrorCode::kDuplicateTime, "subject '" + id + "' time " + io::format_double(obs[j].time));
      }
    }
  }
  for (const auto& [id, followup] : followups) {
    SubjectTrajectory s;
    s.id = id;
    s.follow_up = followup;
    if (auto g = grouped.find(id); g != grouped.end()) s.observations = std::move(g->second);
    subjects.push_back(std::move(s));
  }
  return LongitudinalDataset(std::move(subjects), tau, std::move(names));
}

void write_dataset(const LongitudinalDataset& ds, const std::filesystem::path& obs_path,
                   const std::filesystem::path& followup_path) {
  std::string obs = "subject_id,time,outcome";
  for (int k = 1; k < ds.d(); ++k) obs += "," + ds.covariate_names()[static_cast<std::size_t>(k)];
  obs += "\n";
  std::string fu = "subject_id,followup\n";
  for (const auto& s : ds.subjects()) {
    fu += s.id + "," + io::format_double(s.follow_up) + "\n";
    for (const auto& o : s.observations) {
      obs += s.id + "," + io::format_double(o.time) + "," + io::format_double(o.outcome);
      for (Eigen::Index k = 1; k < o.covariates.size(); ++k) obs += "," + io::format_double(o.covariates[k]);
      obs += "\n";
    }
  }
  io::write_file(obs_path, obs);
  io::write_file(followup_path, fu);
}

LongitudinalDataset apply_gap_filter(const LongitudinalDataset& ds, double min_gap, bool keep_empty) {
  if (!(min_gap >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "min_gap must be >= 0");
  std::vector<SubjectTrajectory> kept;
  for (const auto& s : ds.subjects()) {
    SubjectTrajectory out = s;
    out.observations.clear();
    for (const auto& o : s.observations) {
      if (out.observations.empty() || o.time - out.observations.back().time >= min_gap) {
        out.observations.push_back(o);
      }
    }
    if (out.observations.size() < 2) {
      if (!keep_empty) continue;
      out.observations.clear();
    }
    kept.push_back(std::move(out));
  }
  return LongitudinalDataset(std::move(kept), ds.tau(), ds.covariate_names());
}

LongitudinalDataset drop_empty_subjects(const LongitudinalDataset& ds) {
  std::vector<SubjectTrajectory> kept;
  for (const auto& s : ds.subjects())
    if (!s.observations.empty()) kept.push_back(s);
  return LongitudinalDataset(std::move(kept), ds.tau(), ds.covariate_names());
}

}  // namespace ivcm
