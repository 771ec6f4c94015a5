#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "gsfm/csv.hpp"
#include "gsfm/error.hpp"

namespace gsfm {

/// One gap-time record: the time between the (k-1)th and kth recurrence of a
/// subject, or the censored remainder of follow-up.
struct Observation {
  long long subject = 0;
  int recurrence = 1;  // k, 1-based
  int stratum = 1;     // j, 1-based
  double time = 0.0;   // gap time
  int status = 0;      // 1 = event, 0 = censored
  std::vector<double> covariates;

  bool operator==(const Observation&) const = default;
};

/// Immutable collection of observations plus the counts derived from them.
///
/// K and G default to the largest recurrence and stratum indices present.
/// Subjects are numbered densely (0..n-1) in order of first appearance.
class Dataset {
 public:
  Dataset() = default;

  explicit Dataset(std::vector<Observation> observations,
                   std::vector<std::string> covariate_names = {}, int K = 0, int G = 0)
      : obs_(std::move(observations)), covariate_names_(std::move(covariate_names)) {
    p_ = obs_.empty() ? covariate_names_.size() : obs_.front().covariates.size();
    if (covariate_names_.empty()) {
      for (std::size_t c = 0; c < p_; ++c) covariate_names_.push_back("z" + std::to_string(c + 1));
    }
    int max_k = 0;
    int max_j = 0;
    std::unordered_map<long long, std::size_t> index;
    subject_of_.reserve(obs_.size());
    for (const auto& o : obs_) {
      max_k = std::max(max_k, o.recurrence);
      max_j = std::max(max_j, o.stratum);
      auto [it, inserted] = index.try_emplace(o.subject, subject_ids_.size());
      if (inserted) {
        subject_ids_.push_back(o.subject);
        subject_stratum_.push_back(o.stratum);
      }
      subject_of_.push_back(it->second);
    }
    K_ = K > 0 ? K : max_k;
    G_ = G > 0 ? G : max_j;

    n_j_.assign(static_cast<std::size_t>(std::max(G_, 0)), 0);
    for (int j : subject_stratum_) {
      if (j >= 1 && j <= G_) ++n_j_[static_cast<std::size_t>(j - 1)];
    }
    n_kj_.assign(static_cast<std::size_t>(std::max(K_, 0) * std::max(G_, 0)), 0);
    std::set<std::pair<std::size_t, int>> seen;
    for (std::size_t r = 0; r < obs_.size(); ++r) {
      const auto& o = obs_[r];
      if (o.recurrence < 1 || o.recurrence > K_ || o.stratum < 1 || o.stratum > G_) continue;
      if (seen.emplace(subject_of_[r], o.recurrence).second) {
        ++n_kj_[static_cast<std::size_t>((o.recurrence - 1) * G_ + (o.stratum - 1))];
      }
    }
  }

  const std::vector<Observation>& observations() const noexcept { return obs_; }
  const Observation& operator[](std::size_t r) const { return obs_[r]; }
  std::size_t size() const noexcept { return obs_.size(); }
  bool empty() const noexcept { return obs_.empty(); }

  int K() const noexcept { return K_; }
  int G() const noexcept { return G_; }
  std::size_t n() const noexcept { return subject_ids_.size(); }
  std::size_t p() const noexcept { return p_; }

  /// Dense 0-based subject index of observation r.
  std::size_t subject_index(std::size_t r) const { return subject_of_[r]; }
  const std::vector<long long>& subject_ids() const noexcept { return subject_ids_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

  /// Subjects in stratum j (1-based).
  std::size_t n_j(int j) const { return n_j_.at(static_cast<std::size_t>(j - 1)); }

  /// Subjects in stratum j with a kth-gap record.
  std::size_t n_kj(int k, int j) const {
    if (k < 1 || k > K_ || j < 1 || j > G_) throw Error("n_kj: index out of range");
    return n_kj_[static_cast<std::size_t>((k - 1) * G_ + (j - 1))];
  }

  bool operator==(const Dataset& o) const {
    return obs_ == o.obs_ && covariate_names_ == o.covariate_names_ && K_ == o.K_ && G_ == o.G_;
  }

 private:
  std::vector<Observation> obs_;
  std::vector<std::string> covariate_names_;
  std::size_t p_ = 0;
  int K_ = 0;
  int G_ = 0;
  std::vector<long long> subject_ids_;
  std::vector<int> subject_stratum_;
  std::vector<std::size_t> subject_of_;
  std::vector<std::size_t> n_j_;
  std::vector<std::size_t> n_kj_;
};

/// Lists every violated dataset invariant; empty means the dataset is usable.
inline std::vector<std::string> validate(const Dataset& ds) {
  std::vector<std::string> out;
  if (ds.empty()) {
    out.push_back("no observations");
    return out;
  }
  const auto& obs = ds.observations();
  for (std::size_t r = 0; r < obs.size(); ++r) {
    const auto& o = obs[r];
    const std::string where = "row " + std::to_string(r + 1) + " (subject " + std::to_string(o.subject) + "): ";
    if (!(o.time > 0.0) || !std::isfinite(o.time)) out.push_back(where + "non-positive time");
    if (o.status != 0 && o.status != 1) out.push_back(where + "status must be 0 or 1");
    if (o.recurrence < 1 || o.recurrence > ds.K()) out.push_back(where + "recurrence index out of range");
    if (o.stratum < 1 || o.stratum > ds.G()) out.push_back(where + "stratum out of range");
    if (o.covariates.size() != ds.p()) {
      out.push_back(where + "covariate count mismatch");
    } else if (std::any_of(o.covariates.begin(), o.covariates.end(), [](double z) { return !std::isfinite(z); })) {
      out.push_back(where + "non-finite covariate");
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < obs.size(); ++r) rows_of[ds.subject_index(r)].push_back(r);
  for (const auto& [s, rows] : rows_of) {
    const std::string who = "subject " + std::to_string(ds.subject_ids()[s]) + ": ";
    std::vector<int> ks;
    bool stratum_changes = false;
    for (std::size_t r : rows) {
      ks.push_back(obs[r].recurrence);
      stratum_changes |= obs[r].stratum != obs[rows.front()].stratum;
    }
    if (stratum_changes) out.push_back(who + "stratum changes between records");
    std::sort(ks.begin(), ks.end());
    if (std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
      out.push_back(who + "duplicate recurrence");
      continue;
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (ks[i] != static_cast<int>(i + 1)) {
        out.push_back(who + "non-prefix recurrence");
        break;
      }
    }
  }
  return out;
}

/// Column names used by load_csv / write_csv. An empty covariate list means
/// "every column not named above, in header order".
struct CsvSchema {
  std::string subject = "subject";
  std::string recurrence = "recurrence";
  std::string stratum = "stratum";
  std::string time = "time";
  std::string status = "status";
  std::vector<std::string> covariates;
};

struct LoadOptions {
  bool validate = true;
  bool allow_missing_covariates = false;  // "NA" or empty cells read as NaN
};

inline Dataset load_csv(std::istream& in, const CsvSchema& schema = {}, const LoadOptions& opts = {}) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty() || csv::trim(line) == "\r") continue;
    auto fields = csv::split(line);
    if (!fields) throw ParseError(lineno, "unterminated quoted field");
    for (auto& f : *fields) f = std::string(csv::trim(f));
    header = std::move(*fields);
    break;
  }
  if (header.empty()) throw Error("no observations");

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error("schema mismatch: column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_subject = column(schema.subject);
  const std::size_t c_k = column(schema.recurrence);
  const std::size_t c_j = column(schema.stratum);
  const std::size_t c_time = column(schema.time);
  const std::size_t c_status = column(schema.status);

  std::vector<std::string> cov_names = schema.covariates;
  std::vector<std::size_t> c_cov;
  if (cov_names.empty()) {
    const std::set<std::size_t> fixed{c_subject, c_k, c_j, c_time, c_status};
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!fixed.count(c)) cov_names.push_back(header[c]);
    }
  }
  for (const auto& name : cov_names) c_cov.push_back(column(name));

  std::vector<Observation> obs;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty() || csv::trim(line) == "\r") continue;
    auto fields = csv::split(line);
    if (!fields) throw ParseError(lineno, "unterminated quoted field");
    if (fields->size() != header.size()) {
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(fields->size()));
    }
    auto as_int = [&](std::size_t c) {
      auto v = csv::parse_int((*fields)[c]);
      if (!v) throw ParseError(lineno, "column '" + header[c] + "': not an integer: '" + (*fields)[c] + "'");
      return *v;
    };
    auto as_double = [&](std::size_t c, bool missing_ok) {
      const auto cell = csv::trim((*fields)[c]);
      if (missing_ok && (cell.empty() || cell == "NA")) return std::numeric_limits<double>::quiet_NaN();
      auto v = csv::parse_double(cell);
      if (!v) throw ParseError(lineno, "column '" + header[c] + "': not a number: '" + (*fields)[c] + "'");
      return *v;
    };
    Observation o;
    o.subject = as_int(c_subject);
    o.recurrence = static_cast<int>(as_int(c_k));
    o.stratum = static_cast<int>(as_int(c_j));
    o.time = as_double(c_time, false);
    o.status = static_cast<int>(as_int(c_status));
    for (std::size_t c : c_cov) o.covariates.push_back(as_double(c, opts.allow_missing_covariates));
    obs.push_back(std::move(o));
  }
  if (obs.empty()) throw Error("no observations");

  Dataset ds(std::move(obs), cov_names);
  if (opts.validate) {
    const auto violations = validate(ds);
    if (!violations.empty()) {
      std::string msg = "invalid dataset: " + violations.front();
      if (violations.size() > 1) msg += " (and " + std::to_string(violations.size() - 1) + " more)";
      throw Error(msg);
    }
  }
  return ds;
}

inline void write_csv(std::ostream& os, const Dataset& ds) {
  std::vector<std::string> header{"subject", "recurrence", "stratum", "time", "status"};
  header.insert(header.end(), ds.covariate_names().begin(), ds.covariate_names().end());
  csv::write_row(os, header);
  for (const auto& o : ds.observations()) {
    std::vector<std::string> row{std::to_string(o.subject), std::to_string(o.recurrence),
                                 std::to_string(o.stratum), csv::format(o.time), std::to_string(o.status)};
    for (double z : o.covariates) row.push_back(csv::format(z));
    csv::write_row(os, row);
  }
}

/// Stratum code -> human-readable label, stored as a two-column sidecar CSV.
using StrataLabels = std::map<int, std::string>;

inline StrataLabels read_strata_labels(std::istream& in) {
  StrataLabels labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (!f || f->size() != 2) throw ParseError(lineno, "expected stratum,label");
    auto j = csv::parse_int((*f)[0]);
    if (!j) throw ParseError(lineno, "stratum is not an integer");
    labels[static_cast<int>(*j)] = std::string(csv::trim((*f)[1]));
  }
  return labels;
}

inline void write_strata_labels(std::ostream& os, const StrataLabels& labels) {
  csv::write_row(os, {"stratum", "label"});
  for (const auto& [j, label] : labels) csv::write_row(os, {std::to_string(j), label});
}

enum class MissingCovariates { error, carry_forward };

struct BladderOptions {
  MissingCovariates missing = MissingCovariates::error;
  int max_recurrence = 2;
  // Zero-length censored gaps (present in the raw records) are moved to this
  // positive time; their likelihood contribution is then negligible.
  double min_censored_gap_years = 1e-3;
};

/// Converts raw bladder recurrence records to model units.
///
/// Input: gap times in months, raw status codes (0 censored, 1 recurrence,
/// 2 death from bladder cancer, 3 death from other causes), covariates
/// (tumour count, largest tumour size) measured at the start of each interval.
/// Output: gap times in years, binary status with deaths from bladder cancer
/// counted as events, covariates divided by 100, recurrences k <= 2 only.
inline Dataset prepare_bladder(const Dataset& raw, const BladderOptions& opts = {}) {
  std::vector<Observation> out;
  std::map<std::size_t, std::vector<double>> last_covariates;
  for (std::size_t r = 0; r < raw.size(); ++r) {
    const Observation& o = raw[r];
    const std::string who = "subject " + std::to_string(o.subject);
    if (o.recurrence > opts.max_recurrence) continue;
    Observation q = o;
    for (std::size_t c = 0; c < q.covariates.size(); ++c) {
      if (std::isfinite(q.covariates[c])) continue;
      auto it = last_covariates.find(raw.subject_index(r));
      if (opts.missing == MissingCovariates::carry_forward && it != last_covariates.end()) {
        q.covariates[c] = it->second[c];
      } else {
        throw Error(who + ": missing covariate '" + raw.covariate_names()[c] + "' at recurrence " +
                    std::to_string(o.recurrence));
      }
    }
    last_covariates[raw.subject_index(r)] = q.covariates;

    switch (o.status) {
      case 0:
      case 3: q.status = 0; break;
      case 1:
      case 2: q.status = 1; break;
      default: throw Error(who + ": unknown raw status code " + std::to_string(o.status));
    }
    q.time = o.time / 12.0;
    if (!(q.time > 0.0)) {
      if (q.status == 1) throw Error(who + ": event with non-positive gap time");
      q.time = opts.min_censored_gap_years;
    }
    for (double& z : q.covariates) z /= 100.0;
    out.push_back(std::move(q));
  }
  return Dataset(std::move(out), raw.covariate_names(), opts.max_recurrence, raw.G());
}

}  // namespace gsfm
