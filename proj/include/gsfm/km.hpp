#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gsfm/csv.hpp"
#include "gsfm/data.hpp"
#include "gsfm/error.hpp"

namespace gsfm {

/// Product-limit step function. survival[i] holds on [times[i], times[i+1]).
struct StepSurvival {
  std::vector<double> times;  // distinct event times, increasing
  std::vector<double> survival;
  std::vector<std::size_t> n_risk;
  std::vector<std::size_t> n_event;

  /// S(t); 1 before the first event time.
  double operator()(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// Kaplan-Meier estimate. Ties are grouped; at a shared time events are
/// counted before censorings, so a record censored at an event time is still
/// in that time's risk set.
inline StepSurvival km_fit(std::span<const double> times, std::span<const int> deltas) {
  if (times.empty()) throw Error("km_fit: empty input");
  if (times.size() != deltas.size()) throw Error("km_fit: times and deltas differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0)) throw DomainError("km_fit: times must be positive");
    if (deltas[i] != 0 && deltas[i] != 1) throw DomainError("km_fit: status must be 0 or 1");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  StepSurvival out;
  std::size_t at_risk = times.size();
  double s = 1.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = times[order[i]];
    std::size_t d = 0, total = 0;
    for (; i < order.size() && times[order[i]] == t; ++i, ++total) d += static_cast<std::size_t>(deltas[order[i]]);
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      out.times.push_back(t);
      out.survival.push_back(s);
      out.n_risk.push_back(at_risk);
      out.n_event.push_back(d);
    }
    at_risk -= total;
  }
  return out;
}

struct KmCurve {
  int stratum = 0;     // 0 when not split by stratum
  int recurrence = 0;  // 0 when not split by recurrence
  StepSurvival fit;
};

/// One curve per (stratum, recurrence) cell present in the data; either
/// split can be switched off.
inline std::vector<KmCurve> km_by(const Dataset& ds, bool by_stratum, bool by_recurrence) {
  std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<int>>> cells;
  for (const auto& o : ds.observations()) {
    auto& cell = cells[{by_stratum ? o.stratum : 0, by_recurrence ? o.recurrence : 0}];
    cell.first.push_back(o.time);
    cell.second.push_back(o.status);
  }
  std::vector<KmCurve> out;
  for (const auto& [key, cell] : cells) out.push_back(KmCurve{key.first, key.second, km_fit(cell.first, cell.second)});
  return out;
}

inline void write_km_csv(std::ostream& os, std::span<const KmCurve> curves) {
  csv::write_row(os, {"t", "survival", "n_risk", "n_event", "stratum", "recurrence"});
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.fit.times.size(); ++i) {
      csv::write_row(os, {csv::format(c.fit.times[i]), csv::format(c.fit.survival[i]), std::to_string(c.fit.n_risk[i]),
                          std::to_string(c.fit.n_event[i]), std::to_string(c.stratum),
                          std::to_string(c.recurrence)});
    }
  }
}

}  // namespace gsfm
