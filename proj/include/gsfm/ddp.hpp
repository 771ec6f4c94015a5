#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gsfm/csv.hpp"
#include "gsfm/error.hpp"
#include "gsfm/special.hpp"

namespace gsfm {

/// Truncated stick-breaking random measure for one recurrence: L weights,
/// L atom location vectors of length q (row-major), L kernel scales.
struct AtomSet {
  std::vector<double> weights;
  std::vector<double> locations;
  std::vector<double> scales;
  std::size_t q = 1;

  std::size_t L() const noexcept { return weights.size(); }
  std::span<const double> location(std::size_t h) const {
    return std::span<const double>(locations).subspan(h * q, q);
  }
};

inline void check_atoms(const AtomSet& a) {
  const std::size_t L = a.weights.size();
  if (L == 0 || a.scales.size() != L || a.locations.size() != L * a.q) {
    throw Error("AtomSet: inconsistent dimensions");
  }
  double total = 0.0;
  for (double p : a.weights) {
    if (!(p >= 0.0)) throw DomainError("AtomSet: negative weight");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("AtomSet: weights do not sum to one");
  for (double s : a.scales) {
    if (!(s > 0.0)) throw DomainError("AtomSet: kernel scale must be positive");
  }
}

/// Stick-breaking weights from L-1 stick fractions in (0,1); the last stick
/// takes the remainder.
inline std::vector<double> stick_break(std::span<const double> fractions) {
  std::vector<double> p;
  p.reserve(fractions.size() + 1);
  double remaining = 1.0;
  for (double v : fractions) {
    if (!(v > 0.0 && v < 1.0)) throw DomainError("stick_break: fraction outside (0,1)");
    p.push_back(v * remaining);
    remaining *= 1.0 - v;
  }
  p.push_back(remaining);
  return p;
}

/// Inverse of stick_break for strictly positive weights.
inline std::vector<double> stick_fractions(std::span<const double> weights) {
  if (weights.size() < 2) throw Error("stick_fractions: need at least two weights");
  std::vector<double> v;
  double remaining = 1.0;
  for (std::size_t h = 0; h + 1 < weights.size(); ++h) {
    if (!(weights[h] > 0.0)) throw DomainError("stick_fractions: weights must be positive");
    v.push_back(weights[h] / remaining);
    remaining -= weights[h];
  }
  return v;
}

/// 0/1 design: row j selects the ANOVA effects that add up to stratum j's
/// atom location.
struct DesignMatrix {
  std::size_t G = 0;
  std::size_t q = 0;
  std::vector<double> entries;  // G x q, row-major

  std::span<const double> row(std::size_t j0) const {
    return std::span<const double>(entries).subspan(j0 * q, q);
  }

  /// Location for stratum j (1-based) from an atom vector of length q.
  double select(int j, std::span<const double> alpha) const {
    const auto d = row(static_cast<std::size_t>(j - 1));
    double mu = 0.0;
    for (std::size_t c = 0; c < q; ++c) mu += d[c] * alpha[c];
    return mu;
  }
};

inline DesignMatrix design_one_way(int G) {
  if (G < 1) throw Error("design_one_way: G must be at least 1");
  DesignMatrix d{static_cast<std::size_t>(G), static_cast<std::size_t>(G), {}};
  d.entries.assign(d.G * d.q, 0.0);
  for (std::size_t j = 0; j < d.G; ++j) d.entries[j * d.q + j] = 1.0;
  return d;
}

/// Two-factor design: stratum (v, w), numbered (v-1)*U + w, selects the grand
/// effect, level v of factor A and level w of factor B. No sum-to-zero
/// constraints are imposed.
inline DesignMatrix design_two_way(int V, int U) {
  if (V < 1 || U < 1) throw Error("design_two_way: V and U must be at least 1");
  DesignMatrix d{static_cast<std::size_t>(V * U), static_cast<std::size_t>(1 + V + U), {}};
  d.entries.assign(d.G * d.q, 0.0);
  for (int v = 1; v <= V; ++v) {
    for (int w = 1; w <= U; ++w) {
      const std::size_t j0 = static_cast<std::size_t>((v - 1) * U + (w - 1));
      d.entries[j0 * d.q + 0] = 1.0;
      d.entries[j0 * d.q + static_cast<std::size_t>(v)] = 1.0;
      d.entries[j0 * d.q + static_cast<std::size_t>(V + w)] = 1.0;
    }
  }
  return d;
}

inline void check_lognormal_args(double t, double sigma) {
  if (!(t > 0.0)) throw DomainError("log-normal kernel: t must be positive");
  if (!(sigma > 0.0)) throw DomainError("log-normal kernel: sigma must be positive");
}

/// log S(t) for the log-normal with log-scale mean mu and sd sigma.
inline double log_surv_lognormal(double t, double mu, double sigma) {
  check_lognormal_args(t, sigma);
  return log_std_normal_ccdf((std::log(t) - mu) / sigma);
}

inline double log_pdf_lognormal(double t, double mu, double sigma) {
  check_lognormal_args(t, sigma);
  const double lt = std::log(t);
  const double x = (lt - mu) / sigma;
  return -lt - std::log(sigma) - kLogSqrtTwoPi - 0.5 * x * x;
}

namespace detail {

template <typename Kernel>
double mixture_log(double t, int j, const AtomSet& atoms, const DesignMatrix& design, Kernel kernel) {
  if (j < 1 || static_cast<std::size_t>(j) > design.G) throw Error("stratum index out of range");
  if (atoms.q != design.q) throw Error("AtomSet and design disagree on q");
  std::vector<double> terms(atoms.L());
  for (std::size_t h = 0; h < atoms.L(); ++h) {
    const double mu = design.select(j, atoms.location(h));
    terms[h] = std::log(atoms.weights[h]) + kernel(t, mu, atoms.scales[h]);
  }
  return log_sum_exp(terms);
}

}  // namespace detail

/// log S_0kj(t) = log sum_h p_h S_LN(t | alpha_h . d_j, sigma_h).
inline double baseline_log_surv(double t, int j, const AtomSet& atoms, const DesignMatrix& design) {
  return detail::mixture_log(t, j, atoms, design, log_surv_lognormal);
}

inline double baseline_log_pdf(double t, int j, const AtomSet& atoms, const DesignMatrix& design) {
  return detail::mixture_log(t, j, atoms, design, log_pdf_lognormal);
}

/// Pointwise posterior band of a baseline survival curve.
struct SurvivalBand {
  int k = 1;
  int j = 1;
  std::vector<double> t;
  std::vector<double> mean;
  std::vector<double> q025;
  std::vector<double> q975;
};

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> xs, double prob) {
  if (xs.empty()) throw Error("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = prob * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline SurvivalBand baseline_curve(std::span<const double> grid, int j, int k,
                                   std::span<const AtomSet> draws, const DesignMatrix& design) {
  if (draws.empty()) throw Error("baseline_curve: no posterior draws");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!(grid[g] > 0.0) || (g > 0 && grid[g] <= grid[g - 1])) {
      throw Error("baseline_curve: grid must be positive and increasing");
    }
  }
  SurvivalBand band;
  band.k = k;
  band.j = j;
  band.t.assign(grid.begin(), grid.end());
  std::vector<double> values(draws.size());
  for (double t : grid) {
    double sum = 0.0;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      values[d] = std::exp(baseline_log_surv(t, j, draws[d], design));
      sum += values[d];
    }
    band.mean.push_back(sum / static_cast<double>(draws.size()));
    band.q025.push_back(quantile(values, 0.025));
    band.q975.push_back(quantile(values, 0.975));
  }
  return band;
}

inline void write_curves_csv(std::ostream& os, std::span<const SurvivalBand> bands) {
  csv::write_row(os, {"t", "mean", "q025", "q975", "k", "j"});
  for (const auto& b : bands) {
    for (std::size_t g = 0; g < b.t.size(); ++g) {
      csv::write_row(os, {csv::format(b.t[g]), csv::format(b.mean[g]), csv::format(b.q025[g]),
                          csv::format(b.q975[g]), std::to_string(b.k), std::to_string(b.j)});
    }
  }
}

}  // namespace gsfm
