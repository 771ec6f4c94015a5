#pragma once

// Convergence and efficiency diagnostics for MCMC output.
//
// R-hat and ESS follow the rank-normalized split-chain recipe: each chain is
// split in half (the middle draw is dropped for odd lengths), the split draws
// are replaced by normal scores of their pooled ranks, and
//   * R-hat is the larger of the bulk value and the value on the folded draws
//     |x - median|;
//   * ESS uses Geyer's initial positive sequence on the averaged
//     autocorrelations, made monotone, with the tail term kept when positive,
//     and capped at N log10(N).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gsfm/csv.hpp"
#include "gsfm/error.hpp"
#include "gsfm/special.hpp"

namespace gsfm {

using Chains = std::vector<std::vector<double>>;

/// ESS below this is flagged as inadequate.
inline constexpr double kAdequateEss = 400.0;

namespace detail {

inline void check_chains(const Chains& chains, std::size_t min_draws, const char* what) {
  if (chains.empty()) throw Error(std::string(what) + ": no chains");
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw Error(std::string(what) + ": chains differ in length");
  }
  if (chains.front().size() < min_draws) {
    throw Error(std::string(what) + ": need at least " + std::to_string(min_draws) + " draws per chain");
  }
}

inline Chains split_chains(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

inline bool all_equal(const Chains& chains) {
  const double first = chains.front().front();
  for (const auto& c : chains) {
    for (double x : c) {
      if (x != first) return false;
    }
  }
  return true;
}

/// Normal scores Phi^{-1}((r - 3/8) / (S + 1/4)) of pooled average ranks.
inline Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c][i], c * chains[c].size() + i);
  }
  std::sort(all.begin(), all.end());
  const double S = static_cast<double>(all.size());
  std::vector<double> score(all.size());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    const double z = inv_std_normal_cdf((avg_rank - 0.375) / (S + 0.25));
    for (std::size_t t = i; t < j; ++t) score[all[t].second] = z;
    i = j;
  }
  Chains out = chains;
  for (std::size_t c = 0; c < out.size(); ++c) {
    for (std::size_t i = 0; i < out[c].size(); ++i) out[c][i] = score[c * out[c].size() + i];
  }
  return out;
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

/// Biased (divide-by-n) autocovariance of xs at lag t.
inline double autocovariance(const std::vector<double>& xs, double m, std::size_t t) {
  double s = 0.0;
  for (std::size_t i = 0; i + t < xs.size(); ++i) s += (xs[i] - m) * (xs[i + t] - m);
  return s / static_cast<double>(xs.size());
}

}  // namespace detail

namespace detail {

/// Gelman-Rubin potential scale reduction of chains that are already split.
inline double rhat_of_split(const Chains& split) {
  const double n = static_cast<double>(split.front().size());
  std::vector<double> means, vars;
  for (const auto& c : split) {
    means.push_back(detail::mean(c));
    vars.push_back(detail::sample_variance(c));
  }
  const double W = detail::mean(vars);
  const double B = n * detail::sample_variance(means);
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

}  // namespace detail

/// Split R-hat without rank normalization.
inline double split_rhat_classic(const Chains& chains) {
  detail::check_chains(chains, 4, "split_rhat");
  return detail::rhat_of_split(detail::split_chains(chains));
}

/// Rank-normalized split R-hat: max of bulk and folded values. NaN when every
/// draw is identical.
inline double split_rhat(const Chains& chains) {
  detail::check_chains(chains, 4, "split_rhat");
  if (detail::all_equal(chains)) return std::numeric_limits<double>::quiet_NaN();
  const double bulk = detail::rhat_of_split(detail::rank_normalize(detail::split_chains(chains)));
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  const double med = detail::median(pooled);
  Chains folded = chains;
  for (auto& c : folded) {
    for (double& x : c) x = std::abs(x - med);
  }
  const double tail = detail::rhat_of_split(detail::rank_normalize(detail::split_chains(folded)));
  return std::max(bulk, tail);
}

/// ESS of the given chains as-is (no splitting, no rank normalization).
inline double ess_classic(const Chains& chains) {
  detail::check_chains(chains, 4, "ess");
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m), acov0(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = detail::mean(chains[c]);
    acov0[c] = detail::autocovariance(chains[c], means[c], 0);
  }
  const double nd = static_cast<double>(n);
  double mean_var = 0.0;
  for (double a : acov0) mean_var += a * nd / (nd - 1.0);
  mean_var /= static_cast<double>(m);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += detail::sample_variance(means);
  if (!(var_plus > 0.0)) return 0.0;

  auto rho = [&](std::size_t t) {
    double a = 0.0;
    for (std::size_t c = 0; c < m; ++c) a += detail::autocovariance(chains[c], means[c], t);
    return 1.0 - (mean_var - a / static_cast<double>(m)) / var_plus;
  };

  std::vector<double> rho_hat(n, 0.0);
  std::size_t t = 0;
  double rho_even = 1.0;
  double rho_odd = rho(1);
  rho_hat[0] = rho_even;
  rho_hat[1] = rho_odd;
  while (t + 5 < n && std::isfinite(rho_even + rho_odd) && rho_even + rho_odd > 0.0) {
    t += 2;
    rho_even = rho(t);
    rho_odd = rho(t + 1);
    if (rho_even + rho_odd >= 0.0) {
      rho_hat[t] = rho_even;
      rho_hat[t + 1] = rho_odd;
    }
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho_hat[max_t] = rho_even;

  // Initial monotone sequence.
  for (std::size_t u = 2; u + 2 <= max_t; u += 2) {
    if (rho_hat[u] + rho_hat[u + 1] > rho_hat[u - 2] + rho_hat[u - 1]) {
      rho_hat[u] = 0.5 * (rho_hat[u - 2] + rho_hat[u - 1]);
      rho_hat[u + 1] = rho_hat[u];
    }
  }

  const double total = static_cast<double>(m * n);
  double tau = -1.0 + rho_hat[max_t];
  for (std::size_t u = 0; u < max_t; ++u) tau += 2.0 * rho_hat[u];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

/// Bulk ESS: rank-normalized, split chains. Zero for constant draws (see
/// is_constant).
inline double ess(const Chains& chains) {
  detail::check_chains(chains, 8, "ess");
  if (detail::all_equal(chains)) return 0.0;
  return ess_classic(detail::rank_normalize(detail::split_chains(chains)));
}

inline bool is_constant(const Chains& chains) {
  detail::check_chains(chains, 1, "is_constant");
  return detail::all_equal(chains);
}

/// Seconds per effective sample; infinite when ess is zero.
inline double mcmc_pace(double wall_time_seconds, double ess_value) {
  if (!(wall_time_seconds > 0.0)) throw Error("mcmc_pace: wall time must be positive");
  if (!(ess_value > 0.0)) return std::numeric_limits<double>::infinity();
  return wall_time_seconds / ess_value;
}

enum class PointEstimate { mean, median };

/// Draws of one scalar parameter, one sequence per chain.
struct ParameterDraws {
  std::string name;
  Chains chains;
  PointEstimate point = PointEstimate::mean;
};

struct SummaryRow {
  std::string parameter;
  double est = 0.0;
  double sd = 0.0;
  double ess = 0.0;
  double rhat = 0.0;
  double pace = 0.0;
  double ci_low = 0.0;   // est - 1.96 sd
  double ci_high = 0.0;  // est + 1.96 sd
  bool constant = false;

  bool ess_adequate() const { return ess >= kAdequateEss; }
};

/// Per-parameter posterior summary. The Wald interval is centred on the point
/// estimate (mean or median as requested).
inline std::vector<SummaryRow> summarize(const std::vector<ParameterDraws>& params, double wall_time_seconds) {
  std::vector<SummaryRow> rows;
  for (const auto& prm : params) {
    detail::check_chains(prm.chains, 8, "summarize");
    if (prm.chains.size() != params.front().chains.size() ||
        prm.chains.front().size() != params.front().chains.front().size()) {
      throw Error("summarize: parameter '" + prm.name + "' has a different chain layout");
    }
    std::vector<double> pooled;
    for (const auto& c : prm.chains) pooled.insert(pooled.end(), c.begin(), c.end());
    SummaryRow r;
    r.parameter = prm.name;
    r.est = prm.point == PointEstimate::median ? detail::median(pooled) : detail::mean(pooled);
    r.sd = std::sqrt(detail::sample_variance(pooled));
    r.constant = detail::all_equal(prm.chains);
    r.ess = ess(prm.chains);
    r.rhat = split_rhat(prm.chains);
    r.pace = mcmc_pace(wall_time_seconds, r.ess);
    r.ci_low = r.est - 1.96 * r.sd;
    r.ci_high = r.est + 1.96 * r.sd;
    rows.push_back(r);
  }
  return rows;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  csv::write_row(os, {"parameter", "est", "sd", "ess", "rhat", "pace", "ci_low", "ci_high"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.parameter, csv::format(r.est), csv::format(r.sd), csv::format(r.ess), csv::format(r.rhat),
                        csv::format(r.pace), csv::format(r.ci_low), csv::format(r.ci_high)});
  }
}

inline std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "parameter" << std::right << std::setw(11) << "est" << std::setw(11) << "sd"
     << std::setw(9) << "ess" << std::setw(8) << "rhat" << std::setw(10) << "pace" << std::setw(11) << "ci_low"
     << std::setw(11) << "ci_high" << '\n';
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.parameter << std::right << std::setprecision(3) << std::setw(11) << r.est
       << std::setw(11) << r.sd << std::setprecision(0) << std::setw(9) << r.ess << std::setprecision(3)
       << std::setw(8) << r.rhat << std::setw(10) << r.pace << std::setw(11) << r.ci_low << std::setw(11)
       << r.ci_high;
    if (!r.ess_adequate()) os << "  (ESS < " << static_cast<int>(kAdequateEss) << ")";
    os << '\n';
  }
  return os.str();
}

}  // namespace gsfm
