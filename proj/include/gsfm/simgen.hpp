#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gsfm/csv.hpp"
#include "gsfm/data.hpp"
#include "gsfm/ddp.hpp"
#include "gsfm/error.hpp"
#include "gsfm/nuts.hpp"
#include "gsfm/special.hpp"

namespace gsfm {

struct MixtureComponent {
  double weight = 1.0;
  double mu = 0.0;     // log-scale mean
  double sigma = 1.0;  // log-scale sd
};

using MixtureBaseline = std::vector<MixtureComponent>;

inline void check_mixture(const MixtureBaseline& mb) {
  if (mb.empty()) throw Error("mixture baseline: no components");
  double total = 0.0;
  for (const auto& c : mb) {
    if (!(c.weight >= 0.0)) throw DomainError("mixture baseline: negative weight");
    if (!(c.sigma > 0.0)) throw DomainError("mixture baseline: sigma must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("mixture baseline: weights do not sum to one");
}

inline double mixture_log_surv(double t, const MixtureBaseline& mb) {
  std::vector<double> terms;
  terms.reserve(mb.size());
  for (const auto& c : mb) {
    terms.push_back(c.weight > 0.0 ? std::log(c.weight) + log_surv_lognormal(t, c.mu, c.sigma) : kNegInf);
  }
  return log_sum_exp(terms);
}

inline double mixture_surv(double t, const MixtureBaseline& mb) { return std::exp(mixture_log_surv(t, mb)); }

/// t with log S(t) = log_u, log_u < 0. The bracket starts at [1, 1] and is
/// halved / doubled until it straddles the target, then bisected
/// geometrically while wide and arithmetically after. Stops at width 1e-10 in
/// t or a relative error of 1e-12 in S (absolute in log S), so deep tails
/// are still resolved.
inline double mixture_inverse_log_surv(double log_u, const MixtureBaseline& mb) {
  if (!(log_u < 0.0)) throw DomainError("mixture_inverse_surv: target must be in (0,1)");
  constexpr double kLow = 1e-300;
  constexpr double kHigh = 1e300;
  double lo = 1.0, hi = 1.0;
  while (mixture_log_surv(lo, mb) < log_u) {
    lo *= 0.5;
    if (lo < kLow) return kLow;
  }
  while (mixture_log_surv(hi, mb) > log_u) {
    hi *= 2.0;
    if (hi > kHigh) return kHigh;
  }
  if (lo == hi) return lo;
  for (int it = 0; it < 4000; ++it) {
    const double mid = hi > 4.0 * lo ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double ls = mixture_log_surv(mid, mb);
    if (std::abs(ls - log_u) < 1e-12) return mid;
    (ls > log_u ? lo : hi) = mid;
    if (hi - lo < 1e-10 && hi <= 4.0 * lo) break;
  }
  return 0.5 * (lo + hi);
}

inline double mixture_inverse_surv(double u, const MixtureBaseline& mb) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("mixture_inverse_surv: u must be in (0,1)");
  return mixture_inverse_log_surv(std::log(u), mb);
}

/// Gap time with survival S0(t)^eta evaluated at a uniform draw u:
/// S0^{-1}(u^{1/eta}), computed on the log scale.
inline double gap_time_from_uniform(double u, double eta, const MixtureBaseline& baseline) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("gap_time_from_uniform: u must be in (0,1)");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("gap_time_from_uniform: eta must be positive");
  return mixture_inverse_log_surv(std::log(u) / eta, baseline);
}

struct ScenarioConfig {
  int n = 90;
  int K = 2;
  int G = 3;
  std::vector<double> beta{1.0, 1.0};
  double frailty_sd = 1.0;
  double censor_lo = 4.0;
  double censor_hi = 6.0;
  std::vector<std::vector<MixtureBaseline>> baselines;  // [k][j]
  int replications = 30;
  std::uint64_t seed = 1;
};

/// Two recurrences, three strata, x1 ~ Bin(1, 0.5), x2 ~ N(0, 1).
inline ScenarioConfig scenario_paper43() {
  auto two = [](double a, double b) { return MixtureBaseline{{0.5, a, 1.0}, {0.5, b, 1.0}}; };
  auto one = [](double a) { return MixtureBaseline{{1.0, a, 1.0}}; };
  ScenarioConfig cfg;
  cfg.baselines = {{two(-0.25, 0.25), two(-0.5, 0.65), two(-0.65, 1.25)}, {one(0.0), one(-0.5), one(0.5)}};
  return cfg;
}

inline ScenarioConfig scenario_by_name(const std::string& name) {
  if (name == "paper43") return scenario_paper43();
  throw Error("unknown scenario '" + name + "' (available: paper43)");
}

inline void check_scenario(const ScenarioConfig& cfg) {
  if (cfg.n < 1 || cfg.K < 1 || cfg.G < 1) throw Error("scenario: n, K and G must be positive");
  if (cfg.n % cfg.G != 0) throw Error("scenario: n must be divisible by G");
  if (cfg.beta.size() != 2) throw Error("scenario: beta must have two entries (x1, x2)");
  if (!(cfg.frailty_sd >= 0.0)) throw Error("scenario: frailty sd must be non-negative");
  if (!(cfg.censor_lo > 0.0 && cfg.censor_hi > cfg.censor_lo)) throw Error("scenario: bad censoring interval");
  if (cfg.baselines.size() != static_cast<std::size_t>(cfg.K)) throw Error("scenario: need K rows of baselines");
  for (const auto& row : cfg.baselines) {
    if (row.size() != static_cast<std::size_t>(cfg.G)) throw Error("scenario: need G baselines per recurrence");
    for (const auto& mb : row) check_mixture(mb);
  }
}

namespace detail {

template <typename Rng>
double open_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = 0.0;
  while (x <= 0.0 || x >= 1.0) x = u(rng);
  return x;
}

}  // namespace detail

/// Optional overrides used by tests: a fixed log frailty for every subject.
struct GenOverrides {
  bool zero_frailty = false;
};

/// Subjects are assigned to strata in blocks of n/G. Every subject gets one
/// gap record per recurrence, each with its own uniform draw and its own
/// Unif(censor_lo, censor_hi) censoring time.
inline Dataset gen_dataset(const ScenarioConfig& cfg, std::uint64_t seed, const GenOverrides& ov = {}) {
  check_scenario(cfg);
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    0x73696dU};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> censor(cfg.censor_lo, cfg.censor_hi);
  const int per_stratum = cfg.n / cfg.G;
  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(cfg.n * cfg.K));
  for (int i = 0; i < cfg.n; ++i) {
    const int j = i / per_stratum + 1;
    const double x1 = coin(rng) ? 1.0 : 0.0;
    const double x2 = normal(rng);
    const double v = cfg.frailty_sd * normal(rng);
    const double eta = std::exp(cfg.beta[0] * x1 + cfg.beta[1] * x2 + (ov.zero_frailty ? 0.0 : v));
    for (int k = 1; k <= cfg.K; ++k) {
      const double u = detail::open_uniform(rng);
      const double c = censor(rng);
      const double t = gap_time_from_uniform(u, eta, cfg.baselines[static_cast<std::size_t>(k - 1)]
                                                                  [static_cast<std::size_t>(j - 1)]);
      obs.push_back(Observation{i + 1, k, j, std::min(t, c), t <= c ? 1 : 0, {x1, x2}});
    }
  }
  return Dataset(std::move(obs), {"x1", "x2"}, cfg.K, cfg.G);
}

inline double censoring_rate(const Dataset& ds) {
  if (ds.empty()) throw Error("censoring_rate: empty dataset");
  std::size_t censored = 0;
  for (const auto& o : ds.observations()) censored += o.status == 0;
  return static_cast<double>(censored) / static_cast<double>(ds.size());
}

/// What a fitter reports for one replication, in the order of the study's
/// parameter names.
struct ReplicationFit {
  std::vector<double> est;
  std::vector<double> sd;
  double max_rhat = 1.0;
  double wall_time = 0.0;
};

using Fitter = std::function<ReplicationFit(const Dataset&, std::uint64_t seed)>;

struct ParameterMetrics {
  std::string parameter;
  double truth = 0.0;
  double bias = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double esd = 0.0;  // mean posterior sd
  double sde = 0.0;  // sd of the point estimates
  double cp = 0.0;   // fraction of Wald intervals covering the truth
};

struct StudyResult {
  std::vector<ParameterMetrics> metrics;
  std::vector<ReplicationFit> fits;
  std::vector<int> flagged;  // 1-based replications with R-hat >= rhat_threshold
  double mean_censoring = 0.0;
};

inline constexpr double kReplicationRhat = 1.05;

inline std::vector<ParameterMetrics> study_metrics(const std::vector<std::string>& names,
                                                   const std::vector<double>& truth,
                                                   const std::vector<ReplicationFit>& fits) {
  if (fits.empty()) throw Error("study metrics: no replications");
  const double R = static_cast<double>(fits.size());
  std::vector<ParameterMetrics> out;
  for (std::size_t p = 0; p < names.size(); ++p) {
    ParameterMetrics m;
    m.parameter = names[p];
    m.truth = truth[p];
    double mean_est = 0.0;
    for (const auto& f : fits) {
      if (f.est.size() != names.size() || f.sd.size() != names.size()) {
        throw Error("study metrics: fitter returned the wrong number of parameters");
      }
      const double e = f.est[p] - truth[p];
      mean_est += f.est[p];
      m.bias += e;
      m.mse += e * e;
      m.esd += f.sd[p];
      m.cp += std::abs(e) <= 1.96 * f.sd[p] ? 1.0 : 0.0;
    }
    mean_est /= R;
    m.bias /= R;
    m.mse /= R;
    m.rmse = std::sqrt(m.mse);
    m.esd /= R;
    m.cp /= R;
    double ss = 0.0;
    for (const auto& f : fits) ss += (f.est[p] - mean_est) * (f.est[p] - mean_est);
    m.sde = fits.size() > 1 ? std::sqrt(ss / (R - 1.0)) : 0.0;
    out.push_back(m);
  }
  return out;
}

/// Runs R = cfg.replications independent generate-and-fit replications;
/// replication r uses data seed and fit seed derived from (cfg.seed, r).
/// Replications whose fit reports R-hat >= 1.05 are listed in `flagged` but
/// still enter the metrics.
inline StudyResult replicate_study(const ScenarioConfig& cfg, const Fitter& fit, unsigned threads = 0) {
  if (cfg.replications < 1) throw Error("replicate_study: need at least one replication");
  check_scenario(cfg);
  const auto R = static_cast<std::size_t>(cfg.replications);
  std::vector<ReplicationFit> fits(R);
  std::vector<double> cens(R);
  parallel_for(R, threads ? threads : default_threads(), [&](std::size_t r) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(r), 0x726570U};
    std::mt19937_64 rng(seq);
    const std::uint64_t data_seed = rng();
    const std::uint64_t fit_seed = rng();
    const Dataset ds = gen_dataset(cfg, data_seed);
    cens[r] = censoring_rate(ds);
    try {
      fits[r] = fit(ds, fit_seed);
    } catch (const std::exception& e) {
      throw Error("replication " + std::to_string(r + 1) + ": " + e.what());
    }
  });
  StudyResult out;
  std::vector<double> truth{cfg.beta[0], cfg.beta[1], cfg.frailty_sd};
  out.metrics = study_metrics({"beta1", "beta2", "tau"}, truth, fits);
  for (std::size_t r = 0; r < R; ++r) {
    if (!(fits[r].max_rhat < kReplicationRhat)) out.flagged.push_back(static_cast<int>(r + 1));
    out.mean_censoring += cens[r] / static_cast<double>(R);
  }
  out.fits = std::move(fits);
  return out;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<ParameterMetrics>& metrics) {
  csv::write_row(os, {"parameter", "truth", "bias", "mse", "rmse", "esd", "sde", "cp"});
  for (const auto& m : metrics) {
    csv::write_row(os, {m.parameter, csv::format(m.truth), csv::format(m.bias), csv::format(m.mse),
                        csv::format(m.rmse), csv::format(m.esd), csv::format(m.sde), csv::format(m.cp)});
  }
}

/// One row per replication: estimates, sds, max R-hat, flag.
inline void write_replications_csv(std::ostream& os, const StudyResult& study, const std::vector<std::string>& names) {
  std::vector<std::string> header{"replication"};
  for (const auto& n : names) header.push_back(n + "_est");
  for (const auto& n : names) header.push_back(n + "_sd");
  header.insert(header.end(), {"max_rhat", "flagged"});
  csv::write_row(os, header);
  for (std::size_t r = 0; r < study.fits.size(); ++r) {
    const auto& f = study.fits[r];
    std::vector<std::string> row{std::to_string(r + 1)};
    for (double e : f.est) row.push_back(csv::format(e));
    for (double s : f.sd) row.push_back(csv::format(s));
    row.push_back(csv::format(f.max_rhat));
    row.push_back(f.max_rhat < kReplicationRhat ? "0" : "1");
    csv::write_row(os, row);
  }
}

}  // namespace gsfm
