#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gsfm/data.hpp"
#include "gsfm/ddp.hpp"
#include "gsfm/diagnostics.hpp"
#include "gsfm/error.hpp"
#include "gsfm/model.hpp"
#include "gsfm/nuts.hpp"
#include "gsfm/simgen.hpp"

namespace gsfm {

/// 0.05, 0.10, ..., 5.00 years.
inline std::vector<double> default_curve_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 100; ++i) g.push_back(0.05 * i);
  return g;
}

struct FitOptions {
  Hyperparams hyper;
  NutsConfig nuts;
  bool pooled = false;                       // classical shared frailty model
  std::vector<double> grid = default_curve_grid();  // empty: no curves
  std::size_t max_curve_draws = 1000;        // retained draws are thinned evenly to at most this
  unsigned threads = 0;
};

struct FitResult {
  Dataset data;  // the data actually fitted (pooled form in pooled mode)
  DesignMatrix design;
  ParameterLayout layout;
  bool pooled = false;
  int original_G = 1;
  std::vector<std::string> names;  // constrained names
  std::vector<ChainOutput> chains;
  std::vector<SummaryRow> summary;  // beta (mean) and tau (median)
  std::vector<SurvivalBand> curves;
  double wall_time = 0.0;  // summed over chains
};

/// Atoms of recurrence k0 read straight from an unconstrained vector.
inline AtomSet atoms_from_unconstrained(std::span<const double> x, const ParameterLayout& layout, std::size_t k0) {
  const std::size_t L = layout.L();
  AtomSet a;
  a.q = layout.q();
  for (double lw : Posterior::log_weights(x.subspan(layout.sticks(k0), L - 1))) a.weights.push_back(std::exp(lw));
  const auto loc = x.subspan(layout.locations(k0), L * layout.q());
  a.locations.assign(loc.begin(), loc.end());
  for (std::size_t h = 0; h < L; ++h) a.scales.push_back(std::exp(x[layout.log_scales(k0) + h]));
  return a;
}

namespace detail {

inline std::vector<std::span<const double>> thinned_rows(const std::vector<ChainOutput>& chains, std::size_t max_rows) {
  std::vector<std::span<const double>> rows;
  for (const auto& ch : chains) {
    for (std::size_t i = 0; i < ch.iterations(); ++i) rows.push_back(ch.row(i));
  }
  if (max_rows == 0 || rows.size() <= max_rows) return rows;
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < max_rows; ++i) out.push_back(rows[i * rows.size() / max_rows]);
  return out;
}

template <typename LogSurv>
SurvivalBand band_from(std::span<const double> grid, int k, int j, std::size_t n_draws, LogSurv log_surv) {
  SurvivalBand band;
  band.k = k;
  band.j = j;
  band.t.assign(grid.begin(), grid.end());
  std::vector<double> values(n_draws);
  for (double t : grid) {
    double sum = 0.0;
    for (std::size_t d = 0; d < n_draws; ++d) {
      values[d] = std::exp(log_surv(d, t));
      sum += values[d];
    }
    band.mean.push_back(sum / static_cast<double>(n_draws));
    band.q025.push_back(quantile(values, 0.025));
    band.q975.push_back(quantile(values, 0.975));
  }
  return band;
}

}  // namespace detail

/// Posterior bands of S0kj on the grid. In pooled mode there is one baseline
/// S0 and stratum j's curve is S0(t)^exp(gamma_j), gamma_j being the stratum
/// indicator coefficient (gamma_1 = 0).
inline std::vector<SurvivalBand> survival_curves(const FitResult& fit, std::span<const double> grid,
                                                 std::size_t max_draws) {
  std::vector<SurvivalBand> out;
  if (grid.empty()) return out;
  const auto rows = detail::thinned_rows(fit.chains, max_draws);
  if (rows.empty()) throw Error("survival_curves: no draws");
  const ParameterLayout& lay = fit.layout;
  for (std::size_t k0 = 0; k0 < lay.K(); ++k0) {
    std::vector<AtomSet> atoms;
    for (const auto& r : rows) atoms.push_back(atoms_from_unconstrained(r, lay, k0));
    if (!fit.pooled) {
      for (std::size_t j = 1; j <= fit.design.G; ++j) {
        out.push_back(baseline_curve(grid, static_cast<int>(j), static_cast<int>(k0 + 1), atoms, fit.design));
      }
      continue;
    }
    const std::size_t first_indicator = lay.p() - static_cast<std::size_t>(fit.original_G - 1);
    for (int j = 1; j <= fit.original_G; ++j) {
      out.push_back(detail::band_from(grid, static_cast<int>(k0 + 1), j, rows.size(), [&](std::size_t d, double t) {
        const double gamma = j == 1 ? 0.0 : rows[d][first_indicator + static_cast<std::size_t>(j - 2)];
        return std::exp(gamma) * baseline_log_surv(t, 1, atoms[d], fit.design);
      }));
    }
  }
  return out;
}

/// True if the posterior mean curves of some pair of strata swap order on
/// the grid, i.e. their difference exceeds tol in both directions.
inline bool curves_cross(std::span<const SurvivalBand> bands, int k, double tol = 1e-3) {
  std::vector<const SurvivalBand*> sel;
  for (const auto& b : bands) {
    if (b.k == k) sel.push_back(&b);
  }
  for (std::size_t a = 0; a < sel.size(); ++a) {
    for (std::size_t b = a + 1; b < sel.size(); ++b) {
      bool above = false, below = false;
      for (std::size_t g = 0; g < sel[a]->t.size(); ++g) {
        const double d = sel[a]->mean[g] - sel[b]->mean[g];
        above |= d > tol;
        below |= d < -tol;
      }
      if (above && below) return true;
    }
  }
  return false;
}

/// Summary rows for the regression coefficients (posterior mean) and the
/// frailty sd tau (posterior median), on the constrained scale.
inline std::vector<SummaryRow> summarize_fit(const FitResult& fit) {
  std::vector<ParameterDraws> params;
  auto collect = [&](std::size_t idx, PointEstimate pe) {
    ParameterDraws d{fit.names[idx], {}, pe};
    for (const auto& ch : fit.chains) d.chains.push_back(ch.constrained_column(idx));
    params.push_back(std::move(d));
  };
  for (std::size_t c = 0; c < fit.layout.p(); ++c) collect(fit.layout.beta() + c, PointEstimate::mean);
  collect(fit.layout.constrained_tau(), PointEstimate::median);
  return summarize(params, fit.wall_time);
}

inline FitResult fit_gsfm(const Dataset& ds, const FitOptions& opts) {
  FitResult fit;
  fit.pooled = opts.pooled;
  fit.original_G = ds.G();
  if (opts.pooled) {
    PooledData pd = pooled_mode(ds);
    fit.data = std::move(pd.data);
    fit.design = std::move(pd.design);
    fit.original_G = pd.original_G;
  } else {
    fit.data = ds;
    fit.design = design_one_way(ds.G());
  }
  const Posterior post(fit.data, opts.hyper, fit.design);
  fit.layout = post.layout();
  fit.names = fit.layout.constrained_names();
  fit.chains = multi_chain(post, post.dim(), opts.nuts, {},
                           [&post](std::span<const double> x) { return post.constrain(x); }, opts.threads);
  for (const auto& ch : fit.chains) fit.wall_time += ch.wall_time;
  fit.summary = summarize_fit(fit);
  fit.curves = survival_curves(fit, opts.grid, opts.max_curve_draws);
  return fit;
}

/// Fitter for replicate_study: beta1, beta2, tau estimates and sds from a
/// default (non-pooled) fit with chains run serially.
inline Fitter gsfm_fitter(const Hyperparams& hyper, const NutsConfig& nuts) {
  return [hyper, nuts](const Dataset& ds, std::uint64_t seed) {
    FitOptions opts;
    opts.hyper = hyper;
    opts.nuts = nuts;
    opts.nuts.seed = seed;
    opts.grid.clear();
    opts.threads = 1;
    const FitResult fit = fit_gsfm(ds, opts);
    ReplicationFit out;
    out.max_rhat = 0.0;
    for (const auto& row : fit.summary) {
      out.est.push_back(row.est);
      out.sd.push_back(row.sd);
      out.max_rhat = std::max(out.max_rhat, std::isnan(row.rhat) ? 1.0 : row.rhat);
    }
    out.wall_time = fit.wall_time;
    return out;
  };
}

}  // namespace gsfm
