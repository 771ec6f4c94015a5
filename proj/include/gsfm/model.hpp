#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "gsfm/data.hpp"
#include "gsfm/ddp.hpp"
#include "gsfm/error.hpp"
#include "gsfm/special.hpp"

namespace gsfm {

struct Hyperparams {
  int L = 12;                          // truncation level
  double M = 1.0;                      // DP mass, shared by every recurrence
  double beta_sd = std::sqrt(1000.0);  // N(0, beta_sd^2) on each coefficient
  double atom_sd = 1.0;                // N(0, atom_sd^2) on each atom coordinate
  double scale_prior_scale = 5.0;      // half-Cauchy(0, s) on tau and every sigma
};

inline void check_hyperparams(const Hyperparams& h) {
  if (h.L < 2) throw Error("hyperparameters: truncation level L must be at least 2");
  if (!(h.M > 0.0)) throw Error("hyperparameters: mass M must be positive");
  if (!(h.beta_sd > 0.0) || !(h.atom_sd > 0.0) || !(h.scale_prior_scale > 0.0)) {
    throw Error("hyperparameters: prior scales must be positive");
  }
}

/// Constrained-space parameters of one recurrence's random measure.
struct RecurrenceParams {
  std::vector<double> stick_fractions;  // L-1 values in (0,1)
  std::vector<double> locations;        // L x q, row-major
  std::vector<double> scales;           // L positive kernel sds
};

struct Parameters {
  std::vector<double> beta;
  std::vector<double> log_frailty;  // v_i = log w_i
  double tau = 1.0;
  std::vector<RecurrenceParams> recurrences;
};

/// Offsets of the flat unconstrained vector
///   [beta | v | log tau | per k: logit sticks | atoms (row-major) | log sigma].
class ParameterLayout {
 public:
  ParameterLayout() = default;
  ParameterLayout(std::size_t p, std::size_t n, std::size_t K, std::size_t L, std::size_t q)
      : p_(p), n_(n), K_(K), L_(L), q_(q) {}

  std::size_t p() const noexcept { return p_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t K() const noexcept { return K_; }
  std::size_t L() const noexcept { return L_; }
  std::size_t q() const noexcept { return q_; }

  std::size_t per_recurrence() const noexcept { return (L_ - 1) + L_ * q_ + L_; }
  std::size_t size() const noexcept { return p_ + n_ + 1 + K_ * per_recurrence(); }

  std::size_t beta() const noexcept { return 0; }
  std::size_t frailty() const noexcept { return p_; }
  std::size_t log_tau() const noexcept { return p_ + n_; }
  std::size_t sticks(std::size_t k0) const noexcept { return p_ + n_ + 1 + k0 * per_recurrence(); }
  std::size_t locations(std::size_t k0) const noexcept { return sticks(k0) + L_ - 1; }
  std::size_t log_scales(std::size_t k0) const noexcept { return locations(k0) + L_ * q_; }

  std::vector<std::string> unconstrained_names() const {
    std::vector<std::string> names;
    append_common(names, "log_tau");
    for (std::size_t k = 1; k <= K_; ++k) {
      const std::string pk = std::to_string(k) + ".";
      for (std::size_t h = 1; h < L_; ++h) names.push_back("logit_stick." + pk + std::to_string(h));
      append_locations(names, pk);
      for (std::size_t h = 1; h <= L_; ++h) names.push_back("log_sigma." + pk + std::to_string(h));
    }
    return names;
  }

  /// Names of the constrained view: weights replace sticks, tau and sigma
  /// replace their logs. One longer than size() per recurrence.
  std::vector<std::string> constrained_names() const {
    std::vector<std::string> names;
    append_common(names, "tau");
    for (std::size_t k = 1; k <= K_; ++k) {
      const std::string pk = std::to_string(k) + ".";
      for (std::size_t h = 1; h <= L_; ++h) names.push_back("p." + pk + std::to_string(h));
      append_locations(names, pk);
      for (std::size_t h = 1; h <= L_; ++h) names.push_back("sigma." + pk + std::to_string(h));
    }
    return names;
  }

  std::size_t constrained_size() const noexcept { return size() + K_; }
  std::size_t constrained_tau() const noexcept { return p_ + n_; }

  bool operator==(const ParameterLayout&) const = default;

 private:
  void append_common(std::vector<std::string>& names, const char* tau_name) const {
    for (std::size_t c = 1; c <= p_; ++c) names.push_back("beta." + std::to_string(c));
    for (std::size_t i = 1; i <= n_; ++i) names.push_back("v." + std::to_string(i));
    names.emplace_back(tau_name);
  }
  void append_locations(std::vector<std::string>& names, const std::string& pk) const {
    for (std::size_t h = 1; h <= L_; ++h) {
      for (std::size_t c = 1; c <= q_; ++c) {
        names.push_back("alpha." + pk + std::to_string(h) + "." + std::to_string(c));
      }
    }
  }

  std::size_t p_ = 0, n_ = 0, K_ = 0, L_ = 0, q_ = 0;
};

inline void check_parameters(const Parameters& params, const ParameterLayout& layout) {
  const std::size_t L = layout.L();
  if (params.beta.size() != layout.p() || params.log_frailty.size() != layout.n() ||
      params.recurrences.size() != layout.K()) {
    throw Error("parameters do not match layout");
  }
  for (const auto& r : params.recurrences) {
    if (r.stick_fractions.size() != L - 1 || r.locations.size() != L * layout.q() || r.scales.size() != L) {
      throw Error("recurrence parameters do not match layout");
    }
  }
}

inline std::vector<double> pack(const Parameters& params, const ParameterLayout& layout) {
  check_parameters(params, layout);
  std::vector<double> x;
  x.reserve(layout.size());
  x.insert(x.end(), params.beta.begin(), params.beta.end());
  x.insert(x.end(), params.log_frailty.begin(), params.log_frailty.end());
  x.push_back(std::log(params.tau));
  for (const auto& r : params.recurrences) {
    for (double v : r.stick_fractions) x.push_back(logit(v));
    x.insert(x.end(), r.locations.begin(), r.locations.end());
    for (double s : r.scales) x.push_back(std::log(s));
  }
  return x;
}

inline Parameters unpack(std::span<const double> x, const ParameterLayout& layout) {
  if (x.size() != layout.size()) {
    throw Error("unpack: expected " + std::to_string(layout.size()) + " values, got " + std::to_string(x.size()));
  }
  const std::size_t L = layout.L();
  Parameters out;
  out.beta.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(layout.p()));
  out.log_frailty.assign(x.begin() + static_cast<std::ptrdiff_t>(layout.frailty()),
                         x.begin() + static_cast<std::ptrdiff_t>(layout.log_tau()));
  out.tau = std::exp(x[layout.log_tau()]);
  for (std::size_t k = 0; k < layout.K(); ++k) {
    RecurrenceParams r;
    for (std::size_t h = 0; h + 1 < L; ++h) r.stick_fractions.push_back(logistic(x[layout.sticks(k) + h]));
    const auto loc = x.subspan(layout.locations(k), L * layout.q());
    r.locations.assign(loc.begin(), loc.end());
    for (std::size_t h = 0; h < L; ++h) r.scales.push_back(std::exp(x[layout.log_scales(k) + h]));
    out.recurrences.push_back(std::move(r));
  }
  return out;
}

inline AtomSet atoms_of(const RecurrenceParams& r, std::size_t q) {
  return AtomSet{stick_break(r.stick_fractions), r.locations, r.scales, q};
}

namespace detail {

inline double normal_lpdf(double x, double sd) {
  const double z = x / sd;
  return -kLogSqrtTwoPi - std::log(sd) - 0.5 * z * z;
}

inline double half_cauchy_lpdf(double x, double scale) {
  const double z = x / scale;
  return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(z * z);
}

}  // namespace detail

/// Log prior density of the unconstrained vector at these parameters, i.e.
/// the constrained prior plus the log-Jacobians of the logit and log maps.
inline double log_prior(const Parameters& params, const Hyperparams& hyper) {
  double lp = 0.0;
  for (double b : params.beta) lp += detail::normal_lpdf(b, hyper.beta_sd);
  for (double v : params.log_frailty) lp += detail::normal_lpdf(v, params.tau);
  lp += detail::half_cauchy_lpdf(params.tau, hyper.scale_prior_scale) + std::log(params.tau);
  for (const auto& r : params.recurrences) {
    for (double v : r.stick_fractions) {
      // Beta(1, M) density, then the logistic Jacobian v (1 - v).
      lp += std::log(hyper.M) + (hyper.M - 1.0) * std::log1p(-v);
      lp += std::log(v) + std::log1p(-v);
    }
    for (double a : r.locations) lp += detail::normal_lpdf(a, hyper.atom_sd);
    for (double s : r.scales) lp += detail::half_cauchy_lpdf(s, hyper.scale_prior_scale) + std::log(s);
  }
  return lp;
}

/// Contribution of a single record given its linear predictor and the
/// baseline log-survival and log-density at its gap time.
inline double observation_log_lik(int status, double eta, double log_s0, double log_f0) {
  const double e = std::exp(eta);
  if (status == 1) return eta + log_f0 + (e - 1.0) * log_s0;
  return e * log_s0;
}

/// Log-likelihood of the dataset. Every recurrence shares one design matrix.
inline double log_likelihood(const Dataset& ds, const Parameters& params, const DesignMatrix& design) {
  if (params.beta.size() != ds.p() || params.log_frailty.size() != ds.n() ||
      params.recurrences.size() < static_cast<std::size_t>(ds.K())) {
    throw Error("log_likelihood: parameters do not match the dataset");
  }
  std::vector<AtomSet> atoms;
  for (const auto& r : params.recurrences) atoms.push_back(atoms_of(r, design.q));
  double ll = 0.0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto& o = ds[r];
    double eta = params.log_frailty[ds.subject_index(r)];
    for (std::size_t c = 0; c < ds.p(); ++c) eta += params.beta[c] * o.covariates[c];
    const auto& a = atoms[static_cast<std::size_t>(o.recurrence - 1)];
    const double ls = baseline_log_surv(o.time, o.stratum, a, design);
    const double lf = o.status == 1 ? baseline_log_pdf(o.time, o.stratum, a, design) : 0.0;
    ll += observation_log_lik(o.status, eta, ls, lf);
  }
  return ll;
}

/// Value and gradient of the unconstrained log posterior.
struct Evaluation {
  double value = 0.0;
  std::vector<double> gradient;
  bool divergent = false;  // value was not finite
};

/// Unconstrained log posterior of the frailty model with an ANOVA DDP prior
/// on the baseline survival functions. Holds a compact copy of the data, so
/// it is independent of the Dataset's lifetime and safe for concurrent calls.
class Posterior {
 public:
  Posterior(const Dataset& ds, const Hyperparams& hyper, DesignMatrix design)
      : hyper_(hyper), design_(std::move(design)) {
    check_hyperparams(hyper_);
    if (ds.empty()) throw Error("Posterior: empty dataset");
    if (static_cast<std::size_t>(ds.G()) != design_.G) throw Error("Posterior: design has wrong number of strata");
    layout_ = ParameterLayout(ds.p(), ds.n(), static_cast<std::size_t>(ds.K()), static_cast<std::size_t>(hyper_.L),
                              design_.q);
    for (std::size_t r = 0; r < ds.size(); ++r) {
      const auto& o = ds[r];
      if (!(o.time > 0.0)) throw DomainError("Posterior: gap times must be positive");
      if (o.covariates.size() != ds.p()) throw Error("Posterior: covariate count mismatch");
      records_.push_back(Record{ds.subject_index(r), static_cast<std::size_t>(o.recurrence - 1),
                                static_cast<std::size_t>(o.stratum - 1), std::log(o.time), o.status == 1});
      covariates_.insert(covariates_.end(), o.covariates.begin(), o.covariates.end());
    }
    // Records sharing (k, j, time) share every baseline term.
    std::vector<std::size_t> order(records_.size());
    for (std::size_t r = 0; r < order.size(); ++r) order[r] = r;
    auto key = [&](std::size_t r) { return std::tie(records_[r].k0, records_[r].j0, records_[r].log_time); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t u, std::size_t v) { return key(u) < key(v); });
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i == 0 || key(order[i]) != key(order[i - 1])) groups_.push_back(Group{i, i});
      groups_.back().end = i + 1;
    }
    grouped_ = std::move(order);
  }

  const ParameterLayout& layout() const noexcept { return layout_; }
  const Hyperparams& hyper() const noexcept { return hyper_; }
  const DesignMatrix& design() const noexcept { return design_; }
  std::size_t dim() const noexcept { return layout_.size(); }

  /// Log density at x; writes the gradient into grad unless grad is empty.
  double operator()(std::span<const double> x, std::span<double> grad) const;

  double log_density(std::span<const double> x) const { return (*this)(x, {}); }

  Evaluation evaluate(std::span<const double> x) const {
    Evaluation ev;
    ev.gradient.assign(dim(), 0.0);
    ev.value = (*this)(x, ev.gradient);
    ev.divergent = !std::isfinite(ev.value);
    return ev;
  }

  /// Constrained view of x, ordered as layout().constrained_names().
  std::vector<double> constrain(std::span<const double> x) const {
    const Parameters prm = unpack(x, layout_);
    std::vector<double> out(prm.beta);
    out.insert(out.end(), prm.log_frailty.begin(), prm.log_frailty.end());
    out.push_back(prm.tau);
    for (std::size_t k = 0; k < prm.recurrences.size(); ++k) {
      const auto& r = prm.recurrences[k];
      for (double lw : log_weights(x.subspan(layout_.sticks(k), layout_.L() - 1))) out.push_back(std::exp(lw));
      out.insert(out.end(), r.locations.begin(), r.locations.end());
      out.insert(out.end(), r.scales.begin(), r.scales.end());
    }
    return out;
  }

  /// Log stick-breaking weights straight from the logit sticks.
  static std::vector<double> log_weights(std::span<const double> logit_sticks) {
    std::vector<double> lw;
    double log_remaining = 0.0;
    for (double z : logit_sticks) {
      lw.push_back(log_remaining - log1p_exp(-z));
      log_remaining -= log1p_exp(z);
    }
    lw.push_back(log_remaining);
    return lw;
  }

 private:
  struct Record {
    std::size_t subject;
    std::size_t k0;
    std::size_t j0;
    double log_time;
    bool event;
  };

  Hyperparams hyper_;
  DesignMatrix design_;
  ParameterLayout layout_;
  struct Group {
    std::size_t begin, end;  // range in grouped_
  };

  std::vector<Record> records_;
  std::vector<std::size_t> grouped_;
  std::vector<Group> groups_;
  std::vector<double> covariates_;  // records x p
};

inline double Posterior::operator()(std::span<const double> x, std::span<double> grad) const {
  if (x.size() != dim()) throw Error("Posterior: wrong parameter vector length");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != dim()) throw Error("Posterior: wrong gradient length");
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  const std::size_t p = layout_.p();
  const std::size_t n = layout_.n();
  const std::size_t K = layout_.K();
  const std::size_t L = layout_.L();
  const std::size_t q = layout_.q();
  const std::size_t G = design_.G;

  // Per-recurrence log weights, scales and stratum-specific kernel locations.
  std::vector<double> log_p(K * L), sigma(K * L), log_sigma(K * L), mu(K * G * L);
  for (std::size_t k = 0; k < K; ++k) {
    const auto lw = log_weights(x.subspan(layout_.sticks(k), L - 1));
    std::copy(lw.begin(), lw.end(), log_p.begin() + static_cast<std::ptrdiff_t>(k * L));
    for (std::size_t h = 0; h < L; ++h) {
      log_sigma[k * L + h] = x[layout_.log_scales(k) + h];
      sigma[k * L + h] = std::exp(log_sigma[k * L + h]);
      const auto alpha = x.subspan(layout_.locations(k) + h * q, q);
      for (std::size_t j = 0; j < G; ++j) mu[(k * G + j) * L + h] = design_.select(static_cast<int>(j + 1), alpha);
    }
  }

  std::vector<double> g_log_p(want_grad ? K * L : 0, 0.0);
  std::vector<double> g_log_sigma(want_grad ? K * L : 0, 0.0);
  std::vector<double> g_mu(want_grad ? K * G * L : 0, 0.0);
  std::vector<double> a(L), b(L), xs(L);

  double ll = 0.0;
  for (const Group& grp : groups_) {
    const Record& rec = records_[grouped_[grp.begin]];
    const double* lp = log_p.data() + rec.k0 * L;
    const double* sg = sigma.data() + rec.k0 * L;
    const double* lsg = log_sigma.data() + rec.k0 * L;
    const double* m = mu.data() + (rec.k0 * G + rec.j0) * L;

    // a_h = log p_h + log S_LN, b_h = log p_h + log f_LN.
    double a_max = kNegInf, b_max = kNegInf;
    for (std::size_t h = 0; h < L; ++h) {
      xs[h] = (rec.log_time - m[h]) / sg[h];
      a[h] = lp[h] + log_std_normal_ccdf(xs[h]);
      b[h] = lp[h] - rec.log_time - lsg[h] - kLogSqrtTwoPi - 0.5 * xs[h] * xs[h];
      a_max = std::max(a_max, a[h]);
      b_max = std::max(b_max, b[h]);
    }
    double sum_a = 0.0, sum_b = 0.0;
    for (std::size_t h = 0; h < L; ++h) {
      a[h] = std::exp(a[h] - a_max);
      sum_a += a[h];
      b[h] = std::exp(b[h] - b_max);
      sum_b += b[h];
    }
    const double ls = a_max + std::log(sum_a);
    const double lf = b_max + std::log(sum_b);

    // Per record: l = delta (eta + lf) + (e^eta - delta) ls.
    double coef_s = 0.0, events = 0.0;
    for (std::size_t i = grp.begin; i < grp.end; ++i) {
      const std::size_t r = grouped_[i];
      const Record& ri = records_[r];
      const double* z = covariates_.data() + r * p;
      double eta = x[layout_.frailty() + ri.subject];
      for (std::size_t c = 0; c < p; ++c) eta += x[c] * z[c];
      const double e = std::exp(eta);
      const double delta = ri.event ? 1.0 : 0.0;
      ll += delta * (eta + lf) + (e - delta) * ls;
      coef_s += e - delta;
      events += delta;
      if (!want_grad) continue;
      const double g_eta = delta + e * ls;
      for (std::size_t c = 0; c < p; ++c) grad[c] += g_eta * z[c];
      grad[layout_.frailty() + ri.subject] += g_eta;
    }
    if (!want_grad) continue;

    double* glp = g_log_p.data() + rec.k0 * L;
    double* glsg = g_log_sigma.data() + rec.k0 * L;
    double* gm = g_mu.data() + (rec.k0 * G + rec.j0) * L;
    // Survival responsibility times kernel hazard, p_h phi_h / (sigma_h S),
    // is the density responsibility scaled by t f / S.
    const double tf_over_s = std::exp(lf + rec.log_time - ls);
    for (std::size_t h = 0; h < L; ++h) {
      const double ws = coef_s * a[h] / sum_a;
      const double wf = b[h] / sum_b;
      const double wh = coef_s * wf * sg[h] * tf_over_s;
      glp[h] += ws;
      gm[h] += wh / sg[h];
      glsg[h] += wh * xs[h];
      if (events > 0.0) {
        glp[h] += events * wf;
        gm[h] += events * wf * xs[h] / sg[h];
        glsg[h] += events * wf * (xs[h] * xs[h] - 1.0);
      }
    }
  }

  // Prior, including the log-Jacobians of the unconstrained maps.
  const double s = hyper_.scale_prior_scale;
  double lprior = 0.0;
  const double beta_var = hyper_.beta_sd * hyper_.beta_sd;
  for (std::size_t c = 0; c < p; ++c) {
    lprior += detail::normal_lpdf(x[c], hyper_.beta_sd);
    if (want_grad) grad[c] -= x[c] / beta_var;
  }
  const double log_tau = x[layout_.log_tau()];
  const double tau = std::exp(log_tau);
  double sum_v2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[layout_.frailty() + i];
    sum_v2 += v * v;
    if (want_grad) grad[layout_.frailty() + i] -= v / (tau * tau);
  }
  lprior += -static_cast<double>(n) * (kLogSqrtTwoPi + log_tau) - 0.5 * sum_v2 / (tau * tau);
  lprior += detail::half_cauchy_lpdf(tau, s) + log_tau;
  if (want_grad) {
    const double r2 = (tau / s) * (tau / s);
    grad[layout_.log_tau()] += -static_cast<double>(n) + sum_v2 / (tau * tau) - 2.0 * r2 / (1.0 + r2) + 1.0;
  }

  const double atom_var = hyper_.atom_sd * hyper_.atom_sd;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t h = 0; h + 1 < L; ++h) {
      const double zeta = x[layout_.sticks(k) + h];
      const double log_v = -log1p_exp(-zeta);
      const double log_1mv = -log1p_exp(zeta);
      lprior += std::log(hyper_.M) + hyper_.M * log_1mv + log_v;
      if (want_grad) {
        const double v = logistic(zeta);
        grad[layout_.sticks(k) + h] += -hyper_.M * v + (1.0 - v);
      }
    }
    for (std::size_t i = 0; i < L * q; ++i) {
      const double alpha = x[layout_.locations(k) + i];
      lprior += detail::normal_lpdf(alpha, hyper_.atom_sd);
      if (want_grad) grad[layout_.locations(k) + i] -= alpha / atom_var;
    }
    for (std::size_t h = 0; h < L; ++h) {
      const double sg = sigma[k * L + h];
      lprior += detail::half_cauchy_lpdf(sg, s) + log_sigma[k * L + h];
      if (want_grad) {
        const double r2 = (sg / s) * (sg / s);
        grad[layout_.log_scales(k) + h] += -2.0 * r2 / (1.0 + r2) + 1.0;
      }
    }
  }

  if (want_grad) {
    for (std::size_t k = 0; k < K; ++k) {
      // Chain rule through the stick-breaking map.
      double tail = 0.0;
      for (std::size_t h = L; h-- > 0;) {
        const double g = g_log_p[k * L + h];
        if (h + 1 < L) {
          const double v = logistic(x[layout_.sticks(k) + h]);
          grad[layout_.sticks(k) + h] += g * (1.0 - v) - v * tail;
        }
        tail += g;
      }
      for (std::size_t h = 0; h < L; ++h) {
        grad[layout_.log_scales(k) + h] += g_log_sigma[k * L + h];
        for (std::size_t j = 0; j < G; ++j) {
          const double gmu = g_mu[(k * G + j) * L + h];
          const auto d = design_.row(j);
          for (std::size_t c = 0; c < q; ++c) {
            if (d[c] != 0.0) grad[layout_.locations(k) + h * q + c] += gmu * d[c];
          }
        }
      }
    }
  }
  return ll + lprior;
}

/// Data and design for the classical shared frailty model used as the
/// model-checking alternative: one baseline for every recurrence and stratum,
/// with G-1 stratum indicators appended to the covariates.
struct PooledData {
  Dataset data;
  DesignMatrix design;
  int original_G = 1;
};

inline PooledData pooled_mode(const Dataset& ds) {
  const int G = ds.G();
  if (G <= 1 && ds.K() <= 1) return PooledData{ds, design_one_way(1), std::max(G, 1)};
  std::vector<Observation> obs;
  obs.reserve(ds.size());
  for (const auto& o : ds.observations()) {
    Observation q = o;
    q.recurrence = 1;
    q.stratum = 1;
    for (int j = 2; j <= G; ++j) q.covariates.push_back(o.stratum == j ? 1.0 : 0.0);
    obs.push_back(std::move(q));
  }
  auto names = ds.covariate_names();
  for (int j = 2; j <= G; ++j) names.push_back("stratum" + std::to_string(j));
  return PooledData{Dataset(std::move(obs), std::move(names), 1, 1), design_one_way(1), G};
}

}  // namespace gsfm
