#pragma once

// Multinomial No-U-Turn sampler with a diagonal Euclidean metric, dual-averaging
// step-size adaptation and windowed variance adaptation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gsfm/csv.hpp"
#include "gsfm/error.hpp"
#include "gsfm/special.hpp"

namespace gsfm {

/// Anything callable as double(x, grad): returns the log density at x and,
/// when grad is non-empty, writes the gradient into it.
template <typename T>
concept LogDensity = requires(const T& t, std::span<const double> x, std::span<double> g) {
  { t(x, g) } -> std::convertible_to<double>;
};

struct NutsConfig {
  int chains = 4;
  int warmup = 2000;
  int draws = 3000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 20211;
  double init_radius = 2.0;     // inits drawn from Uniform(-r, r)
  double max_delta_h = 1000.0;  // divergence threshold on the energy error
};

inline void check_config(const NutsConfig& c) {
  if (c.chains < 1) throw Error("sampler: chains must be at least 1");
  if (c.warmup < 1) throw Error("sampler: warmup must be at least 1");
  if (c.draws < 1) throw Error("sampler: draws must be at least 1");
  if (!(c.target_accept > 0.0 && c.target_accept < 1.0)) throw Error("sampler: target_accept must be in (0,1)");
  if (c.max_tree_depth < 0 || c.max_tree_depth > 15) throw Error("sampler: max_tree_depth must be in [0,15]");
  if (!(c.init_radius > 0.0)) throw Error("sampler: init_radius must be positive");
}

struct IterationStats {
  double step_size = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double accept_stat = 0.0;
  double log_density = 0.0;
  double energy = 0.0;
};

struct ChainOutput {
  std::size_t dim = 0;
  std::vector<double> draws;  // iterations x dim, unconstrained
  std::size_t constrained_dim = 0;
  std::vector<double> constrained;  // iterations x constrained_dim; empty without a transform
  std::vector<IterationStats> stats;
  std::vector<IterationStats> warmup_stats;
  double step_size = 0.0;
  std::vector<double> inv_mass;
  double wall_time = 0.0;  // seconds, warmup included

  std::size_t iterations() const noexcept { return dim ? draws.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(draws).subspan(i * dim, dim); }

  /// Sequence of one unconstrained coordinate across iterations.
  std::vector<double> column(std::size_t d) const {
    std::vector<double> out(iterations());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = draws[i * dim + d];
    return out;
  }
  std::vector<double> constrained_column(std::size_t d) const {
    const std::size_t it = constrained_dim ? constrained.size() / constrained_dim : 0;
    std::vector<double> out(it);
    for (std::size_t i = 0; i < it; ++i) out[i] = constrained[i * constrained_dim + d];
    return out;
  }
  std::size_t divergences() const {
    return static_cast<std::size_t>(std::count_if(stats.begin(), stats.end(), [](const auto& s) { return s.divergent; }));
  }
};

/// Position, momentum and cached gradient.
struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;
  double log_density = 0.0;
};

/// Hamiltonian system with kinetic energy p' M^{-1} p / 2 for a diagonal M.
template <LogDensity Target>
class EuclideanSystem {
 public:
  EuclideanSystem(const Target& target, std::vector<double> inv_mass)
      : target_(target), inv_mass_(std::move(inv_mass)) {}

  const std::vector<double>& inv_mass() const noexcept { return inv_mass_; }
  void set_inv_mass(std::vector<double> m) { inv_mass_ = std::move(m); }

  void update(PhasePoint& z) const {
    z.grad.resize(z.q.size());
    z.log_density = target_(std::span<const double>(z.q), std::span<double>(z.grad));
    if (!std::isfinite(z.log_density)) z.log_density = kNegInf;
  }

  double kinetic(std::span<const double> p) const {
    double k = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_mass_[i];
    return 0.5 * k;
  }

  double energy(const PhasePoint& z) const {
    if (z.log_density == kNegInf) return std::numeric_limits<double>::infinity();
    return -z.log_density + kinetic(z.p);
  }

  std::vector<double> velocity(std::span<const double> p) const {
    std::vector<double> v(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) v[i] = inv_mass_[i] * p[i];
    return v;
  }

  template <typename Rng>
  void sample_momentum(PhasePoint& z, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    z.p.resize(z.q.size());
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = normal(rng) / std::sqrt(inv_mass_[i]);
  }

  void leapfrog(PhasePoint& z, double eps) const {
    for (std::size_t i = 0; i < z.q.size(); ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < z.q.size(); ++i) z.q[i] += eps * inv_mass_[i] * z.p[i];
    update(z);
    if (z.log_density == kNegInf) return;
    for (std::size_t i = 0; i < z.q.size(); ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

 private:
  const Target& target_;
  std::vector<double> inv_mass_;
};

/// Dual averaging of log step size towards a target acceptance statistic.
class StepSizeAdaptation {
 public:
  explicit StepSizeAdaptation(double target) : delta_(target) {}

  void restart(double eps) {
    mu_ = std::log(10.0 * eps);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double t = static_cast<double>(counter_);
    const double w = 1.0 / (t + kT0);
    s_bar_ = (1.0 - w) * s_bar_ + w * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(t) / kGamma;
    const double x_eta = std::pow(t, -kKappa);
    x_bar_ = x_eta * x + (1.0 - x_eta) * x_bar_;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  long counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

/// Warmup schedule: a fast initial buffer, doubling slow windows that feed
/// the variance estimate, and a fast terminal buffer. Short warmups shrink
/// the buffers to 15% / 75% / 10%.
class WarmupSchedule {
 public:
  explicit WarmupSchedule(int warmup, int init_buffer = 75, int term_buffer = 50, int base_window = 25)
      : warmup_(warmup), init_(init_buffer), term_(term_buffer), window_(base_window) {
    if (init_ + term_ + window_ > warmup_) {
      init_ = static_cast<int>(0.15 * warmup_);
      term_ = static_cast<int>(0.1 * warmup_);
      window_ = warmup_ - (init_ + term_);
    }
    next_window_end_ = init_ + window_ - 1;
  }

  bool in_slow_window(int it) const { return it >= init_ && it < warmup_ - term_ && it != warmup_; }
  bool ends_slow_window(int it) const { return it == next_window_end_ && it != warmup_; }

  void advance(int it) {
    if (next_window_end_ == warmup_ - term_ - 1) return;
    window_ *= 2;
    next_window_end_ = it + window_;
    if (next_window_end_ != warmup_ - term_ - 1) {
      const int boundary = next_window_end_ + 2 * window_;
      if (boundary >= warmup_ - term_) next_window_end_ = warmup_ - term_ - 1;
    }
  }

 private:
  int warmup_;
  int init_;
  int term_;
  int window_;
  int next_window_end_;
};

namespace detail {

inline bool no_u_turn(std::span<const double> p_sharp_minus, std::span<const double> p_sharp_plus,
                      std::span<const double> rho) {
  double a = 0.0;
  double b = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    a += p_sharp_plus[i] * rho[i];
    b += p_sharp_minus[i] * rho[i];
  }
  return a > 0.0 && b > 0.0;
}

inline void add_to(std::vector<double>& acc, std::span<const double> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

inline std::vector<double> sum(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  add_to(out, b);
  return out;
}

}  // namespace detail

/// One NUTS transition kernel bound to a target, metric and RNG.
template <LogDensity Target, typename Rng>
class NutsKernel {
 public:
  NutsKernel(const Target& target, std::vector<double> inv_mass, Rng& rng, const NutsConfig& cfg)
      : system_(target, std::move(inv_mass)), rng_(rng), cfg_(cfg) {}

  EuclideanSystem<Target>& system() { return system_; }
  double step_size() const { return eps_; }
  void set_step_size(double eps) { eps_ = eps; }

  IterationStats transition(PhasePoint& z0) {
    const std::size_t dim = z0.q.size();
    system_.sample_momentum(z0, rng_);
    const double H0 = system_.energy(z0);

    PhasePoint z_fwd = z0, z_bck = z0, z_sample = z0, z_propose = z0;
    const auto p_sharp0 = system_.velocity(z0.p);
    std::vector<double> p_fwd_fwd = z0.p, p_fwd_bck = z0.p, p_bck_fwd = z0.p, p_bck_bck = z0.p;
    std::vector<double> p_sharp_fwd_fwd = p_sharp0, p_sharp_fwd_bck = p_sharp0;
    std::vector<double> p_sharp_bck_fwd = p_sharp0, p_sharp_bck_bck = p_sharp0;
    std::vector<double> rho = z0.p;

    double log_sum_weight = 0.0;
    int depth = 0;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    // A zero depth limit still allows the first doubling (one leapfrog step).
    const int max_depth = std::max(1, cfg_.max_tree_depth);

    while (depth < max_depth) {
      std::vector<double> rho_fwd(dim, 0.0), rho_bck(dim, 0.0);
      double log_sum_weight_subtree = kNegInf;
      bool valid = false;
      PhasePoint z;
      if (uniform_(rng_) > 0.5) {
        z = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                           H0, 1.0, log_sum_weight_subtree);
        z_fwd = std::move(z);
      } else {
        z = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                           H0, -1.0, log_sum_weight_subtree);
        z_bck = std::move(z);
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = detail::sum(rho_bck, rho_fwd);
      bool persist = detail::no_u_turn(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && detail::no_u_turn(p_sharp_bck_bck, p_sharp_fwd_bck, detail::sum(rho_bck, p_fwd_bck));
      persist = persist && detail::no_u_turn(p_sharp_bck_fwd, p_sharp_fwd_fwd, detail::sum(rho_fwd, p_bck_fwd));
      if (!persist) break;
    }

    z0 = std::move(z_sample);
    IterationStats st;
    st.step_size = eps_;
    st.tree_depth = depth;
    st.n_leapfrog = n_leapfrog_;
    st.divergent = divergent_;
    st.accept_stat = n_leapfrog_ ? sum_metro_prob_ / n_leapfrog_ : 0.0;
    st.log_density = z0.log_density;
    st.energy = system_.energy(z0);
    return st;
  }

  /// Doubles or halves the step size until a single leapfrog step crosses an
  /// acceptance probability of 0.8.
  void init_step_size(const PhasePoint& z_init) {
    if (!(eps_ > 0.0)) eps_ = 1.0;
    PhasePoint z = z_init;
    system_.sample_momentum(z, rng_);
    double H0 = system_.energy(z);
    system_.leapfrog(z, eps_);
    double delta_h = H0 - system_.energy(z);
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (int guard = 0; guard < 100; ++guard) {
      z = z_init;
      system_.sample_momentum(z, rng_);
      H0 = system_.energy(z);
      system_.leapfrog(z, eps_);
      delta_h = H0 - system_.energy(z);
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw Error("sampler: step size diverged to infinity; posterior may be improper");
      if (eps_ == 0.0) throw Error("sampler: step size underflowed; gradient may be wrong");
    }
  }

 private:
  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho, std::vector<double>& p_beg,
                  std::vector<double>& p_end, double H0, double sign, double& log_sum_weight) {
    if (depth == 0) {
      system_.leapfrog(z, sign * eps_);
      ++n_leapfrog_;
      double h = system_.energy(z);
      if (!std::isfinite(h)) h = std::numeric_limits<double>::infinity();
      if (h - H0 > cfg_.max_delta_h) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0 - h);
      sum_metro_prob_ += H0 - h > 0.0 ? 1.0 : std::exp(H0 - h);
      z_propose = z;
      p_sharp_beg = system_.velocity(z.p);
      p_sharp_end = p_sharp_beg;
      detail::add_to(rho, z.p);
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    const std::size_t dim = z.q.size();
    std::vector<double> rho_init(dim, 0.0), p_init_end, p_sharp_init_end;
    double log_sum_weight_init = kNegInf;
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, H0, sign,
                    log_sum_weight_init)) {
      return false;
    }

    PhasePoint z_propose_final;
    std::vector<double> rho_final(dim, 0.0), p_final_beg, p_sharp_final_beg;
    double log_sum_weight_final = kNegInf;
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end,
                    H0, sign, log_sum_weight_final)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (uniform_(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    const auto rho_subtree = detail::sum(rho_init, rho_final);
    detail::add_to(rho, rho_subtree);
    bool persist = detail::no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && detail::no_u_turn(p_sharp_beg, p_sharp_final_beg, detail::sum(rho_init, p_final_beg));
    persist = persist && detail::no_u_turn(p_sharp_init_end, p_sharp_end, detail::sum(rho_final, p_init_end));
    return persist;
  }

  EuclideanSystem<Target> system_;
  Rng& rng_;
  NutsConfig cfg_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double eps_ = 1.0;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
};

/// Result of warmup: the adapted metric and the chain's state at its end.
struct Adaptation {
  double step_size = 1.0;
  std::vector<double> inv_mass;
  std::vector<double> position;
  std::vector<IterationStats> stats;
};

namespace detail {

class WelfordVariance {
 public:
  explicit WelfordVariance(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}
  void add(std::span<const double> x) {
    ++n_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean_[i];
      mean_[i] += d / static_cast<double>(n_);
      m2_[i] += d * (x[i] - mean_[i]);
    }
  }
  std::size_t count() const { return n_; }
  /// Sample variance shrunk towards 1e-3 (weight 5 / (n + 5)).
  std::vector<double> regularized() const {
    const double n = static_cast<double>(n_);
    std::vector<double> v(m2_.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = (n / (n + 5.0)) * (m2_[i] / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0));
    }
    return v;
  }
  void restart() {
    n_ = 0;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    std::fill(m2_.begin(), m2_.end(), 0.0);
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

template <LogDensity Target>
PhasePoint initial_point(const Target& target, std::span<const double> init) {
  PhasePoint z;
  z.q.assign(init.begin(), init.end());
  z.grad.assign(z.q.size(), 0.0);
  z.log_density = target(std::span<const double>(z.q), std::span<double>(z.grad));
  const bool grad_ok = std::all_of(z.grad.begin(), z.grad.end(), [](double g) { return std::isfinite(g); });
  if (!std::isfinite(z.log_density) || !grad_ok) {
    throw Error("sampler: log density or gradient is not finite at the initial point");
  }
  return z;
}

}  // namespace detail

/// Runs the warmup phase: step size by dual averaging throughout, diagonal
/// inverse metric from the slow windows when warmup >= 100 (identity otherwise).
/// Divergent iterations are left out of the variance estimate.
template <LogDensity Target, typename Rng>
Adaptation adapt_warmup(const Target& target, std::span<const double> init, const NutsConfig& cfg, Rng& rng) {
  check_config(cfg);
  PhasePoint z = detail::initial_point(target, init);
  const std::size_t dim = z.q.size();
  NutsKernel<Target, Rng> kernel(target, std::vector<double>(dim, 1.0), rng, cfg);
  kernel.init_step_size(z);

  StepSizeAdaptation dual(cfg.target_accept);
  dual.restart(kernel.step_size());
  const bool adapt_mass = cfg.warmup >= 100;
  WarmupSchedule schedule(cfg.warmup);
  detail::WelfordVariance variance(dim);

  Adaptation out;
  std::size_t divergent = 0;
  for (int it = 0; it < cfg.warmup; ++it) {
    const auto st = kernel.transition(z);
    out.stats.push_back(st);
    divergent += st.divergent;
    kernel.set_step_size(dual.learn(st.accept_stat));
    if (!adapt_mass) continue;
    if (schedule.in_slow_window(it) && !st.divergent) variance.add(z.q);
    if (schedule.ends_slow_window(it)) {
      schedule.advance(it);
      if (variance.count() >= 3) {
        kernel.system().set_inv_mass(variance.regularized());
        kernel.init_step_size(z);
        dual.restart(kernel.step_size());
      }
      variance.restart();
    }
  }
  if (divergent == static_cast<std::size_t>(cfg.warmup)) {
    throw Error("sampler: every warmup iteration diverged; check the model or reduce target_accept");
  }
  out.step_size = dual.final_step_size();
  out.inv_mass = kernel.system().inv_mass();
  out.position = z.q;
  return out;
}

/// One chain: warmup, then cfg.draws retained iterations at the adapted
/// step size and metric.
template <LogDensity Target, typename Rng>
ChainOutput nuts_run(const Target& target, std::span<const double> init, const NutsConfig& cfg, Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  Adaptation adapt = adapt_warmup(target, init, cfg, rng);
  PhasePoint z = detail::initial_point(target, adapt.position);
  NutsKernel<Target, Rng> kernel(target, adapt.inv_mass, rng, cfg);
  kernel.set_step_size(adapt.step_size);

  ChainOutput out;
  out.dim = z.q.size();
  out.draws.reserve(out.dim * static_cast<std::size_t>(cfg.draws));
  out.warmup_stats = std::move(adapt.stats);
  out.step_size = adapt.step_size;
  out.inv_mass = adapt.inv_mass;
  for (int it = 0; it < cfg.draws; ++it) {
    out.stats.push_back(kernel.transition(z));
    out.draws.insert(out.draws.end(), z.q.begin(), z.q.end());
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Per-chain random stream derived from the run seed.
inline std::mt19937_64 chain_rng(std::uint64_t seed, int chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x6e757473u};
  return std::mt19937_64(seq);
}

/// Draws a Uniform(-r, r) starting point with a finite log density and
/// gradient; gives up after 100 attempts.
template <LogDensity Target, typename Rng>
std::vector<double> random_init(const Target& target, std::size_t dim, double radius, Rng& rng) {
  std::uniform_real_distribution<double> u(-radius, radius);
  std::vector<double> x(dim), g(dim);
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& xi : x) xi = u(rng);
    const double lp = target(std::span<const double>(x), std::span<double>(g));
    if (std::isfinite(lp) && std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); })) return x;
  }
  throw Error("sampler: no finite initial point found in 100 attempts");
}

/// Number of worker threads: GSFM_THREADS if set, else the hardware count.
inline unsigned default_threads() {
  if (const char* env = std::getenv("GSFM_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(0..count-1) on up to `threads` workers. Exceptions are collected
/// per task and rethrown together.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn fn) {
  std::vector<std::string> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::string msg;
  for (std::size_t i = 0; i < count; ++i) {
    if (!errors[i].empty()) msg += (msg.empty() ? "" : "; ") + errors[i];
  }
  if (!msg.empty()) throw Error(msg);
}

using Transform = std::function<std::vector<double>(std::span<const double>)>;

/// Independent chains, one RNG stream each. Chains may run concurrently; the
/// output order and content depend only on (seed, cfg, target, inits).
/// Missing inits are drawn from each chain's own stream.
template <LogDensity Target>
std::vector<ChainOutput> multi_chain(const Target& target, std::size_t dim, const NutsConfig& cfg,
                                     const std::vector<std::vector<double>>& inits = {},
                                     const Transform& constrain = {}, unsigned threads = 0) {
  check_config(cfg);
  if (!inits.empty() && inits.size() != static_cast<std::size_t>(cfg.chains)) {
    throw Error("multi_chain: need one initial point per chain");
  }
  std::vector<ChainOutput> out(static_cast<std::size_t>(cfg.chains));
  parallel_for(out.size(), threads ? threads : default_threads(), [&](std::size_t c) {
    auto rng = chain_rng(cfg.seed, static_cast<int>(c));
    try {
      std::vector<double> init = inits.empty() ? random_init(target, dim, cfg.init_radius, rng) : inits[c];
      out[c] = nuts_run(target, init, cfg, rng);
    } catch (const std::exception& e) {
      throw Error("chain " + std::to_string(c + 1) + ": " + e.what());
    }
    if (constrain) {
      for (std::size_t i = 0; i < out[c].iterations(); ++i) {
        const auto v = constrain(out[c].row(i));
        out[c].constrained_dim = v.size();
        out[c].constrained.insert(out[c].constrained.end(), v.begin(), v.end());
      }
    }
  });
  return out;
}

/// One row per retained iteration: chain, iteration, then named columns.
inline void write_draws_csv(std::ostream& os, const std::vector<ChainOutput>& chains,
                            const std::vector<std::string>& names, bool constrained) {
  std::vector<std::string> header{"chain", "iteration"};
  header.insert(header.end(), names.begin(), names.end());
  csv::write_row(os, header);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& ch = chains[c];
    const std::size_t width = constrained ? ch.constrained_dim : ch.dim;
    const auto& data = constrained ? ch.constrained : ch.draws;
    if (width != names.size()) throw Error("write_draws_csv: names do not match draw width");
    for (std::size_t i = 0; width && i < data.size() / width; ++i) {
      std::vector<std::string> row{std::to_string(c + 1), std::to_string(i + 1)};
      for (std::size_t d = 0; d < width; ++d) row.push_back(csv::format(data[i * width + d]));
      csv::write_row(os, row);
    }
  }
}

inline nlohmann::json sampler_stats_json(const std::vector<ChainOutput>& chains) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& ch : chains) {
    nlohmann::json j;
    j["step_size"] = ch.step_size;
    j["inv_mass"] = ch.inv_mass;
    j["wall_time_seconds"] = ch.wall_time;
    j["divergences"] = ch.divergences();
    std::vector<int> depth, leapfrog, divergent;
    std::vector<double> accept, log_density;
    for (const auto& s : ch.stats) {
      depth.push_back(s.tree_depth);
      leapfrog.push_back(s.n_leapfrog);
      divergent.push_back(s.divergent ? 1 : 0);
      accept.push_back(s.accept_stat);
      log_density.push_back(s.log_density);
    }
    j["tree_depth"] = depth;
    j["n_leapfrog"] = leapfrog;
    j["divergent"] = divergent;
    j["accept_stat"] = accept;
    j["log_density"] = log_density;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace gsfm
