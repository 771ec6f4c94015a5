#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

namespace gsfm {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;  // log(sqrt(2 pi))
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double u) { return std::log(u) - std::log1p(-u); }

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// log of the standard normal density.
inline double log_std_normal_pdf(double x) { return -kLogSqrtTwoPi - 0.5 * x * x; }

namespace detail {

// Mills ratio (1 - Phi(x)) / phi(x) by backward evaluation of the Laplace
// continued fraction. Only used for x >= 10, where 60 terms are far past
// double precision.
inline double mills_ratio_cf(double x) {
  double t = x;
  for (int k = 60; k >= 1; --k) t = x + k / t;
  return 1.0 / t;
}

inline constexpr double kMillsSwitch = 10.0;

}  // namespace detail

/// log(1 - Phi(x)) for the standard normal CDF Phi.
///
/// Relative accuracy is that of erfc/log1p for x < 10 and the continued
/// fraction beyond it; finite for every finite x.
inline double log_std_normal_ccdf(double x) {
  if (x < -1.0) return std::log1p(-0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0));
  if (x < detail::kMillsSwitch) return std::log(0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0));
  return log_std_normal_pdf(x) + std::log(detail::mills_ratio_cf(x));
}

/// log Phi(x).
inline double log_std_normal_cdf(double x) { return log_std_normal_ccdf(-x); }

/// Hazard of the standard normal, phi(x) / (1 - Phi(x)).
inline double std_normal_hazard(double x) {
  if (x >= detail::kMillsSwitch) return 1.0 / detail::mills_ratio_cf(x);
  return std::exp(log_std_normal_pdf(x) - log_std_normal_ccdf(x));
}

/// Standard normal CDF and its complement.
inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }
inline double std_normal_ccdf(double x) { return 0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0); }

/// Standard normal quantile: Wichura's AS 241 rational approximation followed
/// by one Newton step.
inline double inv_std_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  auto poly = [](const double* c, double r) {
    double s = 0.0;
    for (int i = 7; i >= 0; --i) s = s * r + c[i];
    return s;
  };
  static constexpr double a[8] = {3.3871328727963666080e0,  1.3314166789178437745e+2, 1.9715909503065514427e+3,
                                  1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
                                  3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static constexpr double b[8] = {1.0,
                                  4.2313330701600911252e+1,
                                  6.8718700749205790830e+2,
                                  5.3941960214247511077e+3,
                                  2.1213794301586595867e+4,
                                  3.9307895800092710610e+4,
                                  2.8729085735721942674e+4,
                                  5.2264952788528545610e+3};
  static constexpr double c[8] = {1.42343711074968357734e0,  4.63033784615654529590e0,  5.76949722146069140550e0,
                                  3.64784832476320460504e0,  1.27045825245236838258e0,  2.41780725177450611770e-1,
                                  2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[8] = {1.0,
                                  2.05319162663775882187e0,
                                  1.67638483018380384940e0,
                                  6.89767334985100004550e-1,
                                  1.48103976427480074590e-1,
                                  1.51986665636164571966e-2,
                                  5.47593808499534494600e-4,
                                  1.05075007164441684324e-9};
  static constexpr double e[8] = {6.65790464350110377720e0,  5.46378491116411436990e0,  1.78482653991729133580e0,
                                  2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                                  2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[8] = {1.0,
                                  5.99832206555887937690e-1,
                                  1.36929880922735805310e-1,
                                  1.48753612908506148525e-2,
                                  7.86869131145613259100e-4,
                                  1.84631831751005468180e-5,
                                  1.42151175831644588870e-7,
                                  2.04426310338993978564e-15};
  const double q = p - 0.5;
  double x = 0.0;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q * poly(a, r) / poly(b, r);
  } else {
    double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
    x = r <= 5.0 ? poly(c, r - 1.6) / poly(d, r - 1.6) : poly(e, r - 5.0) / poly(f, r - 5.0);
    if (q < 0.0) x = -x;
  }
  // Newton refinement; the residual Phi(x) - p is taken from whichever tail
  // keeps it accurate.
  const double resid = x < 0.0 ? std_normal_cdf(x) - p : (1.0 - p) - std::exp(log_std_normal_ccdf(x));
  const double dens = std::exp(log_std_normal_pdf(x));
  if (dens > 0.0) x -= resid / dens;
  return x;
}

}  // namespace gsfm
