#pragma once

// Test-only reference computations, kept independent of the library code
// paths they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// Integral of (F(z) - 1{y <= z})^2 by the composite trapezoid rule, split
// at the observation so the integrand stays smooth on each side.
inline double crps_trapezoid(const std::function<double(double)>& cdf, double y,
                             double lo, double hi, double step) {
  auto integrate = [&](double a, double b, const std::function<double(double)>& f) {
    if (b <= a) return 0.0;
    const std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>((b - a) / step));
    const double h = (b - a) / static_cast<double>(n);
    double acc = 0.5 * (f(a) + f(b));
    for (std::size_t i = 1; i < n; ++i) acc += f(a + h * static_cast<double>(i));
    return acc * h;
  };
  const double yc = std::clamp(y, lo, hi);
  double total = integrate(lo, yc, [&](double z) {
    const double F = cdf(z);
    return F * F;
  });
  total += integrate(yc, hi, [&](double z) {
    const double F = cdf(z) - 1.0;
    return F * F;
  });
  if (y < lo) total += lo - y;
  if (y > hi) total += y - hi;
  return total;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile_bisect(double p) {
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Exact CRPS of a normal mixture: sum_i w_i A(y - mu_i, s_i^2)
//   - 0.5 sum_ij w_i w_j A(mu_i - mu_j, s_i^2 + s_j^2)
// with A(m, v) = m (2 Phi(m/s) - 1) + 2 s phi(m/s), s = sqrt(v).
inline double mixture_normal_crps(const std::vector<double>& mu,
                                  const std::vector<double>& sigma,
                                  const std::vector<double>& w, double y) {
  auto A = [](double m, double v) {
    const double s = std::sqrt(v);
    const double z = m / s;
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    return m * (2.0 * normal_cdf(z) - 1.0) + 2.0 * s * phi;
  };
  double first = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    first += w[i] * A(y - mu[i], sigma[i] * sigma[i]);
  }
  double second = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (std::size_t j = 0; j < mu.size(); ++j) {
      second += w[i] * w[j] * A(mu[i] - mu[j], sigma[i] * sigma[i] + sigma[j] * sigma[j]);
    }
  }
  return first - 0.5 * second;
}

inline double ks_statistic(std::vector<double> sample,
                           const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double F = cdf(sample[i]);
    d = std::max(d, std::fabs(F - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - F));
  }
  return d;
}

// Dense grid search over the validation objective.
template <class Objective>
inline std::pair<double, double> grid_search_1d(Objective&& f, double lo, double hi,
                                                int points) {
  double best_x = lo;
  double best_f = f(lo);
  for (int i = 1; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
    const double fx = f(x);
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
  }
  return {best_x, best_f};
}

template <class Objective>
inline std::tuple<double, double, double> grid_search_2d(Objective&& f, double alo,
                                                         double ahi, double wlo,
                                                         double whi, int points) {
  double best_a = alo;
  double best_w = wlo;
  double best_f = f(alo, wlo);
  for (int i = 0; i < points; ++i) {
    const double a = alo + (ahi - alo) * static_cast<double>(i) / (points - 1);
    for (int j = 0; j < points; ++j) {
      const double w = wlo + (whi - wlo) * static_cast<double>(j) / (points - 1);
      const double fx = f(a, w);
      if (fx < best_f) {
        best_f = fx;
        best_a = a;
        best_w = w;
      }
    }
  }
  return {best_a, best_w, best_f};
}

}  // namespace oracle
