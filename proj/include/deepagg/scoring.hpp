#pragma once

#include <span>

#include "deepagg/distributions.hpp"

namespace deepagg {

inline constexpr double kDefaultPiLevel = 19.0 / 21.0;
inline constexpr int kPitHistogramBins = 21;
inline constexpr int kLpEvalSampleSize = 1000;
inline constexpr int kQuantileEvalLevels = 100;

// Closed-form CRPS of a normal forecast:
// sigma * [z(2*Phi(z) - 1) + 2*phi(z) - 1/sqrt(pi)] with z = (y - mu)/sigma.
double crps_normal(double mu, double sigma, double y);

// Sample-based CRPS estimator
//   (1/m) sum |x_i - y| - (1/(2 m^2)) sum_ij |x_i - x_j|,
// computed in O(m log m) via sorting.
double crps_sample(std::span<const double> sample, double y);

// Pinball approximation 2/K * sum_k rho_{tau_k}(y - Q(tau_k)) over the
// interior grid tau_k = k/(K+1).
double crps_quantile_approx(const ForecastDist& dist, double y,
                            int levels = kQuantileEvalLevels);

// Exact CRPS of a piecewise uniform forecast; the integrand is quadratic on
// each bin and is integrated in closed form.
double crps_histogram(const HistogramDist& hist, double y);

// Unified PIT: F(y) where the CDF is continuous, a uniform draw on
// [F(y-), F(y)] across a jump.
double pit(const ForecastDist& dist, double y, Rng& rng);
double pit(const ForecastDist& dist, double y, std::uint64_t rng_seed);

double skill_score(double mean_f, double mean_ref, double mean_opt);

// Central interval [Q((1-level)/2), Q(1-(1-level)/2)].
std::pair<double, double> prediction_interval(const ForecastDist& dist, double level);

// median(F) - y; positive when overforecasting.
double median_error(const ForecastDist& dist, double y);

// Family-dispatched CRPS used by the evaluation protocol: closed form for
// normals, exact integration for histograms, the quantile approximation for
// quantile-type and skew-normal forecasts, and a seeded 1000-draw sample
// estimate for mixtures.
double crps_protocol(const ForecastDist& dist, double y, Rng& rng);

struct EvalReport {
  double mean_crps = 0.0;
  double crpss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pit_values;
  double pi_coverage = 0.0;
  double pi_length = 0.0;
  double bias = 0.0;
  std::size_t n_cases = 0;
};

struct CaseScore {
  double crps = 0.0;
  double pit = 0.0;
  double pi_lower = 0.0;
  double pi_upper = 0.0;
  double median_err = 0.0;
};

// Scores one forecast per observation. Per-case randomness (mixture
// sampling, PIT jumps) is seeded from (seed, case index), so results do not
// depend on evaluation order or thread count. crpss is left NaN; it needs a
// reference score the caller must supply.
EvalReport evaluate_forecasts(std::span<const ForecastDist> forecasts,
                              std::span<const double> observations,
                              double pi_level = kDefaultPiLevel,
                              std::uint64_t seed = 0, int threads = 1,
                              std::vector<CaseScore>* per_case = nullptr);

}  // namespace deepagg
