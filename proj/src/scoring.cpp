#include "deepagg/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deepagg {

double crps_normal(double mu, double sigma, double y) {
  if (!(sigma > 0.0)) throw std::domain_error("crps_normal: sigma must be positive");
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) -
                  kInvSqrtPi);
}

double crps_sample(std::span<const double> sample, double y) {
  if (sample.empty()) throw std::domain_error("crps_sample: sample must be nonempty");
  const std::size_t m = sample.size();
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  double abs_term = 0.0;
  double spread_term = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    abs_term += std::fabs(sorted[i] - y);
    spread_term += (2.0 * static_cast<double>(i) - static_cast<double>(m) + 1.0) *
                   sorted[i];
  }
  const double dm = static_cast<double>(m);
  return abs_term / dm - spread_term / (dm * dm);
}

double crps_quantile_approx(const ForecastDist& dist, double y, int levels) {
  if (levels < 2) throw std::domain_error("crps_quantile_approx: need at least two levels");
  double acc = 0.0;
  for (int k = 1; k <= levels; ++k) {
    const double tau = static_cast<double>(k) / (levels + 1);
    acc += pinball_loss(y - quantile(dist, tau), tau);
  }
  return 2.0 * acc / levels;
}

namespace {

// Integral of (c + s*t)^2 for t in [0, len].
double quadratic_segment(double c, double s, double len) {
  return len * (c * c + c * s * len + s * s * len * len / 3.0);
}

}  // namespace

double crps_histogram(const HistogramDist& hist, double y) {
  const auto& edges = hist.edges();
  const auto& probs = hist.probs();
  double total = 0.0;
  if (y < edges.front()) total += edges.front() - y;
  if (y > edges.back()) total += y - edges.back();
  double base = 0.0;  // accumulated probability below the current bin
  for (std::size_t l = 0; l < probs.size(); ++l) {
    const double lo = edges[l];
    const double hi = edges[l + 1];
    const double width = hi - lo;
    const double slope = probs[l] / width;
    if (y <= lo) {
      total += quadratic_segment(base - 1.0, slope, width);
    } else if (y >= hi) {
      total += quadratic_segment(base, slope, width);
    } else {
      total += quadratic_segment(base, slope, y - lo);
      total += quadratic_segment(base + slope * (y - lo) - 1.0, slope, hi - y);
    }
    base += probs[l];
  }
  return total;
}

double pit(const ForecastDist& dist, double y, Rng& rng) {
  const double hi = cdf(dist, y);
  const double lo = cdf_left(dist, y);
  if (hi - lo <= 0.0) return std::clamp(hi, 0.0, 1.0);
  return std::clamp(lo + rng.uniform() * (hi - lo), 0.0, 1.0);
}

double pit(const ForecastDist& dist, double y, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return pit(dist, y, rng);
}

double skill_score(double mean_f, double mean_ref, double mean_opt) {
  if (mean_ref == mean_opt) {
    throw std::domain_error("skill_score: reference equals optimal score");
  }
  return (mean_ref - mean_f) / (mean_ref - mean_opt);
}

std::pair<double, double> prediction_interval(const ForecastDist& dist, double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::domain_error("prediction_interval: level must lie in (0, 1)");
  }
  const double alpha = 0.5 * (1.0 - level);
  return {quantile(dist, alpha), quantile(dist, 1.0 - alpha)};
}

double median_error(const ForecastDist& dist, double y) {
  return quantile(dist, 0.5) - y;
}

double crps_protocol(const ForecastDist& dist, double y, Rng& rng) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          return crps_normal(d.mu(), d.sigma(), y);
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          return crps_histogram(d, y);
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          std::vector<double> draws(kLpEvalSampleSize);
          const ForecastDist wrapped(d);
          for (double& x : draws) x = sample_one(wrapped, rng);
          return crps_sample(draws, y);
        } else {
          return crps_quantile_approx(ForecastDist(d), y);
        }
      },
      dist.value());
}

EvalReport evaluate_forecasts(std::span<const ForecastDist> forecasts,
                              std::span<const double> observations,
                              double pi_level, std::uint64_t seed, int threads,
                              std::vector<CaseScore>* per_case) {
  if (forecasts.size() != observations.size()) {
    throw std::invalid_argument("evaluate_forecasts: forecast/observation count mismatch");
  }
  if (forecasts.empty()) {
    throw std::invalid_argument("evaluate_forecasts: empty input");
  }
  const std::size_t n = forecasts.size();
  std::vector<CaseScore> local;
  std::vector<CaseScore>& scores = per_case ? *per_case : local;
  scores.assign(n, CaseScore{});
  parallel_for_chunks(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(mix_seed(seed, i));
      const ForecastDist& f = forecasts[i];
      const double y = observations[i];
      CaseScore& s = scores[i];
      s.crps = crps_protocol(f, y, rng);
      s.pit = pit(f, y, rng);
      const auto [lo, hi] = prediction_interval(f, pi_level);
      s.pi_lower = lo;
      s.pi_upper = hi;
      s.median_err = median_error(f, y);
    }
  });
  EvalReport report;
  report.n_cases = n;
  report.pit_values.resize(n);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const CaseScore& s = scores[i];
    report.mean_crps += s.crps;
    report.pi_length += s.pi_upper - s.pi_lower;
    report.bias += s.median_err;
    report.pit_values[i] = s.pit;
    if (observations[i] >= s.pi_lower && observations[i] <= s.pi_upper) ++covered;
  }
  const double dn = static_cast<double>(n);
  report.mean_crps /= dn;
  report.pi_length /= dn;
  report.bias /= dn;
  report.pi_coverage = static_cast<double>(covered) / dn;
  return report;
}

}  // namespace deepagg
