#include <doctest.h>

#include <cmath>

#include "deepagg/scoring.hpp"
#include "oracles.hpp"

using namespace deepagg;

namespace {

constexpr double kStdNormalCrpsAtCenter = 0.23369497725510906;

double crps_normal_oracle(double mu, double sigma, double y) {
  const double lo = std::min(mu - 12.0 * sigma, y - sigma);
  const double hi = std::max(mu + 12.0 * sigma, y + sigma);
  return oracle::crps_trapezoid(
      [&](double z) { return oracle::normal_cdf((z - mu) / sigma); }, y, lo, hi,
      1e-4 * sigma);
}

HistogramDist random_histogram(Rng& rng, int max_bins = 6) {
  const int bins = 1 + static_cast<int>(rng.uniform() * max_bins);
  std::vector<double> edges(bins + 1);
  edges[0] = -2.0 + 4.0 * rng.uniform();
  for (int l = 1; l <= bins; ++l) edges[l] = edges[l - 1] + 0.05 + 2.0 * rng.uniform();
  std::vector<double> probs(bins);
  double total = 0.0;
  for (double& p : probs) {
    p = 0.01 + rng.uniform();
    total += p;
  }
  for (double& p : probs) p /= total;
  // renormalize exactly
  double acc = 0.0;
  for (int l = 0; l + 1 < bins; ++l) acc += probs[l];
  probs[bins - 1] = 1.0 - acc;
  return HistogramDist(std::move(edges), std::move(probs));
}

}  // namespace

TEST_CASE("crps_normal matches trapezoid integration") {
  CHECK(crps_normal(0.0, 1.0, 0.0) ==
        doctest::Approx(kStdNormalCrpsAtCenter).epsilon(1e-12));
  CHECK(crps_normal(0.0, 1.0, 0.0) == doctest::Approx(crps_normal_oracle(0, 1, 0)).epsilon(1e-8));
  for (double sigma : {0.5, 2.0}) {
    CHECK(crps_normal(3.0, sigma, 3.0) ==
          doctest::Approx(sigma * kStdNormalCrpsAtCenter).epsilon(1e-12));
  }
  // far observation: approaches |y - mu| - sigma/sqrt(pi)
  CHECK(crps_normal(0.0, 1.0, 10.0) == doctest::Approx(10.0 - kInvSqrtPi).epsilon(1e-4));
  CHECK(crps_normal(0.0, 1.0, 10.0) ==
        doctest::Approx(crps_normal_oracle(0, 1, 10)).epsilon(1e-7));
  CHECK_THROWS_AS(crps_normal(0.0, 0.0, 1.0), std::domain_error);
}

TEST_CASE("crps_normal random spot checks against the integral") {
  Rng rng(77);
  for (int rep = 0; rep < 25; ++rep) {
    const double mu = 4.0 * rng.normal();
    const double sigma = 0.3 + 2.0 * rng.uniform();
    const double y = mu + 4.0 * sigma * rng.normal();
    CHECK(crps_normal(mu, sigma, y) ==
          doctest::Approx(crps_normal_oracle(mu, sigma, y)).epsilon(1e-7).scale(1.0));
  }
}

TEST_CASE("crps_sample") {
  const std::vector<double> equal{2.0, 2.0, 2.0};
  CHECK(crps_sample(equal, 2.0) == doctest::Approx(0.0));
  const std::vector<double> pair{0.0, 1.0};
  CHECK(crps_sample(pair, 0.0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(crps_sample(std::vector<double>{}, 0.0), std::domain_error);

  const auto draws = sample(NormalDist(0.0, 1.0), 100000, 2024);
  CHECK(crps_sample(draws, 0.0) ==
        doctest::Approx(kStdNormalCrpsAtCenter).epsilon(0.01));

  // permutation invariance
  std::vector<double> shuffled{3.0, -1.0, 0.5, 2.0};
  std::vector<double> sorted = shuffled;
  std::sort(sorted.begin(), sorted.end());
  CHECK(crps_sample(shuffled, 0.7) == doctest::Approx(crps_sample(sorted, 0.7)).epsilon(1e-14));
}

TEST_CASE("crps_quantile_approx") {
  const ForecastDist point(PiecewiseLinearQuantile({0.0, 1.0}, {1.5, 1.5}));
  CHECK(crps_quantile_approx(point, 1.5) == doctest::Approx(0.0));
  CHECK(crps_quantile_approx(NormalDist(0.0, 1.0), 0.0, 100) ==
        doctest::Approx(kStdNormalCrpsAtCenter).epsilon(0.02));
  // degree-1 polynomial on [0,1] is the uniform distribution
  CHECK(crps_quantile_approx(BernsteinQuantileDist({0.0, 1.0}), 0.5, 100) ==
        doctest::Approx(1.0 / 12.0).epsilon(0.02));
  CHECK_THROWS_AS(crps_quantile_approx(point, 0.0, 1), std::domain_error);
}

TEST_CASE("crps_sample on equidistant quantiles converges to the true CRPS") {
  const int K = 10000;
  std::vector<double> q(K);
  for (int k = 1; k <= K; ++k) {
    q[k - 1] = oracle::normal_quantile_bisect(static_cast<double>(k) / (K + 1));
  }
  CHECK(crps_sample(q, 0.3) ==
        doctest::Approx(crps_normal(0.0, 1.0, 0.3)).epsilon(0.01));
}

TEST_CASE("crps_histogram exact values") {
  const HistogramDist uniform({0.0, 1.0}, {1.0});
  CHECK(crps_histogram(uniform, 0.5) == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
  CHECK(crps_histogram(uniform, 2.0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  // far below the support the integral is dominated by (b0 - y)
  const double far = crps_histogram(uniform, -50.0);
  CHECK(far == doctest::Approx(50.0 + crps_histogram(uniform, 0.0)).epsilon(1e-10));
}

TEST_CASE("crps_histogram agrees with trapezoid integration on random histograms") {
  Rng rng(4242);
  for (int rep = 0; rep < 100; ++rep) {
    const HistogramDist h = random_histogram(rng);
    const double y = h.edges().front() - 1.0 +
                     (h.edges().back() - h.edges().front() + 2.0) * rng.uniform();
    const double expected = oracle::crps_trapezoid(
        [&](double z) { return h.cdf_at(z); }, y, h.edges().front(), h.edges().back(),
        2e-5 * (h.edges().back() - h.edges().front()));
    CHECK(crps_histogram(h, y) == doctest::Approx(expected).epsilon(1e-8).scale(1.0));
  }
}

TEST_CASE("pit behaviour") {
  CHECK(pit(NormalDist(0.0, 1.0), 0.0, 1u) == doctest::Approx(0.5));
  CHECK(pit(HistogramDist({0.0, 1.0}, {1.0}), -1.0, 1u) == doctest::Approx(0.0));

  // A point mass at y randomizes over the whole jump.
  const ForecastDist point(PiecewiseLinearQuantile({0.0, 1.0}, {0.7, 0.7}));
  double lo = 1.0;
  double hi = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const double u = pit(point, 0.7, s);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.2);
  CHECK(hi > 0.8);

  // Near-point-mass histogram: the PIT stays inside [0, 1].
  const HistogramDist tiny({0.7 - 1e-9, 0.7 + 1e-9}, {1.0});
  const double u = pit(ForecastDist(tiny), 0.7, 3u);
  CHECK(u >= 0.0);
  CHECK(u <= 1.0);
}

TEST_CASE("pit of draws from the forecast itself is uniform") {
  const ForecastDist f(HistogramDist({-1.0, 0.0, 0.5, 2.0}, {0.2, 0.5, 0.3}));
  const std::size_t n = 10000;
  Rng rng(555);
  std::vector<double> pits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = sample_one(f, rng);
    pits[i] = pit(f, y, rng);
  }
  const double ks = oracle::ks_statistic(pits, [](double u) {
    return std::clamp(u, 0.0, 1.0);
  });
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("propriety spot check for the closed-form CRPS") {
  Rng rng(999);
  double truth = 0.0;
  double shifted = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double y = rng.normal();
    truth += crps_normal(0.0, 1.0, y);
    shifted += crps_normal(0.5, 1.0, y);
  }
  CHECK(truth < shifted);
}

TEST_CASE("mixture CRPS is convex in the forecast") {
  Rng rng(31337);
  for (int rep = 0; rep < 10000; ++rep) {
    const double mu1 = 3.0 * rng.normal();
    const double mu2 = 3.0 * rng.normal();
    const double s1 = 0.3 + rng.uniform();
    const double s2 = 0.3 + rng.uniform();
    const double w = rng.uniform();
    const double y = 3.0 * rng.normal();
    const double lp = oracle::mixture_normal_crps({mu1, mu2}, {s1, s2}, {w, 1.0 - w}, y);
    const double avg = w * crps_normal(mu1, s1, y) + (1.0 - w) * crps_normal(mu2, s2, y);
    CHECK(lp <= avg + 1e-12);
  }
}

TEST_CASE("skill_score") {
  CHECK(skill_score(1.0, 1.0, 0.2) == doctest::Approx(0.0));
  CHECK(skill_score(0.2, 1.0, 0.2) == doctest::Approx(1.0));
  CHECK(skill_score(0.9, 1.0, 0.0) == doctest::Approx(0.1));
  CHECK_THROWS_AS(skill_score(0.5, 1.0, 1.0), std::domain_error);
}

TEST_CASE("prediction_interval") {
  const auto [lo, hi] = prediction_interval(NormalDist(0.0, 1.0), 19.0 / 21.0);
  const double expected = oracle::normal_quantile_bisect(1.0 / 21.0);
  CHECK(lo == doctest::Approx(expected).epsilon(1e-3));
  CHECK(lo == doctest::Approx(-1.668).epsilon(1e-3));
  CHECK(hi == doctest::Approx(-expected).epsilon(1e-3));
  CHECK(hi >= lo);

  const auto [l2, h2] = prediction_interval(HistogramDist({0.0, 1.0}, {1.0}), 0.5);
  CHECK(l2 == doctest::Approx(0.25));
  CHECK(h2 == doctest::Approx(0.75));

  // coverage is the definition: y inside iff lower <= y <= upper
  for (double y : {-2.0, 0.0, 2.0}) {
    const bool inside = lo <= y && y <= hi;
    CHECK(inside == (y >= lo && y <= hi));
  }
  CHECK_THROWS_AS(prediction_interval(NormalDist(0, 1), 1.0), std::domain_error);
}

TEST_CASE("median_error") {
  CHECK(median_error(NormalDist(3.0, 1.0), 3.0) == doctest::Approx(0.0));
  CHECK(median_error(NormalDist(5.0, 2.0), 3.0) == doctest::Approx(2.0));
  CHECK(median_error(HistogramDist({0.0, 2.0}, {1.0}), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("evaluate_forecasts aggregates case scores") {
  std::vector<ForecastDist> forecasts;
  std::vector<double> obs;
  for (int i = 0; i < 200; ++i) {
    forecasts.push_back(NormalDist(0.0, 1.0));
    obs.push_back(0.0);
  }
  std::vector<CaseScore> cases;
  const EvalReport report = evaluate_forecasts(forecasts, obs, 19.0 / 21.0, 9, 2, &cases);
  CHECK(report.n_cases == 200);
  CHECK(report.mean_crps == doctest::Approx(kStdNormalCrpsAtCenter).epsilon(1e-10));
  CHECK(report.pi_coverage == doctest::Approx(1.0));
  CHECK(report.bias == doctest::Approx(0.0).scale(1.0));
  CHECK(report.pit_values.size() == 200);
  CHECK(std::isnan(report.crpss));
  CHECK(cases.size() == 200);
  CHECK_THROWS_AS(evaluate_forecasts(forecasts, std::vector<double>{1.0}, 0.9, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("crps_protocol dispatches by family") {
  Rng rng(17);
  CHECK(crps_protocol(NormalDist(0, 1), 0.0, rng) ==
        doctest::Approx(kStdNormalCrpsAtCenter).epsilon(1e-12));
  CHECK(crps_protocol(HistogramDist({0.0, 1.0}, {1.0}), 0.5, rng) ==
        doctest::Approx(1.0 / 12.0).epsilon(1e-12));
  // mixtures are scored from a seeded 1000-draw sample
  const ForecastDist mix(MixtureDist({NormalDist(7, 1), NormalDist(10, 1)}, {0.5, 0.5}));
  const double exact = oracle::mixture_normal_crps({7.0, 10.0}, {1.0, 1.0}, {0.5, 0.5}, 8.0);
  Rng r1(5);
  CHECK(crps_protocol(mix, 8.0, r1) == doctest::Approx(exact).epsilon(0.08));
  Rng r2(5);
  Rng r3(5);
  CHECK(crps_protocol(mix, 8.0, r2) == crps_protocol(mix, 8.0, r3));
}
