#include <doctest.h>

#include <cmath>

#include "deepagg/distributions.hpp"
#include "oracles.hpp"

using namespace deepagg;

namespace {

ForecastDist two_normal_mixture() {
  return MixtureDist({NormalDist(7.0, 1.0), NormalDist(10.0, 1.0)}, {0.5, 0.5});
}

std::vector<ForecastDist> family_zoo() {
  std::vector<ForecastDist> zoo;
  zoo.push_back(NormalDist(1.5, 2.0));
  zoo.push_back(SkewNormalDist(0.0, 1.0, -5.0));
  zoo.push_back(BernsteinQuantileDist({-1.0, -0.5, 0.3, 0.4, 2.0}));
  zoo.push_back(HistogramDist({-1.0, 0.0, 0.5, 2.0}, {0.2, 0.5, 0.3}));
  zoo.push_back(two_normal_mixture());
  zoo.push_back(PiecewiseLinearQuantile({0.0, 0.3, 1.0}, {-2.0, 0.0, 4.0}));
  return zoo;
}

}  // namespace

TEST_CASE("construction enforces invariants") {
  CHECK_THROWS_AS(NormalDist(0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(NormalDist(0.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(SkewNormalDist(0.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(BernsteinQuantileDist({1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(BernsteinQuantileDist(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(HistogramDist({0.0, 0.0, 1.0}, {0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(HistogramDist({0.0, 1.0}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(HistogramDist({0.0, 1.0, 2.0}, {0.7, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(MixtureDist({NormalDist(0, 1)}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(PiecewiseLinearQuantile({0.0, 0.5}, {1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(PiecewiseLinearQuantile({0.1, 1.0}, {0.0, 1.0}), std::invalid_argument);
  // ties between consecutive coefficients are allowed
  CHECK_NOTHROW(BernsteinQuantileDist({0.0, 0.0, 1.0}));
}

TEST_CASE("cdf examples") {
  CHECK(cdf(NormalDist(0.0, 1.0), 0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cdf(HistogramDist({0.0, 1.0, 2.0}, {0.5, 0.5}), 0.5) ==
        doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cdf(two_normal_mixture(), 8.5) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("quantile examples") {
  CHECK(quantile(BernsteinQuantileDist({0.0, 1.0}), 0.3) ==
        doctest::Approx(0.3).epsilon(1e-14));
  CHECK(quantile(HistogramDist({0.0, 1.0, 2.0}, {0.25, 0.75}), 0.25) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(quantile(NormalDist(8.5, 1.0), 0.5) == doctest::Approx(8.5).epsilon(1e-12));
  CHECK_THROWS_AS(quantile(NormalDist(0.0, 1.0), 0.0), std::domain_error);
  CHECK_THROWS_AS(quantile(HistogramDist({0.0, 1.0}, {1.0}), 1.5), std::domain_error);
}

TEST_CASE("sampling examples") {
  SUBCASE("normal sample mean is near the location") {
    const auto draws = sample(NormalDist(0.0, 1.0), 100000, 42);
    double mean = 0.0;
    for (double x : draws) mean += x;
    mean /= static_cast<double>(draws.size());
    CHECK(std::fabs(mean) < 0.02);
  }
  SUBCASE("histogram draws stay in the support") {
    const auto draws = sample(HistogramDist({0.0, 1.0}, {1.0}), 2000, 7);
    for (double x : draws) {
      CHECK(x >= 0.0);
      CHECK(x < 1.0);
    }
  }
  SUBCASE("zero-weight mixture components are never chosen") {
    const MixtureDist m({NormalDist(3.0, 1e-9), NormalDist(-50.0, 1e-9)}, {1.0, 0.0});
    const auto draws = sample(ForecastDist(m), 2000, 11);
    for (double x : draws) CHECK(x == doctest::Approx(3.0).epsilon(1e-6));
  }
  SUBCASE("seeded draws are reproducible") {
    const auto a = sample(two_normal_mixture(), 100, 5);
    const auto b = sample(two_normal_mixture(), 100, 5);
    CHECK(a == b);
  }
}

TEST_CASE("cdf and quantile are monotone across families") {
  for (const auto& dist : family_zoo()) {
    double prev_cdf = -1.0;
    for (int i = 0; i <= 60; ++i) {
      const double z = -6.0 + 18.0 * i / 60.0;
      const double F = cdf(dist, z);
      CHECK(F >= prev_cdf - 1e-13);
      CHECK(F >= 0.0);
      CHECK(F <= 1.0);
      prev_cdf = F;
    }
    double prev_q = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= 99; ++i) {
      const double q = quantile(dist, i / 100.0);
      CHECK(q >= prev_q - 1e-13);
      prev_q = q;
    }
  }
}

TEST_CASE("round trip cdf(quantile(p)) for continuous strictly increasing families") {
  std::vector<ForecastDist> families;
  families.push_back(NormalDist(1.0, 0.7));
  families.push_back(SkewNormalDist(2.0, 1.5, -5.0));
  families.push_back(BernsteinQuantileDist({0.0, 0.8, 1.4, 3.0}));
  families.push_back(HistogramDist({-2.0, -1.0, 1.5, 4.0}, {0.25, 0.5, 0.25}));
  families.push_back(two_normal_mixture());
  for (const auto& dist : families) {
    for (int i = 1; i <= 99; ++i) {
      const double p = i / 100.0;
      CHECK(std::fabs(cdf(dist, quantile(dist, p)) - p) <= 1e-8);
    }
  }
}

TEST_CASE("histogram boundary values are exact") {
  const HistogramDist h({-1.0, 0.25, 3.0}, {0.4, 0.6});
  CHECK(h.cdf_at(-1.0) == 0.0);
  CHECK(h.cdf_at(3.0) == 1.0);
}

TEST_CASE("bernstein support is hit exactly") {
  const BernsteinQuantileDist b({-2.5, -1.0, 0.0, 7.25});
  CHECK(b.quantile_at(0.0) == -2.5);
  CHECK(b.quantile_at(1.0) == 7.25);
}

TEST_CASE("sampled empirical CDF matches the analytic CDF (Kolmogorov distance)") {
  std::uint64_t seed = 90210;
  for (const auto& dist : family_zoo()) {
    const auto draws = sample(dist, 100000, seed++);
    const double d = oracle::ks_statistic(draws, [&](double z) { return cdf(dist, z); });
    INFO("family ", dist.family(), " ks ", d);
    CHECK(d < 0.01);
  }
}

TEST_CASE("skew normal cdf agrees with the normal for shape zero and mirrors") {
  const SkewNormalDist plain(0.3, 1.2, 0.0);
  for (double z : {-2.0, -0.5, 0.3, 1.8}) {
    CHECK(cdf(ForecastDist(plain), z) ==
          doctest::Approx(oracle::normal_cdf((z - 0.3) / 1.2)).epsilon(1e-10));
  }
  // X ~ SN(shape) implies -X ~ SN(-shape)
  const ForecastDist neg(SkewNormalDist(0.0, 1.0, -5.0));
  const ForecastDist pos(SkewNormalDist(0.0, 1.0, 5.0));
  for (double z : {-1.5, -0.2, 0.4, 2.0}) {
    CHECK(cdf(neg, z) == doctest::Approx(1.0 - cdf(pos, -z)).epsilon(1e-9));
  }
}

TEST_CASE("piecewise linear quantile handles point masses") {
  // A pure point mass: the CDF jumps from 0 to 1.
  const PiecewiseLinearQuantile point({0.0, 1.0}, {2.0, 2.0});
  const ForecastDist d(point);
  CHECK(cdf(d, 1.999) == 0.0);
  CHECK(cdf(d, 2.0) == 1.0);
  CHECK(cdf_left(d, 2.0) == 0.0);
  CHECK(quantile(d, 0.5) == 2.0);

  // Mass 0.4 at 1.0 inside an otherwise continuous quantile function.
  const PiecewiseLinearQuantile mixed({0.0, 0.3, 0.7, 1.0}, {0.0, 1.0, 1.0, 2.0});
  const ForecastDist m(mixed);
  CHECK(cdf(m, 1.0) == doctest::Approx(0.7));
  CHECK(cdf_left(m, 1.0) == doctest::Approx(0.3));
  CHECK(cdf(m, 0.5) == doctest::Approx(0.15));
}

TEST_CASE("pdf matches numeric cdf slopes away from kinks") {
  for (const auto& dist : family_zoo()) {
    if (dist.is<PiecewiseLinearQuantile>()) continue;
    for (double z : {-0.8, 0.2, 1.1}) {
      const double h = 1e-5;
      const double numeric = (cdf(dist, z + h) - cdf(dist, z - h)) / (2.0 * h);
      CHECK(pdf(dist, z) == doctest::Approx(numeric).epsilon(2e-3));
    }
  }
}

TEST_CASE("JSON round trip preserves every family") {
  for (const auto& dist : family_zoo()) {
    const auto text = to_json_string(dist);
    const ForecastDist back = dist_from_json_string(text);
    CHECK(back.family() == dist.family());
    for (double z : {-3.0, 0.0, 0.7, 5.0}) {
      CHECK(cdf(back, z) == doctest::Approx(cdf(dist, z)).epsilon(1e-12));
    }
  }
  CHECK(to_json(ForecastDist(NormalDist(8.5, 1.0)))["family"] == "normal");
  CHECK_THROWS_AS(dist_from_json_string("{\"family\":\"cauchy\"}"), std::invalid_argument);
}
