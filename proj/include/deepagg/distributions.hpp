#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "deepagg/math.hpp"

namespace deepagg {

class ForecastDist;

// Gaussian with location mu and scale sigma > 0.
class NormalDist {
 public:
  NormalDist(double mu, double sigma);
  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

 private:
  double mu_;
  double sigma_;
};

// Azzalini skew-normal; shape 0 recovers the normal distribution.
class SkewNormalDist {
 public:
  SkewNormalDist(double location, double scale, double shape);
  double location() const { return location_; }
  double scale() const { return scale_; }
  double shape() const { return shape_; }

 private:
  double location_;
  double scale_;
  double shape_;
};

// Quantile function given as a Bernstein polynomial with nondecreasing
// coefficients; the support is [coeffs.front(), coeffs.back()]. Ties between
// consecutive coefficients are allowed (averaged or network-produced
// coefficient vectors may contain them).
class BernsteinQuantileDist {
 public:
  explicit BernsteinQuantileDist(std::vector<double> coeffs);
  const std::vector<double>& coeffs() const { return coeffs_; }
  int degree() const { return static_cast<int>(coeffs_.size()) - 1; }

  // Q(p) via de Casteljau; p in [0, 1].
  double quantile_at(double p) const;
  // dQ/dp at p.
  double quantile_derivative(double p) const;

 private:
  std::vector<double> coeffs_;
};

// Piecewise uniform density over bins [edges[l-1], edges[l]) with
// probabilities probs[l-1] summing to one.
class HistogramDist {
 public:
  HistogramDist(std::vector<double> edges, std::vector<double> probs);
  const std::vector<double>& edges() const { return edges_; }
  const std::vector<double>& probs() const { return probs_; }
  // Accumulated bin probabilities p*_1..p*_N (the last entry is exactly 1).
  const std::vector<double>& accumulated() const { return cum_; }
  std::size_t bin_count() const { return probs_.size(); }

  double cdf_at(double z) const;
  double quantile_at(double p) const;

 private:
  std::vector<double> edges_;
  std::vector<double> probs_;
  std::vector<double> cum_;
};

// Convex combination of arbitrary component forecasts.
class MixtureDist {
 public:
  MixtureDist(std::vector<ForecastDist> components, std::vector<double> weights);
  const std::vector<ForecastDist>& components() const { return components_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<ForecastDist> components_;
  std::vector<double> weights_;
};

// Quantile function interpolated linearly between (level, value) knots.
// Levels are strictly increasing from 0 to 1; equal consecutive values
// encode a point mass, so the CDF may jump.
class PiecewiseLinearQuantile {
 public:
  PiecewiseLinearQuantile(std::vector<double> levels, std::vector<double> values);
  const std::vector<double>& levels() const { return levels_; }
  const std::vector<double>& values() const { return values_; }

  double quantile_at(double p) const;

 private:
  std::vector<double> levels_;
  std::vector<double> values_;
};

// Tagged union over the supported forecast families. Values are immutable
// after construction; all operations on them are pure.
class ForecastDist {
 public:
  using Variant = std::variant<NormalDist, SkewNormalDist, BernsteinQuantileDist,
                               HistogramDist, MixtureDist, PiecewiseLinearQuantile>;

  ForecastDist(NormalDist d) : v_(std::move(d)) {}
  ForecastDist(SkewNormalDist d) : v_(std::move(d)) {}
  ForecastDist(BernsteinQuantileDist d) : v_(std::move(d)) {}
  ForecastDist(HistogramDist d) : v_(std::move(d)) {}
  ForecastDist(MixtureDist d) : v_(std::move(d)) {}
  ForecastDist(PiecewiseLinearQuantile d) : v_(std::move(d)) {}

  const Variant& value() const { return v_; }

  template <class T>
  bool is() const {
    return std::holds_alternative<T>(v_);
  }
  template <class T>
  const T& as() const {
    return std::get<T>(v_);
  }

  // Stable family tag, also used by the JSON serialization.
  std::string family() const;

 private:
  Variant v_;
};

double cdf(const ForecastDist& dist, double z);
// Left limit F(z-); differs from cdf() only at point masses.
double cdf_left(const ForecastDist& dist, double z);
double quantile(const ForecastDist& dist, double p);
double pdf(const ForecastDist& dist, double z);

// Support as [lower, upper]; +-infinity for unbounded families. Zero-weight
// mixture components do not contribute.
std::pair<double, double> support(const ForecastDist& dist);

double sample_one(const ForecastDist& dist, Rng& rng);
std::vector<double> sample(const ForecastDist& dist, std::size_t m,
                           std::uint64_t rng_seed);

nlohmann::json to_json(const ForecastDist& dist);
ForecastDist dist_from_json(const nlohmann::json& j);
std::string to_json_string(const ForecastDist& dist);
ForecastDist dist_from_json_string(const std::string& text);

}  // namespace deepagg
