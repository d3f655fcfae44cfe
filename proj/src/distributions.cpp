#include "deepagg/distributions.hpp"

#include <algorithm>
#include <cmath>

namespace deepagg {

namespace {

constexpr double kProbTol = 1e-12;
// Standardized integration cutoff; the skew-normal density is bounded by
// twice the normal density, so mass beyond 14 is far below 1e-40.
constexpr double kSkewNormalCut = 14.0;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

bool nondecreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1]) return false;
  }
  return true;
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

double de_casteljau(const double* coeffs, std::size_t n, double p) {
  if (n == 1) return coeffs[0];
  double stack[48];
  std::vector<double> heap;
  double* b = stack;
  if (n > 48) {
    heap.assign(coeffs, coeffs + n);
    b = heap.data();
  } else {
    std::copy(coeffs, coeffs + n, stack);
  }
  for (std::size_t k = n - 1; k >= 1; --k) {
    for (std::size_t j = 0; j < k; ++j) {
      b[j] += p * (b[j + 1] - b[j]);
    }
  }
  return b[0];
}

}  // namespace

NormalDist::NormalDist(double mu, double sigma) : mu_(mu), sigma_(sigma) {
  require(std::isfinite(mu) && std::isfinite(sigma), "NormalDist: parameters must be finite");
  require(sigma > 0.0, "NormalDist: sigma must be positive");
}

SkewNormalDist::SkewNormalDist(double location, double scale, double shape)
    : location_(location), scale_(scale), shape_(shape) {
  require(std::isfinite(location) && std::isfinite(scale) && std::isfinite(shape),
          "SkewNormalDist: parameters must be finite");
  require(scale > 0.0, "SkewNormalDist: scale must be positive");
}

BernsteinQuantileDist::BernsteinQuantileDist(std::vector<double> coeffs)
    : coeffs_(std::move(coeffs)) {
  require(!coeffs_.empty(), "BernsteinQuantileDist: coefficients must be nonempty");
  require(all_finite(coeffs_), "BernsteinQuantileDist: coefficients must be finite");
  require(nondecreasing(coeffs_), "BernsteinQuantileDist: coefficients must be nondecreasing");
}

double BernsteinQuantileDist::quantile_at(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("BernsteinQuantileDist: quantile level outside [0, 1]");
  }
  return de_casteljau(coeffs_.data(), coeffs_.size(), p);
}

double BernsteinQuantileDist::quantile_derivative(double p) const {
  const std::size_t n = coeffs_.size();
  if (n == 1) return 0.0;
  std::vector<double> diff(n - 1);
  for (std::size_t j = 0; j + 1 < n; ++j) diff[j] = coeffs_[j + 1] - coeffs_[j];
  return static_cast<double>(n - 1) * de_casteljau(diff.data(), diff.size(), p);
}

HistogramDist::HistogramDist(std::vector<double> edges, std::vector<double> probs)
    : edges_(std::move(edges)), probs_(std::move(probs)) {
  require(edges_.size() >= 2, "HistogramDist: need at least two edges");
  require(edges_.size() == probs_.size() + 1,
          "HistogramDist: edges must have one more entry than probs");
  require(all_finite(edges_) && all_finite(probs_), "HistogramDist: entries must be finite");
  require(strictly_increasing(edges_), "HistogramDist: edges must be strictly increasing");
  double total = 0.0;
  for (double p : probs_) {
    require(p >= 0.0, "HistogramDist: probabilities must be nonnegative");
    total += p;
  }
  require(std::fabs(total - 1.0) <= kProbTol, "HistogramDist: probabilities must sum to one");
  cum_.resize(probs_.size());
  double acc = 0.0;
  for (std::size_t l = 0; l < probs_.size(); ++l) {
    acc += probs_[l];
    cum_[l] = acc;
  }
  cum_.back() = 1.0;
}

double HistogramDist::cdf_at(double z) const {
  if (z <= edges_.front()) return 0.0;
  if (z >= edges_.back()) return 1.0;
  const auto it = std::upper_bound(edges_.begin(), edges_.end(), z);
  const std::size_t l = static_cast<std::size_t>(it - edges_.begin());  // z in [edges[l-1], edges[l])
  const double lo = edges_[l - 1];
  const double hi = edges_[l];
  const double base = l >= 2 ? cum_[l - 2] : 0.0;
  return base + probs_[l - 1] * (z - lo) / (hi - lo);
}

double HistogramDist::quantile_at(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("HistogramDist: quantile level outside [0, 1]");
  }
  const auto it = std::lower_bound(cum_.begin(), cum_.end(), p);
  const std::size_t l = std::min<std::size_t>(
      static_cast<std::size_t>(it - cum_.begin()), cum_.size() - 1);
  const double prev = l >= 1 ? cum_[l - 1] : 0.0;
  const double width = cum_[l] - prev;
  if (width <= 0.0 || p <= prev) return edges_[l];
  return edges_[l] + (edges_[l + 1] - edges_[l]) * (p - prev) / width;
}

MixtureDist::MixtureDist(std::vector<ForecastDist> components,
                         std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  require(!components_.empty(), "MixtureDist: need at least one component");
  require(components_.size() == weights_.size(),
          "MixtureDist: weights must match components");
  double total = 0.0;
  for (double w : weights_) {
    require(std::isfinite(w) && w >= 0.0, "MixtureDist: weights must be nonnegative");
    total += w;
  }
  require(std::fabs(total - 1.0) <= kProbTol, "MixtureDist: weights must sum to one");
}

PiecewiseLinearQuantile::PiecewiseLinearQuantile(std::vector<double> levels,
                                                 std::vector<double> values)
    : levels_(std::move(levels)), values_(std::move(values)) {
  require(levels_.size() >= 2, "PiecewiseLinearQuantile: need at least two knots");
  require(levels_.size() == values_.size(),
          "PiecewiseLinearQuantile: levels and values must have equal length");
  require(all_finite(levels_) && all_finite(values_),
          "PiecewiseLinearQuantile: entries must be finite");
  require(levels_.front() == 0.0 && levels_.back() == 1.0,
          "PiecewiseLinearQuantile: levels must start at 0 and end at 1");
  require(strictly_increasing(levels_),
          "PiecewiseLinearQuantile: levels must be strictly increasing");
  require(nondecreasing(values_), "PiecewiseLinearQuantile: values must be nondecreasing");
}

double PiecewiseLinearQuantile::quantile_at(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("PiecewiseLinearQuantile: quantile level outside [0, 1]");
  }
  if (p <= 0.0) return values_.front();
  if (p >= 1.0) return values_.back();
  const auto it = std::upper_bound(levels_.begin(), levels_.end(), p);
  const std::size_t i = static_cast<std::size_t>(it - levels_.begin());  // p in [levels[i-1], levels[i])
  const double t = (p - levels_[i - 1]) / (levels_[i] - levels_[i - 1]);
  return values_[i - 1] + t * (values_[i] - values_[i - 1]);
}

std::string ForecastDist::family() const {
  switch (v_.index()) {
    case 0: return "normal";
    case 1: return "skew_normal";
    case 2: return "bernstein_quantile";
    case 3: return "histogram";
    case 4: return "mixture";
    default: return "piecewise_linear_quantile";
  }
}

namespace {

double skew_normal_std_pdf(double u, double shape) {
  return 2.0 * std_normal_pdf(u) * std_normal_cdf(shape * u);
}

double skew_normal_std_cdf(double t, double shape) {
  if (shape == 0.0) return std_normal_cdf(t);
  if (t <= -kSkewNormalCut) return 0.0;
  if (t >= kSkewNormalCut) return 1.0;
  const auto density = [shape](double u) { return skew_normal_std_pdf(u, shape); };
  if (t <= 0.0) {
    return adaptive_simpson(density, -kSkewNormalCut, t, 1e-12);
  }
  return 1.0 - adaptive_simpson(density, t, kSkewNormalCut, 1e-12);
}

double mixture_cdf(const MixtureDist& d, double z, bool left) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.components().size(); ++i) {
    const double w = d.weights()[i];
    if (w == 0.0) continue;
    acc += w * (left ? cdf_left(d.components()[i], z) : cdf(d.components()[i], z));
  }
  return std::min(1.0, std::max(0.0, acc));
}

// sup{p in [0,1] : Q(p) <= z} for a continuous nondecreasing quantile
// function; the generalized inverse that keeps the CDF right-continuous.
template <class QuantileFn>
double invert_quantile(QuantileFn&& q, double z, double q0, double q1) {
  if (z < q0) return 0.0;
  if (z >= q1) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int iter = 0; iter < 55; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (q(mid) <= z) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double piecewise_linear_cdf(const PiecewiseLinearQuantile& d, double z) {
  const auto& values = d.values();
  const auto& levels = d.levels();
  if (z < values.front()) return 0.0;
  if (z >= values.back()) return 1.0;
  // Last knot with value <= z; a run of equal values (point mass) resolves
  // to its upper level, keeping the CDF right-continuous.
  const auto it = std::upper_bound(values.begin(), values.end(), z);
  const std::size_t i = static_cast<std::size_t>(it - values.begin()) - 1;
  const double dv = values[i + 1] - values[i];
  return levels[i] + (z - values[i]) / dv * (levels[i + 1] - levels[i]);
}

double piecewise_linear_cdf_left(const PiecewiseLinearQuantile& d, double z) {
  const auto& values = d.values();
  const auto& levels = d.levels();
  if (z <= values.front()) return 0.0;
  if (z > values.back()) return 1.0;
  const auto it = std::lower_bound(values.begin(), values.end(), z);
  const std::size_t i = static_cast<std::size_t>(it - values.begin());
  if (values[i] == z) return levels[i];
  const double dv = values[i] - values[i - 1];
  return levels[i - 1] + (z - values[i - 1]) / dv * (levels[i] - levels[i - 1]);
}

}  // namespace

double cdf(const ForecastDist& dist, double z) {
  return std::visit(
      [z](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          return std_normal_cdf((z - d.mu()) / d.sigma());
        } else if constexpr (std::is_same_v<T, SkewNormalDist>) {
          return skew_normal_std_cdf((z - d.location()) / d.scale(), d.shape());
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          return invert_quantile([&d](double p) { return d.quantile_at(p); }, z,
                                 d.coeffs().front(), d.coeffs().back());
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          return d.cdf_at(z);
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          return mixture_cdf(d, z, /*left=*/false);
        } else {
          return piecewise_linear_cdf(d, z);
        }
      },
      dist.value());
}

double cdf_left(const ForecastDist& dist, double z) {
  return std::visit(
      [z, &dist](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MixtureDist>) {
          return mixture_cdf(d, z, /*left=*/true);
        } else if constexpr (std::is_same_v<T, PiecewiseLinearQuantile>) {
          return piecewise_linear_cdf_left(d, z);
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          // The quantile polynomial is analytic, so the CDF can only jump
          // when it is globally constant (all coefficients equal).
          if (d.coeffs().front() == d.coeffs().back()) {
            return z <= d.coeffs().front() ? 0.0 : 1.0;
          }
          return cdf(dist, z);
        } else {
          return cdf(dist, z);  // continuous families
        }
      },
      dist.value());
}

double quantile(const ForecastDist& dist, double p) {
  return std::visit(
      [p](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          return d.mu() + d.sigma() * std_normal_quantile(p);
        } else if constexpr (std::is_same_v<T, SkewNormalDist>) {
          if (!(p > 0.0 && p < 1.0)) {
            throw std::domain_error("quantile: level outside (0, 1) for unbounded family");
          }
          double lo = -kSkewNormalCut;
          double hi = kSkewNormalCut;
          while (hi - lo > 1e-12) {
            const double mid = 0.5 * (lo + hi);
            (skew_normal_std_cdf(mid, d.shape()) < p ? lo : hi) = mid;
          }
          return d.location() + d.scale() * 0.5 * (lo + hi);
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          return d.quantile_at(p);
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          return d.quantile_at(p);
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          bool bounded = true;
          for (std::size_t i = 0; i < d.components().size(); ++i) {
            if (d.weights()[i] == 0.0) continue;
            const auto s = support(d.components()[i]);
            bounded = bounded && std::isfinite(s.first) && std::isfinite(s.second);
          }
          if (!(p >= 0.0 && p <= 1.0) || (!bounded && !(p > 0.0 && p < 1.0))) {
            throw std::domain_error("quantile: level outside the mixture domain");
          }
          double lo = std::numeric_limits<double>::infinity();
          double hi = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < d.components().size(); ++i) {
            if (d.weights()[i] == 0.0) continue;
            const double q = quantile(d.components()[i], p);
            lo = std::min(lo, q);
            hi = std::max(hi, q);
          }
          if (hi - lo <= 1e-10) return 0.5 * (lo + hi);
          const ForecastDist wrapped(d);
          // cdf(lo) <= p <= cdf(hi) by construction; bisect to 1e-10 in z.
          for (int iter = 0; iter < 200 && hi - lo > 1e-10; ++iter) {
            const double mid = 0.5 * (lo + hi);
            (cdf(wrapped, mid) < p ? lo : hi) = mid;
          }
          return 0.5 * (lo + hi);
        } else {
          return d.quantile_at(p);
        }
      },
      dist.value());
}

double pdf(const ForecastDist& dist, double z) {
  return std::visit(
      [z, &dist](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          return std_normal_pdf((z - d.mu()) / d.sigma()) / d.sigma();
        } else if constexpr (std::is_same_v<T, SkewNormalDist>) {
          return skew_normal_std_pdf((z - d.location()) / d.scale(), d.shape()) /
                 d.scale();
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          if (z < d.coeffs().front() || z > d.coeffs().back()) return 0.0;
          const double p = cdf(dist, z);
          const double der = d.quantile_derivative(p);
          return der > 0.0 ? 1.0 / der : std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          const auto& edges = d.edges();
          if (z < edges.front() || z >= edges.back()) return 0.0;
          const auto it = std::upper_bound(edges.begin(), edges.end(), z);
          const std::size_t l = static_cast<std::size_t>(it - edges.begin());
          return d.probs()[l - 1] / (edges[l] - edges[l - 1]);
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          double acc = 0.0;
          for (std::size_t i = 0; i < d.components().size(); ++i) {
            if (d.weights()[i] == 0.0) continue;
            acc += d.weights()[i] * pdf(d.components()[i], z);
          }
          return acc;
        } else {
          const auto& values = d.values();
          const auto& levels = d.levels();
          if (z < values.front() || z > values.back()) return 0.0;
          const auto it = std::upper_bound(values.begin(), values.end(), z);
          std::size_t i = static_cast<std::size_t>(it - values.begin());
          if (i == 0) return std::numeric_limits<double>::infinity();  // point mass at the left end
          if (i == values.size()) i = values.size() - 1;
          const double dv = values[i] - values[i - 1];
          if (dv <= 0.0) return std::numeric_limits<double>::infinity();
          return (levels[i] - levels[i - 1]) / dv;
        }
      },
      dist.value());
}

std::pair<double, double> support(const ForecastDist& dist) {
  return std::visit(
      [](const auto& d) -> std::pair<double, double> {
        constexpr double inf = std::numeric_limits<double>::infinity();
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist> || std::is_same_v<T, SkewNormalDist>) {
          return {-inf, inf};
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          return {d.coeffs().front(), d.coeffs().back()};
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          return {d.edges().front(), d.edges().back()};
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          double lo = inf;
          double hi = -inf;
          for (std::size_t i = 0; i < d.components().size(); ++i) {
            if (d.weights()[i] == 0.0) continue;
            const auto s = support(d.components()[i]);
            lo = std::min(lo, s.first);
            hi = std::max(hi, s.second);
          }
          return {lo, hi};
        } else {
          return {d.values().front(), d.values().back()};
        }
      },
      dist.value());
}

double sample_one(const ForecastDist& dist, Rng& rng) {
  return std::visit(
      [&rng](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          return d.mu() + d.sigma() * rng.normal();
        } else if constexpr (std::is_same_v<T, SkewNormalDist>) {
          const double delta = d.shape() / std::sqrt(1.0 + d.shape() * d.shape());
          const double u0 = rng.normal();
          const double v = rng.normal();
          const double t = delta * std::fabs(u0) + std::sqrt(1.0 - delta * delta) * v;
          return d.location() + d.scale() * t;
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          return d.quantile_at(rng.uniform());
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          return d.quantile_at(rng.uniform());
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          const double u = rng.uniform();
          double acc = 0.0;
          std::size_t pick = d.components().size() - 1;
          for (std::size_t i = 0; i < d.components().size(); ++i) {
            acc += d.weights()[i];
            if (u < acc) {
              pick = i;
              break;
            }
          }
          while (d.weights()[pick] == 0.0 && pick > 0) --pick;
          return sample_one(d.components()[pick], rng);
        } else {
          return d.quantile_at(rng.uniform());
        }
      },
      dist.value());
}

std::vector<double> sample(const ForecastDist& dist, std::size_t m,
                           std::uint64_t rng_seed) {
  if (m == 0) throw std::domain_error("sample: need at least one draw");
  Rng rng(rng_seed);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = sample_one(dist, rng);
  return out;
}

nlohmann::json to_json(const ForecastDist& dist) {
  nlohmann::json j;
  j["family"] = dist.family();
  std::visit(
      [&j](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, NormalDist>) {
          j["mu"] = d.mu();
          j["sigma"] = d.sigma();
        } else if constexpr (std::is_same_v<T, SkewNormalDist>) {
          j["location"] = d.location();
          j["scale"] = d.scale();
          j["shape"] = d.shape();
        } else if constexpr (std::is_same_v<T, BernsteinQuantileDist>) {
          j["coeffs"] = d.coeffs();
        } else if constexpr (std::is_same_v<T, HistogramDist>) {
          j["edges"] = d.edges();
          j["probs"] = d.probs();
        } else if constexpr (std::is_same_v<T, MixtureDist>) {
          nlohmann::json comps = nlohmann::json::array();
          for (const auto& c : d.components()) comps.push_back(to_json(c));
          j["components"] = std::move(comps);
          j["weights"] = d.weights();
        } else {
          j["levels"] = d.levels();
          j["values"] = d.values();
        }
      },
      dist.value());
  return j;
}

ForecastDist dist_from_json(const nlohmann::json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "normal") {
    return NormalDist(j.at("mu").get<double>(), j.at("sigma").get<double>());
  }
  if (family == "skew_normal") {
    return SkewNormalDist(j.at("location").get<double>(), j.at("scale").get<double>(),
                          j.at("shape").get<double>());
  }
  if (family == "bernstein_quantile") {
    return BernsteinQuantileDist(j.at("coeffs").get<std::vector<double>>());
  }
  if (family == "histogram") {
    return HistogramDist(j.at("edges").get<std::vector<double>>(),
                         j.at("probs").get<std::vector<double>>());
  }
  if (family == "mixture") {
    std::vector<ForecastDist> comps;
    for (const auto& c : j.at("components")) comps.push_back(dist_from_json(c));
    return MixtureDist(std::move(comps), j.at("weights").get<std::vector<double>>());
  }
  if (family == "piecewise_linear_quantile") {
    return PiecewiseLinearQuantile(j.at("levels").get<std::vector<double>>(),
                                   j.at("values").get<std::vector<double>>());
  }
  throw std::invalid_argument("unknown distribution family: " + family);
}

std::string to_json_string(const ForecastDist& dist) { return to_json(dist).dump(); }

ForecastDist dist_from_json_string(const std::string& text) {
  return dist_from_json(nlohmann::json::parse(text));
}

}  // namespace deepagg
