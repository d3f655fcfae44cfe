#include "deepagg/aggregation.hpp"

#include <algorithm>
#include <cmath>

namespace deepagg {

namespace {

constexpr double kKnotTol = 1e-12;
constexpr double kMinWeight = 1e-12;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string agg_variant_name(AggVariant v) {
  switch (v) {
    case AggVariant::LP: return "LP";
    case AggVariant::V0eq: return "V0eq";
    case AggVariant::Vaeq: return "Vaeq";
    case AggVariant::V0w: return "V0w";
    case AggVariant::Vaw: return "Vaw";
  }
  return "LP";
}

AggVariant agg_variant_from_name(const std::string& name) {
  if (name == "LP") return AggVariant::LP;
  if (name == "V0eq") return AggVariant::V0eq;
  if (name == "Vaeq") return AggVariant::Vaeq;
  if (name == "V0w") return AggVariant::V0w;
  if (name == "Vaw") return AggVariant::Vaw;
  throw std::invalid_argument("unknown aggregation method: " + name);
}

bool agg_variant_estimates_a(AggVariant v) {
  return v == AggVariant::Vaeq || v == AggVariant::Vaw;
}

bool agg_variant_estimates_w0(AggVariant v) {
  return v == AggVariant::V0w || v == AggVariant::Vaw;
}

EnsembleForecast::EnsembleForecast(std::vector<ForecastDist> members)
    : members_(std::move(members)) {
  require(!members_.empty(), "EnsembleForecast: need at least one member");
  family_ = members_.front().family();
  for (const auto& m : members_) {
    require(m.family() == family_, "EnsembleForecast: members must share one family");
  }
  if (members_.front().is<HistogramDist>()) {
    const auto& edges = members_.front().as<HistogramDist>().edges();
    for (const auto& m : members_) {
      require(m.as<HistogramDist>().edges() == edges,
              "EnsembleForecast: histogram members must share their edges");
    }
  }
}

ForecastDist lp_aggregate(const EnsembleForecast& ens) {
  const std::size_t n = ens.size();
  const double w = 1.0 / static_cast<double>(n);
  if (ens.members().front().is<HistogramDist>()) {
    const auto& first = ens.members().front().as<HistogramDist>();
    std::vector<double> probs(first.probs().size(), 0.0);
    for (const auto& m : ens.members()) {
      const auto& p = m.as<HistogramDist>().probs();
      for (std::size_t l = 0; l < probs.size(); ++l) probs[l] += w * p[l];
    }
    return HistogramDist(first.edges(), std::move(probs));
  }
  return MixtureDist(ens.members(), std::vector<double>(n, w));
}

double vi_quantile(const EnsembleForecast& ens, const VICoefficients& coeffs,
                   double p) {
  require(coeffs.w0 >= 0.0, "vi_quantile: weight must be nonnegative");
  double acc = 0.0;
  for (const auto& m : ens.members()) acc += quantile(m, p);
  return coeffs.a + coeffs.w0 * acc;
}

NormalDist vi_normal(const EnsembleForecast& ens, const VICoefficients& coeffs) {
  require(coeffs.w0 >= 0.0, "vi_normal: weight must be nonnegative");
  double mu_sum = 0.0;
  double sigma_sum = 0.0;
  for (const auto& m : ens.members()) {
    const auto& d = m.as<NormalDist>();
    mu_sum += d.mu();
    sigma_sum += d.sigma();
  }
  const double sigma = coeffs.w0 * sigma_sum;
  if (!(sigma > 0.0)) {
    throw std::domain_error("vi_normal: combined scale is degenerate (w0 = 0)");
  }
  return NormalDist(coeffs.a + coeffs.w0 * mu_sum, sigma);
}

BernsteinQuantileDist vi_bqn(const EnsembleForecast& ens,
                             const VICoefficients& coeffs) {
  require(coeffs.w0 >= 0.0, "vi_bqn: weight must be nonnegative");
  const auto& first = ens.members().front().as<BernsteinQuantileDist>();
  const std::size_t len = first.coeffs().size();
  std::vector<double> combined(len, 0.0);
  for (const auto& m : ens.members()) {
    const auto& c = m.as<BernsteinQuantileDist>().coeffs();
    if (c.size() != len) {
      throw std::invalid_argument("vi_bqn: members must share the polynomial degree");
    }
    for (std::size_t j = 0; j < len; ++j) combined[j] += c[j];
  }
  for (double& c : combined) c = coeffs.a + coeffs.w0 * c;
  return BernsteinQuantileDist(std::move(combined));
}

namespace {

PiecewiseLinearQuantile vi_from_knot_levels(const EnsembleForecast& ens,
                                            const VICoefficients& coeffs,
                                            std::vector<double> raw_levels) {
  std::sort(raw_levels.begin(), raw_levels.end());
  std::vector<double> levels;
  levels.reserve(raw_levels.size() + 2);
  levels.push_back(0.0);
  for (double v : raw_levels) {
    if (v > levels.back() + kKnotTol && v < 1.0 - kKnotTol) levels.push_back(v);
  }
  levels.push_back(1.0);
  std::vector<double> values(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k) {
    values[k] = vi_quantile(ens, coeffs, levels[k]);
    if (k > 0 && values[k] < values[k - 1]) values[k] = values[k - 1];
  }
  return PiecewiseLinearQuantile(std::move(levels), std::move(values));
}

}  // namespace

PiecewiseLinearQuantile vi_hen(const EnsembleForecast& ens,
                               const VICoefficients& coeffs) {
  require(ens.members().front().is<HistogramDist>(),
          "vi_hen: members must be histograms");
  std::vector<double> raw;
  for (const auto& m : ens.members()) {
    const auto& cum = m.as<HistogramDist>().accumulated();
    raw.insert(raw.end(), cum.begin(), cum.end());
  }
  return vi_from_knot_levels(ens, coeffs, std::move(raw));
}

PiecewiseLinearQuantile vi_piecewise(const EnsembleForecast& ens,
                                     const VICoefficients& coeffs) {
  if (ens.members().front().is<HistogramDist>()) return vi_hen(ens, coeffs);
  require(ens.members().front().is<PiecewiseLinearQuantile>(),
          "vi_piecewise: members must be histograms or piecewise linear quantiles");
  std::vector<double> raw;
  for (const auto& m : ens.members()) {
    const auto& lv = m.as<PiecewiseLinearQuantile>().levels();
    raw.insert(raw.end(), lv.begin(), lv.end());
  }
  return vi_from_knot_levels(ens, coeffs, std::move(raw));
}

ForecastDist aggregate(const EnsembleForecast& ens, const AggMethod& method) {
  if (method.variant == AggVariant::LP) return lp_aggregate(ens);
  const double eq = 1.0 / static_cast<double>(ens.size());
  VICoefficients c = method.coeffs;
  switch (method.variant) {
    case AggVariant::V0eq: c = {0.0, eq}; break;
    case AggVariant::Vaeq: c.w0 = eq; break;
    case AggVariant::V0w: c.a = 0.0; break;
    default: break;
  }
  const auto& first = ens.members().front();
  if (first.is<NormalDist>()) return vi_normal(ens, c);
  if (first.is<BernsteinQuantileDist>()) return vi_bqn(ens, c);
  if (first.is<HistogramDist>() || first.is<PiecewiseLinearQuantile>()) {
    return vi_piecewise(ens, c);
  }
  throw std::invalid_argument("aggregate: quantile combination not supported for family " +
                              first.family());
}

double delta_n(double w0, std::size_t n) {
  if (n < 1) throw std::domain_error("delta_n: n must be at least 1");
  return static_cast<double>(n) * w0 - 1.0;
}

QuantileSumTable build_quantile_sum_table(std::span<const EnsembleForecast> ensembles,
                                          int levels) {
  QuantileSumTable table;
  table.cases = ensembles.size();
  table.levels = levels;
  table.sums.assign(table.cases * static_cast<std::size_t>(levels), 0.0);
  for (std::size_t c = 0; c < table.cases; ++c) {
    double* row = table.sums.data() + c * static_cast<std::size_t>(levels);
    for (const auto& m : ensembles[c].members()) {
      for (int k = 0; k < levels; ++k) {
        const double tau = static_cast<double>(k + 1) / (levels + 1);
        row[k] += quantile(m, tau);
      }
    }
  }
  return table;
}

namespace detail {

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> steps,
                             double ftol, int max_iter) {
  const std::size_t dim = x0.size();
  std::vector<std::vector<double>> simplex(dim + 1, x0);
  for (std::size_t i = 0; i < dim; ++i) simplex[i + 1][i] += steps[i];
  std::vector<double> fx(dim + 1);
  for (std::size_t i = 0; i <= dim; ++i) fx[i] = f(simplex[i]);

  std::vector<std::size_t> order(dim + 1);
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    for (std::size_t i = 0; i <= dim; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&fx](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[dim > 0 ? dim - 1 : 0];
    if (std::isfinite(fx[worst]) && fx[worst] - fx[best] < ftol) break;

    std::vector<double> centroid(dim, 0.0);
    for (std::size_t i = 0; i <= dim; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < dim; ++k) centroid[k] += simplex[i][k];
    }
    for (double& c : centroid) c /= static_cast<double>(dim);

    auto point = [&](double t) {
      std::vector<double> x(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        x[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
      }
      return x;
    };

    const auto reflected = point(-1.0);
    const double fr = f(reflected);
    if (fr < fx[best]) {
      const auto expanded = point(-2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        fx[worst] = fe;
      } else {
        simplex[worst] = reflected;
        fx[worst] = fr;
      }
      continue;
    }
    if (fr < fx[second_worst]) {
      simplex[worst] = reflected;
      fx[worst] = fr;
      continue;
    }
    const auto contracted = point(fr < fx[worst] ? -0.5 : 0.5);
    const double fc = f(contracted);
    if (fc < std::min(fr, fx[worst])) {
      simplex[worst] = contracted;
      fx[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= dim; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < dim; ++k) {
        simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
      }
      fx[i] = f(simplex[i]);
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i <= dim; ++i) {
    if (fx[i] < fx[best]) best = i;
  }
  return NelderMeadResult{simplex[best], fx[best], iter};
}

}  // namespace detail

namespace {

double table_objective(const QuantileSumTable& table, std::span<const double> obs,
                       double a, double w0) {
  const int K = table.levels;
  double total = 0.0;
  for (std::size_t c = 0; c < table.cases; ++c) {
    const double* row = table.sums.data() + c * static_cast<std::size_t>(K);
    const double y = obs[c];
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      const double tau = static_cast<double>(k + 1) / (K + 1);
      acc += pinball_loss(y - (a + w0 * row[k]), tau);
    }
    total += 2.0 * acc / K;
  }
  return total / static_cast<double>(table.cases);
}

}  // namespace

VICoefficients estimate_vi_from_quantile_sums(AggVariant variant,
                                              const QuantileSumTable& table,
                                              std::span<const double> observations,
                                              std::size_t n_members,
                                              double* validation_crps) {
  if (table.cases == 0 || observations.empty()) {
    throw std::domain_error("estimate_vi_coefficients: empty validation set");
  }
  if (table.cases != observations.size()) {
    throw std::invalid_argument("estimate_vi_coefficients: table/observation mismatch");
  }
  if (n_members == 0) {
    throw std::domain_error("estimate_vi_coefficients: empty ensemble");
  }
  const double eq = 1.0 / static_cast<double>(n_members);
  VICoefficients result{0.0, eq};
  if (variant == AggVariant::LP || variant == AggVariant::V0eq) {
    if (validation_crps) *validation_crps = table_objective(table, observations, 0.0, eq);
    return result;
  }

  const bool est_a = agg_variant_estimates_a(variant);
  const bool est_w = agg_variant_estimates_w0(variant);
  auto objective = [&](std::span<const double> x) {
    double a = 0.0;
    double w0 = eq;
    std::size_t idx = 0;
    if (est_a) a = x[idx++];
    if (est_w) {
      w0 = softplus(x[idx]);
      if (w0 < kMinWeight) return std::numeric_limits<double>::infinity();
    }
    return table_objective(table, observations, a, w0);
  };

  std::vector<double> x0;
  std::vector<double> steps;
  if (est_a) {
    x0.push_back(0.0);
    steps.push_back(0.5);
  }
  if (est_w) {
    x0.push_back(softplus_inv(eq));
    steps.push_back(0.25);
  }
  const auto fit = detail::nelder_mead(objective, std::move(x0), std::move(steps));
  std::size_t idx = 0;
  if (est_a) result.a = fit.x[idx++];
  if (est_w) result.w0 = softplus(fit.x[idx]);
  if (validation_crps) *validation_crps = fit.fx;
  return result;
}

VICoefficients estimate_vi_coefficients(AggVariant variant,
                                        std::span<const EnsembleForecast> validation_ensembles,
                                        std::span<const double> validation_observations,
                                        double* validation_crps) {
  if (validation_ensembles.empty()) {
    throw std::domain_error("estimate_vi_coefficients: empty validation set");
  }
  if (validation_ensembles.size() != validation_observations.size()) {
    throw std::invalid_argument(
        "estimate_vi_coefficients: ensemble/observation count mismatch");
  }
  const std::size_t n = validation_ensembles.front().size();
  for (const auto& ens : validation_ensembles) {
    if (ens.size() != n) {
      throw std::invalid_argument(
          "estimate_vi_coefficients: ensembles must share the member count");
    }
  }
  const auto table = build_quantile_sum_table(validation_ensembles);
  return estimate_vi_from_quantile_sums(variant, table, validation_observations, n,
                                        validation_crps);
}

}  // namespace deepagg
