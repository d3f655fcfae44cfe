#pragma once

#include <span>
#include <string>

#include "deepagg/distributions.hpp"
#include "deepagg/scoring.hpp"

namespace deepagg {

// Intercept and common member weight of the quantile-combination rule
//   Q(p) = a + w0 * sum_i Q_i(p).
struct VICoefficients {
  double a = 0.0;
  double w0 = 0.0;
};

enum class AggVariant { LP, V0eq, Vaeq, V0w, Vaw };

std::string agg_variant_name(AggVariant v);
AggVariant agg_variant_from_name(const std::string& name);
bool agg_variant_estimates_a(AggVariant v);
bool agg_variant_estimates_w0(AggVariant v);

struct AggMethod {
  AggVariant variant = AggVariant::LP;
  VICoefficients coeffs{};
};

// Same-family member forecasts for one case; histogram members must share
// their edge vector.
class EnsembleForecast {
 public:
  explicit EnsembleForecast(std::vector<ForecastDist> members);
  const std::vector<ForecastDist>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  const std::string& family() const { return family_; }

 private:
  std::vector<ForecastDist> members_;
  std::string family_;
};

// Equally weighted probability-scale combination. Histogram members reduce
// exactly to one histogram with averaged bin probabilities; other families
// yield a mixture.
ForecastDist lp_aggregate(const EnsembleForecast& ens);

// a + w0 * sum_i Q_i(p); requires w0 >= 0.
double vi_quantile(const EnsembleForecast& ens, const VICoefficients& coeffs,
                   double p);

// Location-scale fast path for normal members.
NormalDist vi_normal(const EnsembleForecast& ens, const VICoefficients& coeffs);

// Coefficient-averaging fast path for Bernstein members of equal degree.
BernsteinQuantileDist vi_bqn(const EnsembleForecast& ens,
                             const VICoefficients& coeffs);

// Quantile combination of histogram members: knot levels are the union of
// the members' accumulated bin probabilities plus {0, 1}, values are the
// combined quantiles at those levels.
PiecewiseLinearQuantile vi_hen(const EnsembleForecast& ens,
                               const VICoefficients& coeffs);

// Same construction for members that are already piecewise linear quantile
// functions (knots are the union of member levels).
PiecewiseLinearQuantile vi_piecewise(const EnsembleForecast& ens,
                                     const VICoefficients& coeffs);

// Dispatches on method and member family; fixed variants fill their own
// coefficients (V0eq: a=0, w0=1/n; Vaeq: w0=1/n; V0w: a=0).
ForecastDist aggregate(const EnsembleForecast& ens, const AggMethod& method);

double delta_n(double w0, std::size_t n);

// Per-case sums over ensemble members of member quantiles on the interior
// grid tau_k = k/(K+1); row-major cases x levels.
struct QuantileSumTable {
  std::size_t cases = 0;
  int levels = 0;
  std::vector<double> sums;

  double at(std::size_t c, int k) const { return sums[c * levels + k]; }
};

QuantileSumTable build_quantile_sum_table(std::span<const EnsembleForecast> ensembles,
                                          int levels = kQuantileEvalLevels);

// CRPS-minimizing coefficients for the variant's free parameters, holding
// the member forecasts fixed. The objective is the mean quantile-grid CRPS
// over the validation cases; it is convex in (a, w0) because the combined
// quantile function is affine in them. Optimization is Nelder-Mead with w0
// kept positive through a softplus reparameterization; candidates with
// w0 < 1e-12 are rejected as degenerate point forecasts.
VICoefficients estimate_vi_from_quantile_sums(AggVariant variant,
                                              const QuantileSumTable& table,
                                              std::span<const double> observations,
                                              std::size_t n_members,
                                              double* validation_crps = nullptr);

VICoefficients estimate_vi_coefficients(AggVariant variant,
                                        std::span<const EnsembleForecast> validation_ensembles,
                                        std::span<const double> validation_observations,
                                        double* validation_crps = nullptr);

namespace detail {

struct NelderMeadResult {
  std::vector<double> x;
  double fx = 0.0;
  int iterations = 0;
};

// Minimizes f starting from x0 with per-coordinate initial steps; stops when
// the simplex objective spread drops below ftol or after max_iter steps.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> steps,
                             double ftol = 1e-6, int max_iter = 500);

}  // namespace detail

}  // namespace deepagg
