#include "deepagg/simgen.hpp"

#include <cmath>
#include <fstream>

#include "deepagg/scoring.hpp"

namespace deepagg {

namespace {

constexpr int kS1Predictors = 5;
constexpr double kS2Shape = -5.0;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct CaseDraw {
  Eigen::RowVectorXd features;
  double target = 0.0;
  ForecastDist optimal = NormalDist(0.0, 1.0);
  int indicator = -1;  // mixture regime, where the scenario has one
};

double skew_normal_draw(Rng& rng, double shape) {
  const double delta = shape / std::sqrt(1.0 + shape * shape);
  const double u0 = rng.normal();
  const double v = rng.normal();
  return delta * std::fabs(u0) + std::sqrt(1.0 - delta * delta) * v;
}

}  // namespace

std::string scenario_name(ScenarioId id) {
  switch (id) {
    case ScenarioId::S1: return "S1";
    case ScenarioId::S2: return "S2";
    case ScenarioId::S3: return "S3";
    case ScenarioId::S4: return "S4";
  }
  return "S1";
}

ScenarioId scenario_from_name(const std::string& name) {
  if (name == "S1") return ScenarioId::S1;
  if (name == "S2") return ScenarioId::S2;
  if (name == "S3") return ScenarioId::S3;
  if (name == "S4") return ScenarioId::S4;
  throw std::invalid_argument("unknown scenario: " + name);
}

void ScenarioSpec::validate() const {
  require(n_train >= 1 && n_valid >= 1 && n_test >= 1,
          "ScenarioSpec: set sizes must be positive");
}

namespace {

class ScenarioSampler {
 public:
  ScenarioSampler(const ScenarioSpec& spec, Rng& rng,
                  const std::vector<double>* fixed_beta1,
                  const std::vector<double>* fixed_beta2)
      : id_(spec.id) {
    if (id_ == ScenarioId::S1) {
      if (fixed_beta1) {
        require(fixed_beta1->size() == kS1Predictors && fixed_beta2->size() == kS1Predictors,
                "generate: coefficient vectors must have five entries");
        beta1_ = *fixed_beta1;
        beta2_ = *fixed_beta2;
      } else {
        beta1_.resize(kS1Predictors);
        beta2_.resize(kS1Predictors);
        for (double& b : beta1_) b = rng.normal();
        for (double& b : beta2_) b = 0.45 * rng.normal();
      }
    }
  }

  int feature_dim() const { return id_ == ScenarioId::S4 ? 1 : kS1Predictors; }

  const std::vector<double>& beta1() const { return beta1_; }
  const std::vector<double>& beta2() const { return beta2_; }

  // Per case the draw order is fixed: features, then the mixture
  // indicator where present, then the noise.
  CaseDraw draw(Rng& rng) const {
    CaseDraw out;
    out.features.resize(feature_dim());
    switch (id_) {
      case ScenarioId::S1: {
        double loc = 0.0;
        double logscale = 0.0;
        for (int j = 0; j < kS1Predictors; ++j) {
          const double x = rng.normal();
          out.features[j] = x;
          loc += x * beta1_[j];
          logscale += x * beta2_[j];
        }
        const double sigma = std::exp(logscale);
        out.target = loc + rng.normal() * sigma;
        out.optimal = NormalDist(loc, sigma);
        break;
      }
      case ScenarioId::S2: {
        for (int j = 0; j < kS1Predictors; ++j) out.features[j] = rng.uniform();
        const double loc = 10.0 * std::sin(2.0 * M_PI * out.features[0] * out.features[1]) +
                           20.0 * (out.features[2] - 0.5) * (out.features[2] - 0.5) +
                           10.0 * out.features[3] + 5.0 * out.features[4];
        out.target = loc + skew_normal_draw(rng, kS2Shape);
        out.optimal = SkewNormalDist(loc, 1.0, kS2Shape);
        break;
      }
      case ScenarioId::S3: {
        for (int j = 0; j < kS1Predictors; ++j) out.features[j] = rng.uniform();
        out.indicator = rng.uniform() < 0.5 ? 1 : 0;
        const double m1 = 10.0 * std::sin(2.0 * M_PI * out.features[0] * out.features[1]) +
                          10.0 * out.features[3];
        const double m2 = 20.0 * (out.features[2] - 0.5) * (out.features[2] - 0.5) +
                          5.0 * out.features[4];
        const double loc = out.indicator ? m1 : m2;
        const double sigma = out.indicator ? 1.5 : 1.0;  // variances 2.25 and 1
        out.target = loc + sigma * rng.normal();
        out.optimal = NormalDist(loc, sigma);
        break;
      }
      case ScenarioId::S4: {
        const double x = 10.0 * rng.uniform();
        out.features[0] = x;
        out.indicator = rng.uniform() < 0.5 ? 1 : 0;
        const double loc = out.indicator ? std::sin(x) : 2.0 * std::sin(1.5 * x + 1.0);
        const double sigma = out.indicator ? 0.3 : 0.8;  // variances 0.09 and 0.64
        out.target = loc + sigma * rng.normal();
        out.optimal = NormalDist(loc, sigma);
        break;
      }
    }
    return out;
  }

 private:
  ScenarioId id_;
  std::vector<double> beta1_;
  std::vector<double> beta2_;
};

GeneratedData generate_impl(const ScenarioSpec& spec,
                            const std::vector<double>* fixed_beta1,
                            const std::vector<double>* fixed_beta2) {
  spec.validate();
  Rng rng(spec.seed);
  ScenarioSampler sampler(spec, rng, fixed_beta1, fixed_beta2);
  const int dim = sampler.feature_dim();

  GeneratedData data;
  std::vector<int> pi_train;
  std::vector<int> pi_valid;
  std::vector<int> pi_test;

  auto fill = [&](Dataset& set, int count, std::vector<int>& indicators,
                  bool keep_optimal) {
    set.features.resize(count, dim);
    set.targets.resize(count);
    for (int c = 0; c < count; ++c) {
      CaseDraw d = sampler.draw(rng);
      set.features.row(c) = d.features;
      set.targets[c] = d.target;
      if (d.indicator >= 0) indicators.push_back(d.indicator);
      if (keep_optimal) data.optimal_test.push_back(std::move(d.optimal));
    }
  };

  fill(data.train, spec.n_train, pi_train, false);
  fill(data.valid, spec.n_valid, pi_valid, false);
  data.optimal_test.reserve(static_cast<std::size_t>(spec.n_test));
  fill(data.test, spec.n_test, pi_test, true);

  data.latent_state["scenario"] = scenario_name(spec.id);
  data.latent_state["seed"] = spec.seed;
  if (spec.id == ScenarioId::S1) {
    data.latent_state["beta1"] = sampler.beta1();
    data.latent_state["beta2"] = sampler.beta2();
  }
  if (spec.id == ScenarioId::S3 || spec.id == ScenarioId::S4) {
    data.latent_state["pi1"] = {{"train", pi_train}, {"valid", pi_valid}, {"test", pi_test}};
  }
  return data;
}

}  // namespace

GeneratedData generate(const ScenarioSpec& spec) {
  return generate_impl(spec, nullptr, nullptr);
}

GeneratedData generate_s1_fixed_coefficients(const ScenarioSpec& spec,
                                             const std::vector<double>& beta1,
                                             const std::vector<double>& beta2) {
  require(spec.id == ScenarioId::S1, "generate_s1_fixed_coefficients: scenario must be S1");
  return generate_impl(spec, &beta1, &beta2);
}

double optimal_crps(const ScenarioSpec& spec, const GeneratedData& data) {
  require(data.optimal_test.size() == data.test.size(),
          "optimal_crps: need one ideal forecast per test case");
  (void)spec;
  // Standardized quantile tables per (scale, shape); the skew-normal
  // quantile is affine-equivariant, so one root-finding pass serves every
  // location.
  std::vector<std::pair<std::pair<double, double>, std::vector<double>>> tables;
  auto base_quantiles = [&tables](double scale, double shape) -> const std::vector<double>& {
    for (const auto& entry : tables) {
      if (entry.first.first == scale && entry.first.second == shape) return entry.second;
    }
    std::vector<double> q(kQuantileEvalLevels);
    const ForecastDist standard = SkewNormalDist(0.0, scale, shape);
    for (int k = 0; k < kQuantileEvalLevels; ++k) {
      q[k] = quantile(standard, static_cast<double>(k + 1) / (kQuantileEvalLevels + 1));
    }
    tables.push_back({{scale, shape}, std::move(q)});
    return tables.back().second;
  };

  double total = 0.0;
  for (std::size_t c = 0; c < data.optimal_test.size(); ++c) {
    const double y = data.test.targets[static_cast<Eigen::Index>(c)];
    const ForecastDist& f = data.optimal_test[c];
    if (f.is<NormalDist>()) {
      const auto& d = f.as<NormalDist>();
      total += crps_normal(d.mu(), d.sigma(), y);
    } else if (f.is<SkewNormalDist>()) {
      const auto& d = f.as<SkewNormalDist>();
      const auto& q0 = base_quantiles(d.scale(), d.shape());
      double acc = 0.0;
      for (int k = 0; k < kQuantileEvalLevels; ++k) {
        const double tau = static_cast<double>(k + 1) / (kQuantileEvalLevels + 1);
        acc += pinball_loss(y - (d.location() + q0[k]), tau);
      }
      total += 2.0 * acc / kQuantileEvalLevels;
    } else {
      Rng rng(mix_seed(spec.seed, 0x6f7074ULL, c));
      total += crps_protocol(f, y, rng);
    }
  }
  return total / static_cast<double>(data.optimal_test.size());
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[64];
  for (int j = 0; j < data.features.cols(); ++j) out << "f" << (j + 1) << ",";
  out << "y\n";
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g,", data.features(r, j));
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g\n", data.targets[r]);
    out << buf;
  }
}

}  // namespace deepagg
