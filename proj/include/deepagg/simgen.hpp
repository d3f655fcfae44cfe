#pragma once

#include "deepagg/netlab.hpp"

namespace deepagg {

enum class ScenarioId { S1, S2, S3, S4 };

std::string scenario_name(ScenarioId id);
ScenarioId scenario_from_name(const std::string& name);

struct ScenarioSpec {
  ScenarioId id = ScenarioId::S1;
  int n_train = 6000;
  int n_valid = 2000;
  int n_test = 10000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct GeneratedData {
  Dataset train;
  Dataset valid;
  Dataset test;
  // Ideal forecast per test case: the conditional distribution of the
  // target given the generating state.
  std::vector<ForecastDist> optimal_test;
  // Hidden generating state (regression coefficients or the per-case
  // mixture indicators), exportable for independent recomputation.
  nlohmann::json latent_state;
};

// Seeded generation. Validation cases are generated from the same process
// in addition to the training cases; the train/validation split is a fixed
// prefix of the generated pool. Identical specs yield identical data.
GeneratedData generate(const ScenarioSpec& spec);

// Linear-model scenario with caller-supplied coefficient vectors (skips the
// coefficient draws); useful for homoscedastic setups where beta2 = 0.
GeneratedData generate_s1_fixed_coefficients(const ScenarioSpec& spec,
                                             const std::vector<double>& beta1,
                                             const std::vector<double>& beta2);

// Mean CRPS of the ideal forecasts over the test set: closed form for
// normal forecasts, the 100-level quantile approximation for skew-normal
// ones.
double optimal_crps(const ScenarioSpec& spec, const GeneratedData& data);

void write_dataset_csv(const std::string& path, const Dataset& data);

}  // namespace deepagg
