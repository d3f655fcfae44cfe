#pragma once

#include <array>

#include "deepagg/aggregation.hpp"
#include "deepagg/simgen.hpp"

namespace deepagg {

inline constexpr const char* kDeMethodName = "DE";

struct RunConfig {
  ScenarioSpec scenario;
  std::vector<Head> variants{Head::DRN, Head::BQN, Head::HEN};
  std::vector<AggVariant> methods{AggVariant::LP, AggVariant::V0eq, AggVariant::Vaeq,
                                  AggVariant::V0w, AggVariant::Vaw};
  int max_members = 20;
  std::vector<int> sizes{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  int repetitions = 10;
  NetConfig net;
  std::string output_dir = "deepagg_out";
  int threads = 0;  // 0: all hardware threads

  void validate() const;
  // The source study's grid: 50 repetitions, 40 members, sizes 2,4,...,40.
  static RunConfig paper_scale();
};

nlohmann::json run_config_to_json(const RunConfig& config);
// Strict parse: unknown keys raise std::invalid_argument naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);

// One evaluated configuration cell. The DE row (method "DE", n =
// max_members) carries the member-average metrics that serve as the skill
// reference; aggregated rows at size n are referenced against the average
// score of members 1..n, so cells do not change when the pool grows.
struct CellRecord {
  int rep = 0;
  Head variant = Head::DRN;
  std::string method;
  int n = 0;
  EvalReport report;  // pit_values retained only for the pit.csv subset
  std::array<std::int64_t, kPitHistogramBins> pit_hist{};
  double a = std::numeric_limits<double>::quiet_NaN();
  double w0 = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();
  double validation_crps = std::numeric_limits<double>::quiet_NaN();
  bool missing = false;
  std::string error;
};

struct RunResult {
  RunConfig config;
  std::vector<double> optimal_crps_by_rep;
  std::vector<CellRecord> records;
};

RunResult run(const RunConfig& config);

struct SummaryRow {
  Head variant = Head::DRN;
  std::string method;
  int n = 0;
  int n_reps = 0;
  int n_missing = 0;
  double crpss_mean = 0.0;
  double crpss_q25 = 0.0;
  double crpss_median = 0.0;
  double crpss_q75 = 0.0;
  double coverage_mean = 0.0;
  double pi_length_mean = 0.0;
  double bias_mean = 0.0;
  double a_mean = std::numeric_limits<double>::quiet_NaN();
  double w0_mean = std::numeric_limits<double>::quiet_NaN();
  double delta_mean = std::numeric_limits<double>::quiet_NaN();
};

// Per (variant, method, n) across repetitions; cells missing in every
// repetition are dropped (their count still shows in n_missing of sibling
// rows is not meaningful, so they are reported via the run warnings).
std::vector<SummaryRow> summarize(const RunResult& result);

// results.csv, summary.csv, summary.json, coefficients.csv, pit.csv,
// pit_hist.csv and run_meta.json under result.config.output_dir.
void write_outputs(const RunResult& result);

// Lookup helpers used by reports and the acceptance checks.
const CellRecord* find_record(const RunResult& result, int rep, Head variant,
                              const std::string& method, int n);
std::vector<double> collect_crpss(const RunResult& result, Head variant,
                                  const std::string& method, int n);
double median_of(std::vector<double> values);
double quantile_of(std::vector<double> values, double q);

}  // namespace deepagg
