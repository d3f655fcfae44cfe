#include "deepagg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "deepagg/experiment.hpp"

namespace deepagg {

namespace {

namespace fs = std::filesystem;

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

// Accepts plain numbers and "a/b" fractions (the interval level is usually
// quoted as a fraction).
double parse_level(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) return std::stod(text);
  return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
}

nlohmann::json parse_override_value(const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  if (value.find(',') != std::string::npos) {
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) arr.push_back(parse_override_value(item));
    return arr;
  }
  try {
    std::size_t used = 0;
    if (value.find('.') == std::string::npos && value.find('e') == std::string::npos) {
      const long long v = std::stoll(value, &used);
      if (used == value.size()) return v;
    } else {
      const double v = std::stod(value, &used);
      if (used == value.size()) return v;
    }
  } catch (const std::exception&) {
  }
  return value;
}

// key=value with dotted paths, e.g. repetitions=3 or net.learning_rate=0.01.
void apply_override(nlohmann::json& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override must have the form key=value: " + spec);
  }
  const std::string key = spec.substr(0, eq);
  const nlohmann::json value = parse_override_value(spec.substr(eq + 1));
  nlohmann::json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

std::vector<ForecastDist> parse_distribution_array(const nlohmann::json& j,
                                                   const char* what) {
  const nlohmann::json* arr = &j;
  if (j.is_object()) {
    if (j.contains("members")) {
      arr = &j.at("members");
    } else if (j.contains("forecasts")) {
      arr = &j.at("forecasts");
    }
  }
  if (!arr->is_array() || arr->empty()) {
    throw std::invalid_argument(std::string(what) + ": expected a nonempty array");
  }
  std::vector<ForecastDist> out;
  for (const auto& item : *arr) out.push_back(dist_from_json(item));
  return out;
}

std::vector<double> read_observation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::vector<double> out;
  std::string line;
  int y_col = -1;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      first = false;
      bool numeric = true;
      try {
        (void)std::stod(cells.front());
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i] == "y") y_col = static_cast<int>(i);
        }
        if (y_col < 0 && cells.size() == 1) y_col = 0;
        if (y_col < 0) {
          throw std::invalid_argument("observations: no 'y' column in " + path);
        }
        continue;  // header consumed
      }
      y_col = cells.size() == 1 ? 0 : y_col;
      if (y_col < 0) {
        throw std::invalid_argument("observations: headerless multi-column CSV in " + path);
      }
    }
    out.push_back(std::stod(cells.at(static_cast<std::size_t>(y_col))));
  }
  if (out.empty()) throw std::invalid_argument("observations: no rows in " + path);
  return out;
}

int cmd_simulate(const std::string& config_path, const std::vector<std::string>& overrides,
                 int threads, long long seed, const std::string& out_dir) {
  nlohmann::json config_json = load_json_file(config_path);
  for (const auto& o : overrides) apply_override(config_json, o);
  if (seed >= 0) config_json["scenario"]["seed"] = static_cast<std::uint64_t>(seed);
  if (!out_dir.empty()) config_json["output_dir"] = out_dir;
  if (threads > 0) config_json["threads"] = threads;
  RunConfig config = run_config_from_json(config_json);
  config.validate();
  const RunResult result = run(config);
  write_outputs(result);
  std::size_t missing = 0;
  for (const auto& r : result.records) missing += r.missing ? 1 : 0;
  if (missing > 0) {
    std::cerr << "warning: " << missing << " cells failed and were recorded as missing\n";
  }
  std::cout << config.output_dir << "\n";
  return kExitOk;
}

int cmd_aggregate(const std::string& input_path, const std::string& method_name,
                  const std::string& coeffs_path, const std::string& validation_path,
                  const std::string& out_path, const std::string& coeffs_out_path) {
  const AggVariant variant = agg_variant_from_name(method_name);
  const EnsembleForecast ens(parse_distribution_array(load_json_file(input_path), "input"));

  AggMethod method{variant, {}};
  double validation_crps = std::numeric_limits<double>::quiet_NaN();
  const bool needs_coeffs = agg_variant_estimates_a(variant) || agg_variant_estimates_w0(variant);
  if (needs_coeffs) {
    if (!coeffs_path.empty()) {
      const nlohmann::json cj = load_json_file(coeffs_path);
      if (cj.contains("variant") && cj.at("variant").get<std::string>() != method_name) {
        throw std::invalid_argument("coefficients file was estimated for " +
                                    cj.at("variant").get<std::string>() + ", not " +
                                    method_name);
      }
      method.coeffs.a = cj.value("a", 0.0);
      method.coeffs.w0 = cj.at("w0").get<double>();
    } else if (!validation_path.empty()) {
      const nlohmann::json vj = load_json_file(validation_path);
      if (!vj.contains("cases")) {
        throw std::invalid_argument("validation file needs a 'cases' array");
      }
      std::vector<EnsembleForecast> vens;
      std::vector<double> vobs;
      for (const auto& item : vj.at("cases")) {
        vens.emplace_back(parse_distribution_array(item.at("members"), "validation members"));
        vobs.push_back(item.at("y").get<double>());
      }
      method.coeffs =
          estimate_vi_coefficients(variant, vens, vobs, &validation_crps);
    } else {
      throw std::invalid_argument("method " + method_name +
                                  " estimates coefficients; pass --coeffs or --validation");
    }
  }

  const ForecastDist aggregated = aggregate(ens, method);
  const std::string text = to_json(aggregated).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
  if (!coeffs_out_path.empty()) {
    nlohmann::json cj{{"variant", method_name},
                      {"a", method.coeffs.a},
                      {"w0", method.coeffs.w0},
                      {"n", ens.size()}};
    if (std::isfinite(validation_crps)) cj["validation_crps"] = validation_crps;
    write_text_file(coeffs_out_path, cj.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& forecasts_path, const std::string& obs_path,
                 const std::string& level_text, long long seed,
                 const std::string& out_cases, const std::string& out_report,
                 const std::string& method_label) {
  const auto forecasts = parse_distribution_array(load_json_file(forecasts_path), "forecasts");
  const auto obs = read_observation_csv(obs_path);
  if (forecasts.size() != obs.size()) {
    throw std::invalid_argument("forecast/observation count mismatch: " +
                                std::to_string(forecasts.size()) + " vs " +
                                std::to_string(obs.size()));
  }
  const double level = parse_level(level_text);
  std::vector<CaseScore> per_case;
  const EvalReport report = evaluate_forecasts(
      forecasts, obs, level, seed >= 0 ? static_cast<std::uint64_t>(seed) : 0,
      hardware_threads(), &per_case);

  std::ostringstream cases;
  cases << "case,crps,pit,pi_lower,pi_upper,median_error\n";
  char buf[160];
  for (std::size_t i = 0; i < per_case.size(); ++i) {
    const CaseScore& s = per_case[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", i, s.crps,
                  s.pit, s.pi_lower, s.pi_upper, s.median_err);
    cases << buf;
  }
  std::ostringstream rep;
  rep << "method,n,rep,mean_crps,crpss,coverage,pi_length,bias\n";
  std::snprintf(buf, sizeof(buf), "%s,0,0,%.10g,,%.10g,%.10g,%.10g\n",
                method_label.c_str(), report.mean_crps, report.pi_coverage,
                report.pi_length, report.bias);
  rep << buf;

  if (out_cases.empty()) {
    std::cout << cases.str();
  } else {
    write_text_file(out_cases, cases.str());
  }
  if (out_report.empty()) {
    std::cout << rep.str();
  } else {
    write_text_file(out_report, rep.str());
  }
  return kExitOk;
}

struct ReportCell {
  std::vector<double> crpss;
};

int cmd_report(const std::string& input_path, const std::string& out_dir) {
  std::ifstream in(input_path);
  if (!in) throw std::invalid_argument("cannot open file: " + input_path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty results file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto col = [&header, &input_path](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw std::invalid_argument("column '" + name + "' missing in " + input_path);
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_variant = col("variant");
  const std::size_t c_method = col("method");
  const std::size_t c_n = col("n");
  const std::size_t c_crpss = col("crpss");

  std::map<std::string, std::map<std::string, std::map<int, ReportCell>>> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (row.size() < header.size()) continue;
    if (row[c_method] == kDeMethodName) continue;
    if (row[c_crpss].empty()) continue;
    cells[row[c_variant]][row[c_method]][std::stoi(row[c_n])].crpss.push_back(
        std::stod(row[c_crpss]));
  }
  if (cells.empty()) throw std::invalid_argument("no aggregated rows in " + input_path);

  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "report_crpss.csv");
    out << "variant,method,n,crpss_q25,crpss_median,crpss_q75\n";
    for (const auto& [variant, methods] : cells) {
      for (const auto& [method, by_n] : methods) {
        for (const auto& [n, cell] : by_n) {
          out << variant << ',' << method << ',' << n << ','
              << quantile_of(cell.crpss, 0.25) << ',' << quantile_of(cell.crpss, 0.5)
              << ',' << quantile_of(cell.crpss, 0.75) << '\n';
        }
      }
    }
  }

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  for (const auto& [variant, methods] : cells) {
    const double width = 640;
    const double height = 400;
    const double ml = 60;
    const double mr = 140;
    const double mt = 30;
    const double mb = 50;
    double lo = 0.0;
    double hi = 0.0;
    int n_min = 1 << 30;
    int n_max = 0;
    for (const auto& [method, by_n] : methods) {
      for (const auto& [n, cell] : by_n) {
        const double m = median_of(cell.crpss);
        lo = std::min(lo, m);
        hi = std::max(hi, m);
        n_min = std::min(n_min, n);
        n_max = std::max(n_max, n);
      }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double span = hi - lo;
    lo -= 0.05 * span;
    hi += 0.05 * span;
    auto xs = [&](double n) {
      return ml + (width - ml - mr) * (n - n_min) / std::max(1, n_max - n_min);
    };
    auto ys = [&](double v) { return mt + (height - mt - mb) * (hi - v) / (hi - lo); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << ys(0.0) << "\" x2=\"" << width - mr
        << "\" y2=\"" << ys(0.0) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">ensemble size n</text>\n";
    svg << "<text x=\"16\" y=\"" << height / 2
        << "\" font-size=\"13\" transform=\"rotate(-90 16 " << height / 2
        << ")\" text-anchor=\"middle\">median CRPSS</text>\n";
    for (double v : {lo + 0.1 * (hi - lo), (lo + hi) / 2, hi - 0.1 * (hi - lo)}) {
      char lab[32];
      std::snprintf(lab, sizeof(lab), "%.3f", v);
      svg << "<text x=\"" << ml - 6 << "\" y=\"" << ys(v) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";
    }
    std::size_t ci = 0;
    for (const auto& [method, by_n] : methods) {
      const char* color = kColors[ci % 6];
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& [n, cell] : by_n) {
        svg << xs(n) << ',' << ys(median_of(cell.crpss)) << ' ';
      }
      svg << "\"/>\n";
      svg << "<text x=\"" << width - mr + 10 << "\" y=\"" << mt + 16 * (ci + 1)
          << "\" font-size=\"12\" fill=\"" << color << "\">" << method << "</text>\n";
      ++ci;
    }
    svg << "</svg>\n";
    write_text_file((fs::path(out_dir) / ("crpss_" + variant + ".svg")).string(), svg.str());
  }
  std::cout << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"distribution-forecast aggregation for network ensembles"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run the simulation study from a config file");
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  long long seed = -1;
  std::string out_dir;
  sim->add_option("--config", config_path, "JSON run configuration")->required();
  sim->add_option("--overrides", overrides, "key=value config overrides (dotted paths)");
  sim->add_option("--threads", threads, "worker threads (default: all)");
  sim->add_option("--seed", seed, "override the scenario seed");
  sim->add_option("--out", out_dir, "override the output directory");

  auto* agg = app.add_subcommand("aggregate", "combine an ensemble file into one forecast");
  std::string agg_input;
  std::string agg_method;
  std::string agg_coeffs;
  std::string agg_validation;
  std::string agg_out;
  std::string agg_coeffs_out;
  agg->add_option("--input", agg_input, "ensemble JSON ({\"members\": [...]})")->required();
  agg->add_option("--method", agg_method, "LP, V0eq, Vaeq, V0w or Vaw")->required();
  agg->add_option("--coeffs", agg_coeffs, "coefficients JSON for estimated variants");
  agg->add_option("--validation", agg_validation,
                  "validation JSON ({\"cases\": [{\"members\": [...], \"y\": ...}]})");
  agg->add_option("--out", agg_out, "output file (default: stdout)");
  agg->add_option("--coeffs-out", agg_coeffs_out, "persist the used coefficients");

  auto* eval = app.add_subcommand("evaluate", "score forecasts against observations");
  std::string eval_forecasts;
  std::string eval_obs;
  std::string eval_level = "19/21";
  long long eval_seed = 0;
  std::string eval_out_cases;
  std::string eval_out_report;
  std::string eval_label = "eval";
  eval->add_option("--forecasts", eval_forecasts, "forecast JSON array")->required();
  eval->add_option("--observations", eval_obs, "observations CSV (y column)")->required();
  eval->add_option("--level", eval_level, "interval level (number or fraction)");
  eval->add_option("--seed", eval_seed, "seed for sample-based scoring and PIT");
  eval->add_option("--out-cases", eval_out_cases, "per-case CSV output path");
  eval->add_option("--out-report", eval_out_report, "aggregate report CSV output path");
  eval->add_option("--method-label", eval_label, "method name in the report row");

  auto* rep = app.add_subcommand("report", "summary tables and CRPSS charts from results.csv");
  std::string rep_input;
  std::string rep_out = "report";
  rep->add_option("--input", rep_input, "results.csv from 'simulate'")->required();
  rep->add_option("--out", rep_out, "report output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return kExitOk;
    }
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, overrides, threads, seed, out_dir);
    if (agg->parsed()) {
      return cmd_aggregate(agg_input, agg_method, agg_coeffs, agg_validation, agg_out,
                           agg_coeffs_out);
    }
    if (eval->parsed()) {
      return cmd_evaluate(eval_forecasts, eval_obs, eval_level, eval_seed, eval_out_cases,
                          eval_out_report, eval_label);
    }
    if (rep->parsed()) return cmd_report(rep_input, rep_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace deepagg
