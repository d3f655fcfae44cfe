#include "deepagg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace deepagg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

int pit_bin(double u) {
  const int b = static_cast<int>(u * kPitHistogramBins);
  return std::clamp(b, 0, kPitHistogramBins - 1);
}

// Type-7 empirical quantile of a sorted sample.
double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  double v = sorted[lo];
  if (lo + 1 < sorted.size()) v += frac * (sorted[lo + 1] - sorted[lo]);
  return v;
}

// Histogram quantile on raw accumulated-probability rows.
double hist_quantile_row(const double* cum, std::size_t nbins,
                         const std::vector<double>& edges, double p) {
  const double* end = cum + nbins;
  const double* it = std::lower_bound(cum, end, p);
  std::size_t l = std::min(static_cast<std::size_t>(it - cum), nbins - 1);
  const double prev = l >= 1 ? cum[l - 1] : 0.0;
  const double width = cum[l] - prev;
  if (width <= 0.0 || p <= prev) return edges[l];
  return edges[l] + (edges[l + 1] - edges[l]) * (p - prev) / width;
}

double hist_cdf_row(const double* cum, std::size_t nbins,
                    const std::vector<double>& edges, double z) {
  if (z <= edges.front()) return 0.0;
  if (z >= edges.back()) return 1.0;
  const auto it = std::upper_bound(edges.begin(), edges.end(), z);
  const std::size_t l = static_cast<std::size_t>(it - edges.begin());
  const double base = l >= 2 ? cum[l - 2] : 0.0;
  const double p = cum[l - 1] - base;
  return base + p * (z - edges[l - 1]) / (edges[l] - edges[l - 1]);
}

// Bernstein CDF by bisection on the combined coefficient vector.
double bernstein_cdf(const double* coeffs, std::size_t m, double z) {
  if (z < coeffs[0]) return 0.0;
  if (z >= coeffs[m - 1]) return 1.0;
  double buf[64];
  double lo = 0.0;
  double hi = 1.0;
  for (int iter = 0; iter < 53; ++iter) {
    const double p = 0.5 * (lo + hi);
    std::copy(coeffs, coeffs + m, buf);
    for (std::size_t k = m - 1; k >= 1; --k) {
      for (std::size_t j = 0; j < k; ++j) buf[j] += p * (buf[j + 1] - buf[j]);
    }
    (buf[0] <= z ? lo : hi) = p;
  }
  return 0.5 * (lo + hi);
}

double bernstein_eval(const double* coeffs, std::size_t m, double p) {
  double buf[64];
  std::copy(coeffs, coeffs + m, buf);
  for (std::size_t k = m - 1; k >= 1; --k) {
    for (std::size_t j = 0; j < k; ++j) buf[j] += p * (buf[j + 1] - buf[j]);
  }
  return buf[0];
}

struct CellStats {
  EvalReport report;
  std::array<std::int64_t, kPitHistogramBins> pit_hist{};
};

CellStats reduce_scores(const std::vector<CaseScore>& scores,
                        const Eigen::VectorXd& obs, bool retain_pit) {
  CellStats stats;
  const std::size_t n = scores.size();
  std::size_t covered = 0;
  if (retain_pit) stats.report.pit_values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CaseScore& s = scores[i];
    stats.report.mean_crps += s.crps;
    stats.report.pi_length += s.pi_upper - s.pi_lower;
    stats.report.bias += s.median_err;
    const double y = obs[static_cast<Eigen::Index>(i)];
    if (y >= s.pi_lower && y <= s.pi_upper) ++covered;
    ++stats.pit_hist[static_cast<std::size_t>(pit_bin(s.pit))];
    if (retain_pit) stats.report.pit_values.push_back(s.pit);
  }
  const double dn = static_cast<double>(n);
  stats.report.mean_crps /= dn;
  stats.report.pi_length /= dn;
  stats.report.bias /= dn;
  stats.report.pi_coverage = static_cast<double>(covered) / dn;
  stats.report.n_cases = n;
  return stats;
}

template <class CaseEval>
CellStats run_cell(const Eigen::VectorXd& obs, int threads, std::uint64_t cell_seed,
                   bool retain_pit, CaseEval&& eval) {
  const std::size_t n = static_cast<std::size_t>(obs.size());
  std::vector<CaseScore> scores(n);
  parallel_for_chunks(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      Rng rng(mix_seed(cell_seed, c));
      scores[c] = eval(c, rng);
    }
  });
  return reduce_scores(scores, obs, retain_pit);
}

// Per-repetition evaluation state for one network variant. Member forecast
// parameters live in per-member matrices; prefix accumulators advance with
// the ensemble size so each size-n cell sees exactly members 1..n.
class VariantEval {
 public:
  VariantEval(Head head, const NetConfig& net, std::vector<NetModel> members,
              const GeneratedData& data, int threads)
      : head_(head), edges_(net.hen_edges), data_(&data), threads_(threads) {
    const int K = kQuantileEvalLevels;
    taus_.resize(K);
    for (int k = 0; k < K; ++k) taus_[k] = static_cast<double>(k + 1) / (K + 1);
    if (head_ == Head::DRN) {
      z_grid_.resize(K);
      for (int k = 0; k < K; ++k) z_grid_[k] = std_normal_quantile(taus_[k]);
    }
    if (head_ == Head::BQN) {
      basis_ = bernstein_basis(net.bqn_degree, taus_);
    }
    for (auto& model : members) {
      if (head_ == Head::HEN) {
        hen_t_.push_back(to_cumulative_rows(model.forward_params(data.test.features)));
        hen_v_.push_back(to_cumulative_rows(model.forward_params(data.valid.features)));
        nbins_ = static_cast<std::size_t>(net.hen_edges.size()) - 1;
      } else {
        tparams_.push_back(model.forward_params(data.test.features));
        vparams_.push_back(model.forward_params(data.valid.features));
      }
    }
    init_prefix();
  }

  std::size_t pool_size() const {
    return head_ == Head::HEN ? hen_t_.size() : tparams_.size();
  }
  std::size_t test_cases() const { return static_cast<std::size_t>(data_->test.targets.size()); }

  // Extends the prefix accumulators to the first n members.
  void advance(int n) {
    for (int i = n_cur_; i < n; ++i) add_member(i);
    if (head_ == Head::BQN) {
      test_grid_ = coeff_t_ * basis_.transpose();
    }
  }

  const QuantileSumTable& valid_table() {
    const std::size_t cases = static_cast<std::size_t>(data_->valid.targets.size());
    if (head_ == Head::HEN) return qs_v_;
    scratch_table_.cases = cases;
    scratch_table_.levels = kQuantileEvalLevels;
    scratch_table_.sums.resize(cases * static_cast<std::size_t>(kQuantileEvalLevels));
    if (head_ == Head::DRN) {
      for (std::size_t c = 0; c < cases; ++c) {
        double* row = scratch_table_.sums.data() + c * kQuantileEvalLevels;
        for (int k = 0; k < kQuantileEvalLevels; ++k) {
          row[k] = mu_v_[static_cast<Eigen::Index>(c)] +
                   sg_v_[static_cast<Eigen::Index>(c)] * z_grid_[static_cast<std::size_t>(k)];
        }
      }
    } else {
      const Eigen::MatrixXd grid = coeff_v_ * basis_.transpose();
      for (std::size_t c = 0; c < cases; ++c) {
        for (int k = 0; k < kQuantileEvalLevels; ++k) {
          scratch_table_.sums[c * kQuantileEvalLevels + static_cast<std::size_t>(k)] =
              grid(static_cast<Eigen::Index>(c), k);
        }
      }
    }
    return scratch_table_;
  }

  // CRPS on the tau grid from the prefix quantile sums.
  double grid_crps(std::size_t c, double a, double w0, double y) const {
    const int K = kQuantileEvalLevels;
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      acc += pinball_loss(y - (a + w0 * test_sum(c, k)), taus_[static_cast<std::size_t>(k)]);
    }
    return 2.0 * acc / K;
  }

  CaseScore eval_vi(std::size_t c, int n, const VICoefficients& coeffs, Rng& rng) const {
    (void)rng;
    const double y = data_->test.targets[static_cast<Eigen::Index>(c)];
    CaseScore s;
    const double alpha = 0.5 * (1.0 - kDefaultPiLevel);
    if (head_ == Head::DRN) {
      // Shape-preserving: the combination stays normal, so everything is
      // closed form.
      const double mu = coeffs.a + coeffs.w0 * mu_t_[static_cast<Eigen::Index>(c)];
      const double sigma = coeffs.w0 * sg_t_[static_cast<Eigen::Index>(c)];
      s.crps = crps_normal(mu, sigma, y);
      s.pit = std_normal_cdf((y - mu) / sigma);
      const double zq = std_normal_quantile(1.0 - alpha);
      s.pi_lower = mu - sigma * zq;
      s.pi_upper = mu + sigma * zq;
      s.median_err = mu - y;
      return s;
    }
    s.crps = grid_crps(c, coeffs.a, coeffs.w0, y);
    if (head_ == Head::BQN) {
      double combined[64];
      const Eigen::Index m = coeff_t_.cols();
      for (Eigen::Index j = 0; j < m; ++j) {
        combined[j] = coeffs.a + coeffs.w0 * coeff_t_(static_cast<Eigen::Index>(c), j);
      }
      const std::size_t mm = static_cast<std::size_t>(m);
      s.pit = bernstein_cdf(combined, mm, y);
      s.pi_lower = bernstein_eval(combined, mm, alpha);
      s.pi_upper = bernstein_eval(combined, mm, 1.0 - alpha);
      s.median_err = bernstein_eval(combined, mm, 0.5) - y;
      return s;
    }
    // HEN: combined quantile function evaluated through the member rows.
    const auto q_sum = [&](double p) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += hist_quantile_row(hen_row(hen_t_, i, c), nbins_, edges_, p);
      }
      return coeffs.a + coeffs.w0 * acc;
    };
    s.pit = invert_monotone(q_sum, y);
    s.pi_lower = q_sum(alpha);
    s.pi_upper = q_sum(1.0 - alpha);
    s.median_err = q_sum(0.5) - y;
    return s;
  }

  CaseScore eval_lp(std::size_t c, int n, Rng& rng) const {
    const double y = data_->test.targets[static_cast<Eigen::Index>(c)];
    const double alpha = 0.5 * (1.0 - kDefaultPiLevel);
    CaseScore s;
    if (head_ == Head::HEN) {
      // Exact: equally weighted histograms average their bin probabilities.
      const double inv_n = 1.0 / static_cast<double>(n);
      const double* pref = cum_pref_t_.data() + c * nbins_;
      std::vector<double> probs(nbins_);
      double prev = 0.0;
      for (std::size_t l = 0; l < nbins_; ++l) {
        const double cum = pref[l] * inv_n;
        probs[l] = std::max(0.0, cum - prev);
        prev = cum;
      }
      const HistogramDist lp(edges_, std::move(probs));
      s.crps = crps_histogram(lp, y);
      s.pit = lp.cdf_at(y);
      s.pi_lower = lp.quantile_at(alpha);
      s.pi_upper = lp.quantile_at(1.0 - alpha);
      s.median_err = lp.quantile_at(0.5) - y;
      return s;
    }
    // Mixture members: scored from a seeded sample, calibration from the
    // exact mixture CDF.
    std::vector<double> draws(static_cast<std::size_t>(kLpEvalSampleSize));
    for (double& x : draws) {
      const int i = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
      const double u = rng.uniform_open();
      if (head_ == Head::DRN) {
        x = tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 0) +
            tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 1) *
                std_normal_quantile(u);
      } else {
        const auto& coeffs = tparams_[static_cast<std::size_t>(i)];
        double buf[64];
        const Eigen::Index m = coeffs.cols();
        for (Eigen::Index j = 0; j < m; ++j) buf[j] = coeffs(static_cast<Eigen::Index>(c), j);
        x = bernstein_eval(buf, static_cast<std::size_t>(m), u);
      }
    }
    std::sort(draws.begin(), draws.end());
    double abs_term = 0.0;
    double spread_term = 0.0;
    const double dm = static_cast<double>(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) {
      abs_term += std::fabs(draws[i] - y);
      spread_term += (2.0 * static_cast<double>(i) - dm + 1.0) * draws[i];
    }
    s.crps = abs_term / dm - spread_term / (dm * dm);
    s.pi_lower = sorted_quantile(draws, alpha);
    s.pi_upper = sorted_quantile(draws, 1.0 - alpha);
    s.median_err = sorted_quantile(draws, 0.5) - y;
    double cdf_acc = 0.0;
    for (int i = 0; i < n; ++i) {
      if (head_ == Head::DRN) {
        const double mu = tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 0);
        const double sg = tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 1);
        cdf_acc += std_normal_cdf((y - mu) / sg);
      } else {
        const auto& coeffs = tparams_[static_cast<std::size_t>(i)];
        double buf[64];
        const Eigen::Index m = coeffs.cols();
        for (Eigen::Index j = 0; j < m; ++j) buf[j] = coeffs(static_cast<Eigen::Index>(c), j);
        cdf_acc += bernstein_cdf(buf, static_cast<std::size_t>(m), y);
      }
    }
    s.pit = cdf_acc / static_cast<double>(n);
    return s;
  }

  CaseScore eval_member(int i, std::size_t c, const Eigen::MatrixXd* member_grid,
                        Rng& rng) const {
    const double y = data_->test.targets[static_cast<Eigen::Index>(c)];
    const double alpha = 0.5 * (1.0 - kDefaultPiLevel);
    CaseScore s;
    if (head_ == Head::DRN) {
      const double mu = tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 0);
      const double sg = tparams_[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(c), 1);
      s.crps = crps_normal(mu, sg, y);
      s.pit = std_normal_cdf((y - mu) / sg);
      const double zq = std_normal_quantile(1.0 - alpha);
      s.pi_lower = mu - sg * zq;
      s.pi_upper = mu + sg * zq;
      s.median_err = mu - y;
      (void)rng;
      return s;
    }
    if (head_ == Head::BQN) {
      const auto& coeffs = tparams_[static_cast<std::size_t>(i)];
      double buf[64];
      const Eigen::Index m = coeffs.cols();
      for (Eigen::Index j = 0; j < m; ++j) buf[j] = coeffs(static_cast<Eigen::Index>(c), j);
      const std::size_t mm = static_cast<std::size_t>(m);
      double acc = 0.0;
      for (int k = 0; k < kQuantileEvalLevels; ++k) {
        acc += pinball_loss(y - (*member_grid)(static_cast<Eigen::Index>(c), k),
                            taus_[static_cast<std::size_t>(k)]);
      }
      s.crps = 2.0 * acc / kQuantileEvalLevels;
      s.pit = bernstein_cdf(buf, mm, y);
      s.pi_lower = bernstein_eval(buf, mm, alpha);
      s.pi_upper = bernstein_eval(buf, mm, 1.0 - alpha);
      s.median_err = bernstein_eval(buf, mm, 0.5) - y;
      return s;
    }
    const double* cum = hen_row(hen_t_, i, c);
    std::vector<double> probs(nbins_);
    double prev = 0.0;
    for (std::size_t l = 0; l < nbins_; ++l) {
      probs[l] = std::max(0.0, cum[l] - prev);
      prev = cum[l];
    }
    const HistogramDist member(edges_, std::move(probs));
    s.crps = crps_histogram(member, y);
    s.pit = member.cdf_at(y);
    s.pi_lower = member.quantile_at(alpha);
    s.pi_upper = member.quantile_at(1.0 - alpha);
    s.median_err = member.quantile_at(0.5) - y;
    (void)rng;
    return s;
  }

  // Grid of member quantiles for one BQN member (used by its own scoring).
  Eigen::MatrixXd member_grid(int i) const { return tparams_[static_cast<std::size_t>(i)] * basis_.transpose(); }

  Head head() const { return head_; }

 private:
  // Flattened row-major cumulative bin probabilities, one row per case.
  std::vector<double> to_cumulative_rows(const Eigen::MatrixXd& probs) {
    const std::size_t cases = static_cast<std::size_t>(probs.rows());
    const std::size_t bins = static_cast<std::size_t>(probs.cols());
    std::vector<double> out(cases * bins);
    for (std::size_t r = 0; r < cases; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < bins; ++l) {
        acc += probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l));
        out[r * bins + l] = acc;
      }
      out[r * bins + bins - 1] = 1.0;
    }
    return out;
  }

  const double* hen_row(const std::vector<std::vector<double>>& store, int i,
                        std::size_t c) const {
    return store[static_cast<std::size_t>(i)].data() + c * nbins_;
  }

  void init_prefix() {
    const Eigen::Index tc = data_->test.targets.size();
    const Eigen::Index vc = data_->valid.targets.size();
    if (head_ == Head::DRN) {
      mu_t_ = Eigen::VectorXd::Zero(tc);
      sg_t_ = Eigen::VectorXd::Zero(tc);
      mu_v_ = Eigen::VectorXd::Zero(vc);
      sg_v_ = Eigen::VectorXd::Zero(vc);
    } else if (head_ == Head::BQN) {
      coeff_t_ = Eigen::MatrixXd::Zero(tc, tparams_.front().cols());
      coeff_v_ = Eigen::MatrixXd::Zero(vc, vparams_.front().cols());
    } else {
      cum_pref_t_.assign(static_cast<std::size_t>(tc) * nbins_, 0.0);
      qs_t_.cases = static_cast<std::size_t>(tc);
      qs_t_.levels = kQuantileEvalLevels;
      qs_t_.sums.assign(qs_t_.cases * static_cast<std::size_t>(kQuantileEvalLevels), 0.0);
      qs_v_.cases = static_cast<std::size_t>(vc);
      qs_v_.levels = kQuantileEvalLevels;
      qs_v_.sums.assign(qs_v_.cases * static_cast<std::size_t>(kQuantileEvalLevels), 0.0);
    }
  }

  void add_member(int i) {
    if (head_ == Head::DRN) {
      mu_t_ += tparams_[static_cast<std::size_t>(i)].col(0);
      sg_t_ += tparams_[static_cast<std::size_t>(i)].col(1);
      mu_v_ += vparams_[static_cast<std::size_t>(i)].col(0);
      sg_v_ += vparams_[static_cast<std::size_t>(i)].col(1);
    } else if (head_ == Head::BQN) {
      coeff_t_ += tparams_[static_cast<std::size_t>(i)];
      coeff_v_ += vparams_[static_cast<std::size_t>(i)];
    } else {
      const auto& cum = hen_t_[static_cast<std::size_t>(i)];
      for (std::size_t idx = 0; idx < cum_pref_t_.size(); ++idx) cum_pref_t_[idx] += cum[idx];
      add_hen_quantiles(hen_t_[static_cast<std::size_t>(i)], qs_t_);
      add_hen_quantiles(hen_v_[static_cast<std::size_t>(i)], qs_v_);
    }
    n_cur_ = i + 1;
  }

  void add_hen_quantiles(const std::vector<double>& cums, QuantileSumTable& table) {
    parallel_for_chunks(table.cases, threads_, [&](std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        double* row = table.sums.data() + c * static_cast<std::size_t>(table.levels);
        const double* cum = cums.data() + c * nbins_;
        for (int k = 0; k < table.levels; ++k) {
          row[k] += hist_quantile_row(cum, nbins_, edges_,
                                      taus_[static_cast<std::size_t>(k)]);
        }
      }
    });
  }

  double test_sum(std::size_t c, int k) const {
    if (head_ == Head::DRN) {
      return mu_t_[static_cast<Eigen::Index>(c)] +
             sg_t_[static_cast<Eigen::Index>(c)] * z_grid_[static_cast<std::size_t>(k)];
    }
    if (head_ == Head::BQN) {
      return test_grid_(static_cast<Eigen::Index>(c), k);
    }
    return qs_t_.sums[c * static_cast<std::size_t>(kQuantileEvalLevels) +
                      static_cast<std::size_t>(k)];
  }

  // sup{p : q(p) <= y} for a nondecreasing q.
  template <class Fn>
  double invert_monotone(Fn&& q, double y) const {
    if (y < q(0.0)) return 0.0;
    if (y >= q(1.0)) return 1.0;
    double lo = 0.0;
    double hi = 1.0;
    for (int iter = 0; iter < 53; ++iter) {
      const double p = 0.5 * (lo + hi);
      (q(p) <= y ? lo : hi) = p;
    }
    return 0.5 * (lo + hi);
  }

  Head head_;
  std::vector<double> edges_;
  const GeneratedData* data_;
  int threads_;
  std::size_t nbins_ = 0;
  std::vector<double> taus_;
  std::vector<double> z_grid_;
  Eigen::MatrixXd basis_;
  std::vector<Eigen::MatrixXd> tparams_;
  std::vector<Eigen::MatrixXd> vparams_;
  std::vector<std::vector<double>> hen_t_;
  std::vector<std::vector<double>> hen_v_;
  int n_cur_ = 0;
  Eigen::VectorXd mu_t_, sg_t_, mu_v_, sg_v_;
  Eigen::MatrixXd coeff_t_, coeff_v_;
  Eigen::MatrixXd test_grid_;
  std::vector<double> cum_pref_t_;
  QuantileSumTable qs_t_, qs_v_;
  QuantileSumTable scratch_table_;
};

}  // namespace

void RunConfig::validate() const {
  scenario.validate();
  require(!variants.empty(), "RunConfig: variants must be nonempty");
  require(!methods.empty(), "RunConfig: methods must be nonempty");
  require(repetitions >= 1, "RunConfig: repetitions must be positive");
  require(max_members >= 2, "RunConfig: max_members must be at least 2");
  require(!sizes.empty(), "RunConfig: sizes must be nonempty");
  int prev = 0;
  for (int n : sizes) {
    require(n >= 2 && n <= max_members, "RunConfig: sizes must lie in [2, max_members]");
    require(n > prev, "RunConfig: sizes must be strictly increasing");
    prev = n;
  }
  net.validate();
}

RunConfig RunConfig::paper_scale() {
  RunConfig config;
  config.repetitions = 50;
  config.max_members = 40;
  config.sizes.clear();
  for (int n = 2; n <= 40; n += 2) config.sizes.push_back(n);
  return config;
}

namespace {

std::uint64_t rep_seed(const RunConfig& config, int rep) {
  return mix_seed(config.scenario.seed, static_cast<std::uint64_t>(rep));
}

}  // namespace

RunResult run(const RunConfig& config) {
  config.validate();
  RunResult result;
  result.config = config;
  const int threads = config.threads <= 0 ? hardware_threads() : config.threads;
  const int min_size = config.sizes.front();

  for (int rep = 0; rep < config.repetitions; ++rep) {
    ScenarioSpec spec = config.scenario;
    spec.seed = rep_seed(config, rep);
    const GeneratedData data = generate(spec);
    const double opt_crps = optimal_crps(spec, data);
    result.optimal_crps_by_rep.push_back(opt_crps);

    for (std::size_t vi = 0; vi < config.variants.size(); ++vi) {
      const Head head = config.variants[vi];
      const std::uint64_t eval_base = mix_seed(spec.seed, 0xE7A1ULL, vi);

      NetConfig net = config.net;
      net.head = head;
      net.seed = mix_seed(config.net.seed, static_cast<std::uint64_t>(rep), vi);
      if (head == Head::HEN) {
        std::vector<double> targets(data.train.targets.data(),
                                    data.train.targets.data() + data.train.targets.size());
        net.hen_edges = hen_edges_from_targets(targets);
      }

      auto mark_all_missing = [&](const std::string& what) {
        CellRecord de;
        de.rep = rep;
        de.variant = head;
        de.method = kDeMethodName;
        de.n = config.max_members;
        de.missing = true;
        de.error = what;
        result.records.push_back(de);
        for (int n : config.sizes) {
          for (AggVariant method : config.methods) {
            CellRecord cell;
            cell.rep = rep;
            cell.variant = head;
            cell.method = agg_variant_name(method);
            cell.n = n;
            cell.missing = true;
            cell.error = what;
            result.records.push_back(cell);
          }
        }
      };

      std::vector<NetModel> members;
      try {
        members = train_ensemble(net, data.train, data.valid, config.max_members, threads);
      } catch (const std::exception& e) {
        std::cerr << "run: training failed (rep " << rep << ", " << head_name(head)
                  << "): " << e.what() << "\n";
        mark_all_missing(std::string("training failed: ") + e.what());
        continue;
      }

      VariantEval ev(head, net, std::move(members), data, threads);

      // Deep-ensemble baseline: average the members' scores.
      std::vector<double> member_mean_crps(ev.pool_size(), 0.0);
      CellRecord de;
      de.rep = rep;
      de.variant = head;
      de.method = kDeMethodName;
      de.n = config.max_members;
      de.report.n_cases = ev.test_cases();
      {
        double cov = 0.0;
        double len = 0.0;
        double bias = 0.0;
        for (std::size_t i = 0; i < ev.pool_size(); ++i) {
          Eigen::MatrixXd grid;
          const Eigen::MatrixXd* grid_ptr = nullptr;
          if (head == Head::BQN) {
            grid = ev.member_grid(static_cast<int>(i));
            grid_ptr = &grid;
          }
          const bool retain = rep == 0 && static_cast<int>(i) < min_size;
          CellStats stats = run_cell(
              data.test.targets, threads, mix_seed(eval_base, 1, i), retain,
              [&](std::size_t c, Rng& rng) {
                return ev.eval_member(static_cast<int>(i), c, grid_ptr, rng);
              });
          member_mean_crps[i] = stats.report.mean_crps;
          cov += stats.report.pi_coverage;
          len += stats.report.pi_length;
          bias += stats.report.bias;
          for (std::size_t b = 0; b < de.pit_hist.size(); ++b) {
            de.pit_hist[b] += stats.pit_hist[b];
          }
          if (retain) {
            de.report.pit_values.insert(de.report.pit_values.end(),
                                        stats.report.pit_values.begin(),
                                        stats.report.pit_values.end());
          }
        }
        const double pool = static_cast<double>(ev.pool_size());
        de.report.mean_crps =
            std::accumulate(member_mean_crps.begin(), member_mean_crps.end(), 0.0) / pool;
        de.report.pi_coverage = cov / pool;
        de.report.pi_length = len / pool;
        de.report.bias = bias / pool;
        de.report.crpss = 0.0;  // reference scores itself
      }
      result.records.push_back(std::move(de));

      std::vector<double> ref_prefix(ev.pool_size() + 1, 0.0);
      for (std::size_t i = 0; i < ev.pool_size(); ++i) {
        ref_prefix[i + 1] = ref_prefix[i] + member_mean_crps[i];
      }

      const std::vector<double> valid_obs(
          data.valid.targets.data(), data.valid.targets.data() + data.valid.targets.size());

      for (int n : config.sizes) {
        ev.advance(n);
        const double ref_n = ref_prefix[static_cast<std::size_t>(n)] / n;
        const QuantileSumTable* vtable = nullptr;

        for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
          const AggVariant method = config.methods[mi];
          CellRecord cell;
          cell.rep = rep;
          cell.variant = head;
          cell.method = agg_variant_name(method);
          cell.n = n;
          const std::uint64_t cell_seed = mix_seed(eval_base, 2 + mi, static_cast<std::uint64_t>(n));
          const bool retain = rep == 0 && n == min_size;
          try {
            VICoefficients coeffs{0.0, 1.0 / n};
            if (method != AggVariant::LP) {
              if (method == AggVariant::V0eq) {
                cell.validation_crps = std::numeric_limits<double>::quiet_NaN();
              } else {
                if (!vtable) vtable = &ev.valid_table();
                coeffs = estimate_vi_from_quantile_sums(method, *vtable, valid_obs,
                                                        static_cast<std::size_t>(n),
                                                        &cell.validation_crps);
              }
              cell.a = coeffs.a;
              cell.w0 = coeffs.w0;
              cell.delta = delta_n(coeffs.w0, static_cast<std::size_t>(n));
            }
            CellStats stats =
                method == AggVariant::LP
                    ? run_cell(data.test.targets, threads, cell_seed, retain,
                               [&](std::size_t c, Rng& rng) { return ev.eval_lp(c, n, rng); })
                    : run_cell(data.test.targets, threads, cell_seed, retain,
                               [&](std::size_t c, Rng& rng) {
                                 return ev.eval_vi(c, n, coeffs, rng);
                               });
            cell.report = std::move(stats.report);
            cell.pit_hist = stats.pit_hist;
            cell.report.crpss = ref_n == opt_crps
                                    ? std::numeric_limits<double>::quiet_NaN()
                                    : skill_score(cell.report.mean_crps, ref_n, opt_crps);
          } catch (const std::exception& e) {
            cell.missing = true;
            cell.error = e.what();
            std::cerr << "run: cell failed (rep " << rep << ", " << head_name(head) << ", "
                      << cell.method << ", n=" << n << "): " << e.what() << "\n";
          }
          result.records.push_back(std::move(cell));
        }
      }
    }
  }
  return result;
}

double quantile_of(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  return sorted_quantile(values, q);
}

double median_of(std::vector<double> values) { return quantile_of(std::move(values), 0.5); }

const CellRecord* find_record(const RunResult& result, int rep, Head variant,
                              const std::string& method, int n) {
  for (const auto& r : result.records) {
    if (r.rep == rep && r.variant == variant && r.method == method && r.n == n) return &r;
  }
  return nullptr;
}

std::vector<double> collect_crpss(const RunResult& result, Head variant,
                                  const std::string& method, int n) {
  std::vector<double> out;
  for (const auto& r : result.records) {
    if (r.variant == variant && r.method == method && r.n == n && !r.missing &&
        std::isfinite(r.report.crpss)) {
      out.push_back(r.report.crpss);
    }
  }
  return out;
}

std::vector<SummaryRow> summarize(const RunResult& result) {
  std::vector<SummaryRow> rows;
  auto mean_or_nan = [](const std::vector<double>& v) {
    double acc = 0.0;
    std::size_t count = 0;
    for (double x : v) {
      if (std::isfinite(x)) {
        acc += x;
        ++count;
      }
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : acc / static_cast<double>(count);
  };

  std::vector<std::string> methods;
  methods.push_back(kDeMethodName);
  for (AggVariant m : result.config.methods) methods.push_back(agg_variant_name(m));

  for (Head variant : result.config.variants) {
    for (const std::string& method : methods) {
      const bool is_de = method == kDeMethodName;
      for (int n : is_de ? std::vector<int>{result.config.max_members} : result.config.sizes) {
        std::vector<double> crpss;
        std::vector<double> coverage, length, bias, a, w0, delta;
        int present = 0;
        int missing = 0;
        for (const auto& r : result.records) {
          if (r.variant != variant || r.method != method || r.n != n) continue;
          if (r.missing) {
            ++missing;
            continue;
          }
          ++present;
          crpss.push_back(r.report.crpss);
          coverage.push_back(r.report.pi_coverage);
          length.push_back(r.report.pi_length);
          bias.push_back(r.report.bias);
          a.push_back(r.a);
          w0.push_back(r.w0);
          delta.push_back(r.delta);
        }
        if (present == 0) continue;  // all-missing cells are reported in run_meta
        SummaryRow row;
        row.variant = variant;
        row.method = method;
        row.n = n;
        row.n_reps = present;
        row.n_missing = missing;
        row.crpss_mean = mean_or_nan(crpss);
        row.crpss_q25 = quantile_of(crpss, 0.25);
        row.crpss_median = quantile_of(crpss, 0.5);
        row.crpss_q75 = quantile_of(crpss, 0.75);
        row.coverage_mean = mean_or_nan(coverage);
        row.pi_length_mean = mean_or_nan(length);
        row.bias_mean = mean_or_nan(bias);
        row.a_mean = mean_or_nan(a);
        row.w0_mean = mean_or_nan(w0);
        row.delta_mean = mean_or_nan(delta);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_outputs(const RunResult& result) {
  namespace fs = std::filesystem;
  const fs::path dir(result.config.output_dir);
  fs::create_directories(dir);
  const std::string scen = scenario_name(result.config.scenario.id);

  {
    std::ofstream out(dir / "results.csv");
    out << "scenario,variant,method,n,rep,mean_crps,crpss,coverage,pi_length,bias\n";
    for (const auto& r : result.records) {
      if (r.missing) continue;
      out << scen << ',' << head_name(r.variant) << ',' << r.method << ',' << r.n << ','
          << r.rep << ',' << fmt(r.report.mean_crps) << ',' << fmt(r.report.crpss) << ','
          << fmt(r.report.pi_coverage) << ',' << fmt(r.report.pi_length) << ','
          << fmt(r.report.bias) << '\n';
    }
  }

  {
    std::ofstream out(dir / "coefficients.csv");
    out << "variant,method,n,rep,a,w0,delta_n\n";
    for (const auto& r : result.records) {
      if (r.missing || r.method == kDeMethodName || r.method == "LP") continue;
      out << head_name(r.variant) << ',' << r.method << ',' << r.n << ',' << r.rep << ','
          << fmt(r.a) << ',' << fmt(r.w0) << ',' << fmt(r.delta) << '\n';
    }
  }

  const auto rows = summarize(result);
  {
    std::ofstream out(dir / "summary.csv");
    out << "variant,method,n,reps,missing,crpss_mean,crpss_q25,crpss_median,crpss_q75,"
           "coverage,pi_length,bias,a,w0,delta_n\n";
    for (const auto& s : rows) {
      out << head_name(s.variant) << ',' << s.method << ',' << s.n << ',' << s.n_reps << ','
          << s.n_missing << ',' << fmt(s.crpss_mean) << ',' << fmt(s.crpss_q25) << ','
          << fmt(s.crpss_median) << ',' << fmt(s.crpss_q75) << ',' << fmt(s.coverage_mean)
          << ',' << fmt(s.pi_length_mean) << ',' << fmt(s.bias_mean) << ','
          << fmt(s.a_mean) << ',' << fmt(s.w0_mean) << ',' << fmt(s.delta_mean) << '\n';
    }
  }
  {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : rows) {
      j.push_back({{"variant", head_name(s.variant)},
                   {"method", s.method},
                   {"n", s.n},
                   {"reps", s.n_reps},
                   {"missing", s.n_missing},
                   {"crpss_mean", s.crpss_mean},
                   {"crpss_q25", s.crpss_q25},
                   {"crpss_median", s.crpss_median},
                   {"crpss_q75", s.crpss_q75},
                   {"coverage", s.coverage_mean},
                   {"pi_length", s.pi_length_mean},
                   {"bias", s.bias_mean},
                   {"a", s.a_mean},
                   {"w0", s.w0_mean},
                   {"delta_n", s.delta_mean}});
    }
    std::ofstream out(dir / "summary.json");
    out << j.dump(2) << '\n';
  }

  {
    std::ofstream out(dir / "pit.csv");
    out << "scenario,variant,method,n,rep,pit\n";
    for (const auto& r : result.records) {
      for (double u : r.report.pit_values) {
        out << scen << ',' << head_name(r.variant) << ',' << r.method << ',' << r.n << ','
            << r.rep << ',' << fmt(u) << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "pit_hist.csv");
    out << "scenario,variant,method,n,rep,bin,count\n";
    for (const auto& r : result.records) {
      if (r.missing) continue;
      for (std::size_t b = 0; b < r.pit_hist.size(); ++b) {
        out << scen << ',' << head_name(r.variant) << ',' << r.method << ',' << r.n << ','
            << r.rep << ',' << b << ',' << r.pit_hist[b] << '\n';
      }
    }
  }

  {
    nlohmann::json meta;
    meta["config"] = run_config_to_json(result.config);
    meta["version"] = "0.1.0";
    const auto now = std::chrono::system_clock::now();
    meta["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    meta["optimal_crps_by_rep"] = result.optimal_crps_by_rep;
    std::vector<std::uint64_t> seeds;
    for (int rep = 0; rep < result.config.repetitions; ++rep) {
      seeds.push_back(rep_seed(result.config, rep));
    }
    meta["rep_data_seeds"] = seeds;
    meta["validation_data"] =
        "generated in addition to the training cases from the same process; "
        "the generated pool is split train-first";
    nlohmann::json missing = nlohmann::json::array();
    for (const auto& r : result.records) {
      if (!r.missing) continue;
      missing.push_back({{"rep", r.rep},
                         {"variant", head_name(r.variant)},
                         {"method", r.method},
                         {"n", r.n},
                         {"error", r.error}});
    }
    meta["missing_cells"] = missing;
    meta["pit_csv_note"] =
        "pit.csv holds raw PIT values for repetition 0 at the smallest ensemble size "
        "(DE: pooled over the first min-size members); pit_hist.csv covers every cell";
    std::ofstream out(dir / "run_meta.json");
    out << meta.dump(2) << '\n';
  }
}

nlohmann::json run_config_to_json(const RunConfig& config) {
  nlohmann::json j;
  j["scenario"] = {{"id", scenario_name(config.scenario.id)},
                   {"n_train", config.scenario.n_train},
                   {"n_valid", config.scenario.n_valid},
                   {"n_test", config.scenario.n_test},
                   {"seed", config.scenario.seed}};
  std::vector<std::string> variants;
  for (Head h : config.variants) variants.push_back(head_name(h));
  j["variants"] = variants;
  std::vector<std::string> methods;
  for (AggVariant m : config.methods) methods.push_back(agg_variant_name(m));
  j["methods"] = methods;
  j["max_members"] = config.max_members;
  j["sizes"] = config.sizes;
  j["repetitions"] = config.repetitions;
  j["net"] = {{"hidden_sizes", config.net.hidden_sizes},
              {"activation", config.net.activation},
              {"bqn_degree", config.net.bqn_degree},
              {"learning_rate", config.net.learning_rate},
              {"batch_size", config.net.batch_size},
              {"max_epochs", config.net.max_epochs},
              {"patience", config.net.patience},
              {"seed", config.net.seed}};
  j["output_dir"] = config.output_dir;
  j["threads"] = config.threads;
  return j;
}

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& prefix) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw std::invalid_argument("unknown config key: " + prefix + item.key());
    }
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig config;
  check_keys(j, {"scenario", "variants", "methods", "max_members", "sizes", "repetitions",
                 "net", "output_dir", "threads"},
             "");
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    check_keys(s, {"id", "n_train", "n_valid", "n_test", "seed"}, "scenario.");
    if (s.contains("id")) config.scenario.id = scenario_from_name(s.at("id").get<std::string>());
    if (s.contains("n_train")) config.scenario.n_train = s.at("n_train").get<int>();
    if (s.contains("n_valid")) config.scenario.n_valid = s.at("n_valid").get<int>();
    if (s.contains("n_test")) config.scenario.n_test = s.at("n_test").get<int>();
    if (s.contains("seed")) config.scenario.seed = s.at("seed").get<std::uint64_t>();
  }
  if (j.contains("variants")) {
    config.variants.clear();
    for (const auto& v : j.at("variants")) config.variants.push_back(head_from_name(v.get<std::string>()));
  }
  if (j.contains("methods")) {
    config.methods.clear();
    for (const auto& m : j.at("methods")) {
      config.methods.push_back(agg_variant_from_name(m.get<std::string>()));
    }
  }
  if (j.contains("max_members")) config.max_members = j.at("max_members").get<int>();
  if (j.contains("sizes")) config.sizes = j.at("sizes").get<std::vector<int>>();
  if (j.contains("repetitions")) config.repetitions = j.at("repetitions").get<int>();
  if (j.contains("net")) {
    const auto& n = j.at("net");
    check_keys(n, {"hidden_sizes", "activation", "bqn_degree", "learning_rate", "batch_size",
                   "max_epochs", "patience", "seed"},
               "net.");
    if (n.contains("hidden_sizes")) config.net.hidden_sizes = n.at("hidden_sizes").get<std::vector<int>>();
    if (n.contains("activation")) config.net.activation = n.at("activation").get<std::string>();
    if (n.contains("bqn_degree")) config.net.bqn_degree = n.at("bqn_degree").get<int>();
    if (n.contains("learning_rate")) config.net.learning_rate = n.at("learning_rate").get<double>();
    if (n.contains("batch_size")) config.net.batch_size = n.at("batch_size").get<int>();
    if (n.contains("max_epochs")) config.net.max_epochs = n.at("max_epochs").get<int>();
    if (n.contains("patience")) config.net.patience = n.at("patience").get<int>();
    if (n.contains("seed")) config.net.seed = n.at("seed").get<std::uint64_t>();
  }
  if (j.contains("output_dir")) config.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) config.threads = j.at("threads").get<int>();
  return config;
}

}  // namespace deepagg
