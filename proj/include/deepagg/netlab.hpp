#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <span>
#include <string>

#include "deepagg/distributions.hpp"

namespace deepagg {

enum class Head { DRN, BQN, HEN };

std::string head_name(Head h);
Head head_from_name(const std::string& name);

inline constexpr double kSigmaFloor = 1e-4;
inline constexpr int kBqnPinballLevels = 99;

struct NetConfig {
  std::vector<int> hidden_sizes{64, 32};
  std::string activation = "softplus";  // softplus | relu | tanh
  Head head = Head::DRN;
  int bqn_degree = 12;
  std::vector<double> hen_edges;  // required for HEN
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 150;
  int patience = 10;
  std::uint64_t seed = 1;

  void validate() const;
  int head_dim() const;
};

struct Dataset {
  Eigen::MatrixXd features;  // cases x predictors
  Eigen::VectorXd targets;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& msg, int epoch)
      : std::runtime_error(msg), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainInfo {
  int epochs_run = 0;
  double first_epoch_train_loss = 0.0;
  double final_train_loss = 0.0;
  double best_valid_loss = 0.0;
  std::size_t clamped_targets = 0;  // HEN targets outside the edge range
};

// Basis values B_{j,degree}(tau) for each requested level; rows follow taus.
Eigen::MatrixXd bernstein_basis(int degree, std::span<const double> taus);

// Head output transforms applied to raw network outputs.
void drn_transform(const double* raw, double& mu, double& sigma);
std::vector<double> bqn_transform(std::span<const double> raw);
std::vector<double> hen_transform(std::span<const double> raw);

// Pre-sized loss context for one head; shared across cases.
struct HeadContext {
  Head head = Head::DRN;
  std::vector<double> pinball_levels;  // BQN
  Eigen::MatrixXd basis;               // BQN: levels x (degree+1)
  std::vector<double> hen_edges;       // HEN

  static HeadContext make(const NetConfig& config);
};

// Loss on raw head outputs with optional analytic gradient; clamped is
// incremented when a HEN target falls outside the edge range.
double head_loss(const HeadContext& ctx, std::span<const double> raw, double y,
                 double* grad_raw, std::size_t* clamped);

class NetModel {
 public:
  NetModel() = default;

  // Glorot-uniform weights from the config seed; zero biases.
  static NetModel initialized(const NetConfig& config, int input_dim);

  const NetConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }
  const TrainInfo& train_info() const { return info_; }

  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  void set_standardizer(const Eigen::VectorXd& mean, const Eigen::VectorXd& std);
  const Eigen::VectorXd& feature_mean() const { return feature_mean_; }
  const Eigen::VectorXd& feature_std() const { return feature_std_; }

  // Raw head outputs, one row per case.
  Eigen::MatrixXd forward_raw(const Eigen::MatrixXd& X) const;
  // Head-transformed parameters: DRN (mu, sigma); BQN coefficients; HEN
  // bin probabilities.
  Eigen::MatrixXd forward_params(const Eigen::MatrixXd& X) const;
  std::vector<ForecastDist> forward(const Eigen::MatrixXd& X) const;

  // Mean loss over a dataset (no gradient).
  double dataset_loss(const Dataset& data, std::size_t* clamped = nullptr) const;

  // Loss of a single case together with gradients for every weight and
  // bias; gradient buffers are resized to match the model.
  double case_loss_grad(const Eigen::RowVectorXd& x, double y,
                        std::vector<Eigen::MatrixXd>& grad_w,
                        std::vector<Eigen::VectorXd>& grad_b) const;

  void save(std::ostream& out) const;
  static NetModel load(std::istream& in);
  std::string serialize() const;
  static NetModel deserialize(const std::string& bytes);

  friend NetModel train_member(const NetConfig&, const Dataset&, const Dataset&);

 private:
  NetConfig config_;
  int input_dim_ = 0;
  std::vector<Eigen::MatrixXd> weights_;  // out x in per layer
  std::vector<Eigen::VectorXd> biases_;
  Eigen::VectorXd feature_mean_;
  Eigen::VectorXd feature_std_;
  TrainInfo info_;
};

ForecastDist head_distribution(Head head, std::span<const double> params,
                               const std::vector<double>& hen_edges);

// Mini-batch Adam with early stopping on the validation loss; restores the
// best validation weights. Deterministic given the config seed.
NetModel train_member(const NetConfig& config, const Dataset& train,
                      const Dataset& valid);

// Members i = 0..n-1 train from seeds config.seed + i, so a prefix of the
// returned pool is reproducible independently of n.
std::vector<NetModel> train_ensemble(const NetConfig& config, const Dataset& train,
                                     const Dataset& valid, int n, int threads = 1);

// Edge candidates at the 51 empirical target quantiles j/50, rounded to two
// decimals and deduplicated.
std::vector<double> hen_edges_from_targets(std::span<const double> targets);

}  // namespace deepagg
