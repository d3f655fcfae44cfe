#include "deepagg/netlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace deepagg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

enum class Activation { Softplus, Relu, Tanh };

Activation activation_from_name(const std::string& name) {
  if (name == "softplus") return Activation::Softplus;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

double activate(Activation act, double z) {
  switch (act) {
    case Activation::Softplus: return softplus(z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

double activate_grad(Activation act, double z) {
  switch (act) {
    case Activation::Softplus: return sigmoid(z);
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

void apply_activation(Activation act, const Eigen::MatrixXd& z, Eigen::MatrixXd& a) {
  a = z.unaryExpr([act](double v) { return activate(act, v); });
}

}  // namespace

std::string head_name(Head h) {
  switch (h) {
    case Head::DRN: return "DRN";
    case Head::BQN: return "BQN";
    case Head::HEN: return "HEN";
  }
  return "DRN";
}

Head head_from_name(const std::string& name) {
  if (name == "DRN") return Head::DRN;
  if (name == "BQN") return Head::BQN;
  if (name == "HEN") return Head::HEN;
  throw std::invalid_argument("unknown network variant: " + name);
}

void NetConfig::validate() const {
  require(!hidden_sizes.empty(), "NetConfig: hidden_sizes must be nonempty");
  for (int h : hidden_sizes) require(h >= 1, "NetConfig: hidden sizes must be positive");
  activation_from_name(activation);
  require(learning_rate > 0.0, "NetConfig: learning_rate must be positive");
  require(batch_size >= 1, "NetConfig: batch_size must be positive");
  require(max_epochs >= 1, "NetConfig: max_epochs must be positive");
  require(patience >= 1, "NetConfig: patience must be positive");
  require(bqn_degree >= 1, "NetConfig: bqn_degree must be at least 1");
  if (head == Head::HEN) {
    require(hen_edges.size() >= 2, "NetConfig: hen_edges required for the HEN head");
    for (std::size_t i = 1; i < hen_edges.size(); ++i) {
      require(hen_edges[i] > hen_edges[i - 1],
              "NetConfig: hen_edges must be strictly increasing");
    }
  }
}

int NetConfig::head_dim() const {
  switch (head) {
    case Head::DRN: return 2;
    case Head::BQN: return bqn_degree + 1;
    case Head::HEN: return static_cast<int>(hen_edges.size()) - 1;
  }
  return 2;
}

void Dataset::validate() const {
  require(features.rows() == targets.size(), "Dataset: feature/target row mismatch");
  require(features.rows() > 0, "Dataset: must be nonempty");
}

Eigen::MatrixXd bernstein_basis(int degree, std::span<const double> taus) {
  const int m = degree + 1;
  std::vector<double> binom(m, 1.0);
  for (int j = 1; j < m; ++j) {
    binom[j] = binom[j - 1] * static_cast<double>(degree - j + 1) / j;
  }
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(taus.size()), m);
  for (Eigen::Index r = 0; r < basis.rows(); ++r) {
    const double t = taus[static_cast<std::size_t>(r)];
    double tp = 1.0;
    for (int j = 0; j < m; ++j) {
      basis(r, j) = binom[j] * tp * std::pow(1.0 - t, degree - j);
      tp *= t;
    }
  }
  return basis;
}

void drn_transform(const double* raw, double& mu, double& sigma) {
  mu = raw[0];
  sigma = softplus(raw[1]) + kSigmaFloor;
}

std::vector<double> bqn_transform(std::span<const double> raw) {
  std::vector<double> coeffs(raw.size());
  coeffs[0] = raw[0];
  for (std::size_t j = 1; j < raw.size(); ++j) {
    coeffs[j] = coeffs[j - 1] + softplus(raw[j]);
  }
  return coeffs;
}

std::vector<double> hen_transform(std::span<const double> raw) {
  std::vector<double> probs(raw.size());
  const double shift = *std::max_element(raw.begin(), raw.end());
  double total = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    probs[k] = std::exp(raw[k] - shift);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
  return probs;
}

HeadContext HeadContext::make(const NetConfig& config) {
  HeadContext ctx;
  ctx.head = config.head;
  if (config.head == Head::BQN) {
    ctx.pinball_levels.resize(kBqnPinballLevels);
    for (int i = 0; i < kBqnPinballLevels; ++i) {
      ctx.pinball_levels[i] = static_cast<double>(i + 1) / (kBqnPinballLevels + 1);
    }
    ctx.basis = bernstein_basis(config.bqn_degree, ctx.pinball_levels);
  } else if (config.head == Head::HEN) {
    ctx.hen_edges = config.hen_edges;
  }
  return ctx;
}

double head_loss(const HeadContext& ctx, std::span<const double> raw, double y,
                 double* grad_raw, std::size_t* clamped) {
  switch (ctx.head) {
    case Head::DRN: {
      double mu;
      double sigma;
      drn_transform(raw.data(), mu, sigma);
      const double z = (y - mu) / sigma;
      const double cdf_z = std_normal_cdf(z);
      const double pdf_z = std_normal_pdf(z);
      const double loss = sigma * (z * (2.0 * cdf_z - 1.0) + 2.0 * pdf_z - kInvSqrtPi);
      if (grad_raw) {
        grad_raw[0] = -(2.0 * cdf_z - 1.0);
        grad_raw[1] = (2.0 * pdf_z - kInvSqrtPi) * sigmoid(raw[1]);
      }
      return loss;
    }
    case Head::BQN: {
      const auto coeffs = bqn_transform(raw);
      const Eigen::Map<const Eigen::VectorXd> alpha(coeffs.data(),
                                                    static_cast<Eigen::Index>(coeffs.size()));
      const Eigen::VectorXd q = ctx.basis * alpha;
      const std::size_t L = ctx.pinball_levels.size();
      double loss = 0.0;
      Eigen::VectorXd dq;
      if (grad_raw) dq.setZero(static_cast<Eigen::Index>(L));
      for (std::size_t l = 0; l < L; ++l) {
        const double tau = ctx.pinball_levels[l];
        const double u = y - q[static_cast<Eigen::Index>(l)];
        loss += pinball_loss(u, tau);
        if (grad_raw) {
          dq[static_cast<Eigen::Index>(l)] =
              -(tau - (u < 0.0 ? 1.0 : 0.0)) / static_cast<double>(L);
        }
      }
      loss /= static_cast<double>(L);
      if (grad_raw) {
        const Eigen::VectorXd dalpha = ctx.basis.transpose() * dq;
        double suffix = 0.0;
        for (Eigen::Index j = dalpha.size() - 1; j >= 0; --j) {
          suffix += dalpha[j];
          grad_raw[j] = j == 0 ? suffix : sigmoid(raw[static_cast<std::size_t>(j)]) * suffix;
        }
      }
      return loss;
    }
    case Head::HEN: {
      const auto probs = hen_transform(raw);
      const auto& edges = ctx.hen_edges;
      std::size_t bin;
      if (y < edges.front()) {
        bin = 0;
        if (clamped) ++*clamped;
      } else if (y >= edges.back()) {
        bin = probs.size() - 1;
        if (clamped) ++*clamped;
      } else {
        const auto it = std::upper_bound(edges.begin(), edges.end(), y);
        bin = static_cast<std::size_t>(it - edges.begin()) - 1;
      }
      const double loss = -std::log(probs[bin]);
      if (grad_raw) {
        for (std::size_t k = 0; k < probs.size(); ++k) {
          grad_raw[k] = probs[k] - (k == bin ? 1.0 : 0.0);
        }
      }
      return loss;
    }
  }
  return 0.0;
}

NetModel NetModel::initialized(const NetConfig& config, int input_dim) {
  config.validate();
  require(input_dim >= 1, "NetModel: input dimension must be positive");
  NetModel model;
  model.config_ = config;
  model.input_dim_ = input_dim;
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
  dims.push_back(config.head_dim());
  Rng rng(config.seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i) {
      for (int j = 0; j < fan_in; ++j) {
        w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
      }
    }
    model.weights_.push_back(std::move(w));
    model.biases_.emplace_back(Eigen::VectorXd::Zero(fan_out));
  }
  model.feature_mean_ = Eigen::VectorXd::Zero(input_dim);
  model.feature_std_ = Eigen::VectorXd::Ones(input_dim);
  return model;
}

void NetModel::set_standardizer(const Eigen::VectorXd& mean, const Eigen::VectorXd& std) {
  require(mean.size() == input_dim_ && std.size() == input_dim_,
          "NetModel: standardizer dimension mismatch");
  feature_mean_ = mean;
  feature_std_ = std;
}

namespace {

Eigen::MatrixXd standardize(const Eigen::MatrixXd& X, const Eigen::VectorXd& mean,
                            const Eigen::VectorXd& std) {
  return (X.rowwise() - mean.transpose()).array().rowwise() /
         std.transpose().array();
}

// Layer sweep on already standardized inputs.
Eigen::MatrixXd forward_layers(const std::vector<Eigen::MatrixXd>& weights,
                               const std::vector<Eigen::VectorXd>& biases,
                               Activation act, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd a = X;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = a * weights[l].transpose();
    z.rowwise() += biases[l].transpose();
    if (l + 1 < weights.size()) {
      apply_activation(act, z, a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

}  // namespace

Eigen::MatrixXd NetModel::forward_raw(const Eigen::MatrixXd& X) const {
  require(X.cols() == input_dim_, "NetModel: feature width mismatch");
  return forward_layers(weights_, biases_, activation_from_name(config_.activation),
                        standardize(X, feature_mean_, feature_std_));
}

Eigen::MatrixXd NetModel::forward_params(const Eigen::MatrixXd& X) const {
  const Eigen::MatrixXd raw = forward_raw(X);
  Eigen::MatrixXd params(raw.rows(), raw.cols());
  std::vector<double> row(static_cast<std::size_t>(raw.cols()));
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) row[static_cast<std::size_t>(c)] = raw(r, c);
    switch (config_.head) {
      case Head::DRN: {
        double mu;
        double sigma;
        drn_transform(row.data(), mu, sigma);
        params(r, 0) = mu;
        params(r, 1) = sigma;
        break;
      }
      case Head::BQN: {
        const auto coeffs = bqn_transform(row);
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
          params(r, c) = coeffs[static_cast<std::size_t>(c)];
        }
        break;
      }
      case Head::HEN: {
        const auto probs = hen_transform(row);
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
          params(r, c) = probs[static_cast<std::size_t>(c)];
        }
        break;
      }
    }
  }
  return params;
}

ForecastDist head_distribution(Head head, std::span<const double> params,
                               const std::vector<double>& hen_edges) {
  switch (head) {
    case Head::DRN: return NormalDist(params[0], params[1]);
    case Head::BQN: return BernsteinQuantileDist({params.begin(), params.end()});
    case Head::HEN: {
      std::vector<double> probs(params.begin(), params.end());
      double total = std::accumulate(probs.begin(), probs.end(), 0.0);
      for (double& p : probs) p /= total;
      return HistogramDist(hen_edges, std::move(probs));
    }
  }
  return NormalDist(0.0, 1.0);
}

std::vector<ForecastDist> NetModel::forward(const Eigen::MatrixXd& X) const {
  const Eigen::MatrixXd params = forward_params(X);
  std::vector<ForecastDist> out;
  out.reserve(static_cast<std::size_t>(params.rows()));
  std::vector<double> row(static_cast<std::size_t>(params.cols()));
  for (Eigen::Index r = 0; r < params.rows(); ++r) {
    for (Eigen::Index c = 0; c < params.cols(); ++c) row[static_cast<std::size_t>(c)] = params(r, c);
    out.push_back(head_distribution(config_.head, row, config_.hen_edges));
  }
  return out;
}

double NetModel::dataset_loss(const Dataset& data, std::size_t* clamped) const {
  data.validate();
  const HeadContext ctx = HeadContext::make(config_);
  const Eigen::MatrixXd raw = forward_raw(data.features);
  std::vector<double> row(static_cast<std::size_t>(raw.cols()));
  double total = 0.0;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) row[static_cast<std::size_t>(c)] = raw(r, c);
    total += head_loss(ctx, row, data.targets[r], nullptr, clamped);
  }
  return total / static_cast<double>(raw.rows());
}

namespace {

struct BackpropWorkspace {
  std::vector<Eigen::MatrixXd> activations;  // layer inputs, activations[0] = batch input
  std::vector<Eigen::MatrixXd> preacts;
};

// Forward pass over a standardized batch keeping intermediates, then raw
// head outputs.
Eigen::MatrixXd forward_batch(const std::vector<Eigen::MatrixXd>& weights,
                              const std::vector<Eigen::VectorXd>& biases,
                              Activation act, const Eigen::MatrixXd& Xstd,
                              BackpropWorkspace& ws) {
  const std::size_t layers = weights.size();
  ws.activations.assign(layers, Eigen::MatrixXd());
  ws.preacts.assign(layers, Eigen::MatrixXd());
  Eigen::MatrixXd a = Xstd;
  for (std::size_t l = 0; l < layers; ++l) {
    ws.activations[l] = a;
    Eigen::MatrixXd z = a * weights[l].transpose();
    z.rowwise() += biases[l].transpose();
    ws.preacts[l] = z;
    if (l + 1 < layers) {
      apply_activation(act, z, a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

void backward_batch(const std::vector<Eigen::MatrixXd>& weights, Activation act,
                    const BackpropWorkspace& ws, const Eigen::MatrixXd& draw,
                    std::vector<Eigen::MatrixXd>& grad_w,
                    std::vector<Eigen::VectorXd>& grad_b) {
  const std::size_t layers = weights.size();
  Eigen::MatrixXd dz = draw;
  for (std::size_t l = layers; l-- > 0;) {
    grad_w[l].noalias() = dz.transpose() * ws.activations[l];
    grad_b[l] = dz.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd da = dz * weights[l];
    dz = da.cwiseProduct(ws.preacts[l - 1].unaryExpr(
        [act](double z) { return activate_grad(act, z); }));
  }
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;

  explicit AdamState(const NetModel& model) {
    for (const auto& w : model.weights()) {
      mw.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
      vw.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : model.biases()) {
      mb.emplace_back(Eigen::VectorXd::Zero(b.size()));
      vb.emplace_back(Eigen::VectorXd::Zero(b.size()));
    }
  }

  template <class Tensor>
  static void update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                            double lr, long step) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  void apply(NetModel& model, const std::vector<Eigen::MatrixXd>& grad_w,
             const std::vector<Eigen::VectorXd>& grad_b, double lr) {
    ++step;
    for (std::size_t l = 0; l < grad_w.size(); ++l) {
      update_tensor(model.weights()[l], grad_w[l], mw[l], vw[l], lr, step);
      update_tensor(model.biases()[l], grad_b[l], mb[l], vb[l], lr, step);
    }
  }
};

}  // namespace

double NetModel::case_loss_grad(const Eigen::RowVectorXd& x, double y,
                                std::vector<Eigen::MatrixXd>& grad_w,
                                std::vector<Eigen::VectorXd>& grad_b) const {
  const Activation act = activation_from_name(config_.activation);
  const HeadContext ctx = HeadContext::make(config_);
  BackpropWorkspace ws;
  const Eigen::MatrixXd xstd = standardize(x, feature_mean_, feature_std_);
  const Eigen::MatrixXd raw = forward_batch(weights_, biases_, act, xstd, ws);
  std::vector<double> row(static_cast<std::size_t>(raw.cols()));
  std::vector<double> draw_row(row.size());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) row[static_cast<std::size_t>(c)] = raw(0, c);
  const double loss = head_loss(ctx, row, y, draw_row.data(), nullptr);
  Eigen::MatrixXd draw(1, raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) draw(0, c) = draw_row[static_cast<std::size_t>(c)];
  grad_w.assign(weights_.size(), Eigen::MatrixXd());
  grad_b.assign(biases_.size(), Eigen::VectorXd());
  backward_batch(weights_, act, ws, draw, grad_w, grad_b);
  return loss;
}

NetModel train_member(const NetConfig& config, const Dataset& train,
                      const Dataset& valid) {
  config.validate();
  train.validate();
  valid.validate();
  const int input_dim = static_cast<int>(train.features.cols());
  require(valid.features.cols() == input_dim, "train_member: dataset width mismatch");

  NetModel model = NetModel::initialized(config, input_dim);

  Eigen::VectorXd mean = train.features.colwise().mean();
  Eigen::VectorXd stdev(input_dim);
  for (int j = 0; j < input_dim; ++j) {
    const double var =
        (train.features.col(j).array() - mean[j]).square().sum() /
        static_cast<double>(train.features.rows());
    stdev[j] = std::max(std::sqrt(var), 1e-8);
  }
  model.set_standardizer(mean, stdev);

  const Eigen::MatrixXd x_train = standardize(train.features, mean, stdev);
  const Activation act = activation_from_name(config.activation);
  const HeadContext ctx = HeadContext::make(config);

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(config.seed, 0x7261696e75ULL));

  AdamState adam(model);
  std::vector<Eigen::MatrixXd> grad_w(model.weights().size());
  std::vector<Eigen::VectorXd> grad_b(model.biases().size());
  BackpropWorkspace ws;

  std::vector<Eigen::MatrixXd> best_w = model.weights();
  std::vector<Eigen::VectorXd> best_b = model.biases();
  double best_valid = std::numeric_limits<double>::infinity();
  int wait = 0;
  TrainInfo info;

  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  std::vector<double> raw_row(static_cast<std::size_t>(config.head_dim()));
  std::vector<double> draw_row(raw_row.size());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      Eigen::MatrixXd xb(count, input_dim);
      for (std::size_t r = 0; r < count; ++r) xb.row(r) = x_train.row(order[start + r]);
      const Eigen::MatrixXd raw = forward_batch(model.weights(), model.biases(), act, xb, ws);
      Eigen::MatrixXd draw(count, raw.cols());
      double batch_loss = 0.0;
      for (std::size_t r = 0; r < count; ++r) {
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
          raw_row[static_cast<std::size_t>(c)] = raw(static_cast<Eigen::Index>(r), c);
        }
        batch_loss += head_loss(ctx, raw_row, train.targets[order[start + r]],
                                draw_row.data(), &info.clamped_targets);
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
          draw(static_cast<Eigen::Index>(r), c) =
              draw_row[static_cast<std::size_t>(c)] / static_cast<double>(count);
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("training loss diverged at epoch " + std::to_string(epoch),
                            epoch);
      }
      epoch_loss += batch_loss;
      backward_batch(model.weights(), act, ws, draw, grad_w, grad_b);
      adam.apply(model, grad_w, grad_b, config.learning_rate);
    }
    epoch_loss /= static_cast<double>(n);
    if (epoch == 1) info.first_epoch_train_loss = epoch_loss;
    info.final_train_loss = epoch_loss;
    info.epochs_run = epoch;

    const double valid_loss = model.dataset_loss(valid);
    if (!std::isfinite(valid_loss)) {
      throw TrainingError("validation loss diverged at epoch " + std::to_string(epoch),
                          epoch);
    }
    if (valid_loss < best_valid) {
      best_valid = valid_loss;
      best_w = model.weights();
      best_b = model.biases();
      wait = 0;
    } else if (++wait >= config.patience) {
      break;
    }
  }

  model.weights() = std::move(best_w);
  model.biases() = std::move(best_b);
  info.best_valid_loss = best_valid;
  model.info_ = info;
  if (info.clamped_targets > 0) {
    std::cerr << "netlab: " << info.clamped_targets
              << " targets outside the histogram edge range were clamped\n";
  }
  return model;
}

std::vector<NetModel> train_ensemble(const NetConfig& config, const Dataset& train,
                                     const Dataset& valid, int n, int threads) {
  require(n >= 1, "train_ensemble: need at least one member");
  std::vector<NetModel> members(static_cast<std::size_t>(n));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  parallel_for_chunks(static_cast<std::size_t>(n), threads,
                      [&](std::size_t begin, std::size_t end) {
                        for (std::size_t i = begin; i < end; ++i) {
                          try {
                            NetConfig member_config = config;
                            member_config.seed = config.seed + i;
                            members[i] = train_member(member_config, train, valid);
                          } catch (...) {
                            std::lock_guard<std::mutex> lock(failure_mutex);
                            if (!failure) failure = std::current_exception();
                          }
                        }
                      });
  if (failure) std::rethrow_exception(failure);
  return members;
}

std::vector<double> hen_edges_from_targets(std::span<const double> targets) {
  if (targets.size() < 2) {
    throw std::invalid_argument("hen_edges_from_targets: need at least two targets");
  }
  std::vector<double> sorted(targets.begin(), targets.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  edges.reserve(51);
  const double n1 = static_cast<double>(sorted.size()) - 1.0;
  for (int j = 0; j <= 50; ++j) {
    const double h = n1 * static_cast<double>(j) / 50.0;
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    double q = sorted[lo];
    if (lo + 1 < sorted.size()) q += frac * (sorted[lo + 1] - sorted[lo]);
    const double rounded = std::round(q * 100.0) / 100.0;
    if (edges.empty() || rounded > edges.back()) edges.push_back(rounded);
  }
  if (edges.size() < 2) {
    throw std::invalid_argument("hen_edges_from_targets: targets are degenerate");
  }
  return edges;
}

namespace {

nlohmann::json net_config_json(const NetConfig& c) {
  return nlohmann::json{{"hidden_sizes", c.hidden_sizes},
                        {"activation", c.activation},
                        {"head", head_name(c.head)},
                        {"bqn_degree", c.bqn_degree},
                        {"hen_edges", c.hen_edges},
                        {"learning_rate", c.learning_rate},
                        {"batch_size", c.batch_size},
                        {"max_epochs", c.max_epochs},
                        {"patience", c.patience},
                        {"seed", c.seed}};
}

NetConfig net_config_from_json_obj(const nlohmann::json& j) {
  NetConfig c;
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  c.activation = j.at("activation").get<std::string>();
  c.head = head_from_name(j.at("head").get<std::string>());
  c.bqn_degree = j.at("bqn_degree").get<int>();
  c.hen_edges = j.at("hen_edges").get<std::vector<double>>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

constexpr char kModelMagic[8] = {'D', 'A', 'G', 'G', 'N', 'E', 'T', '1'};

void write_doubles(std::ostream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::istream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("model file truncated");
}

}  // namespace

void NetModel::save(std::ostream& out) const {
  out.write(kModelMagic, sizeof(kModelMagic));
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = net_config_json(config_);
  header["input_dim"] = input_dim_;
  std::vector<std::vector<int>> shapes;
  for (const auto& w : weights_) {
    shapes.push_back({static_cast<int>(w.rows()), static_cast<int>(w.cols())});
  }
  header["layer_shapes"] = shapes;
  const std::string text = header.dump();
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    // Row-major per layer.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        weights_[l];
    write_doubles(out, rm.data(), static_cast<std::size_t>(rm.size()));
    write_doubles(out, biases_[l].data(), static_cast<std::size_t>(biases_[l].size()));
  }
  write_doubles(out, feature_mean_.data(), static_cast<std::size_t>(feature_mean_.size()));
  write_doubles(out, feature_std_.data(), static_cast<std::size_t>(feature_std_.size()));
}

NetModel NetModel::load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a model file (bad magic bytes)");
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("model file truncated");
  const nlohmann::json header = nlohmann::json::parse(text);
  NetModel model;
  model.config_ = net_config_from_json_obj(header.at("config"));
  model.input_dim_ = header.at("input_dim").get<int>();
  for (const auto& shape : header.at("layer_shapes")) {
    const int rows = shape.at(0).get<int>();
    const int cols = shape.at(1).get<int>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    read_doubles(in, rm.data(), static_cast<std::size_t>(rm.size()));
    model.weights_.emplace_back(rm);
    Eigen::VectorXd b(rows);
    read_doubles(in, b.data(), static_cast<std::size_t>(b.size()));
    model.biases_.push_back(std::move(b));
  }
  model.feature_mean_.resize(model.input_dim_);
  model.feature_std_.resize(model.input_dim_);
  read_doubles(in, model.feature_mean_.data(), static_cast<std::size_t>(model.input_dim_));
  read_doubles(in, model.feature_std_.data(), static_cast<std::size_t>(model.input_dim_));
  return model;
}

std::string NetModel::serialize() const {
  std::ostringstream out(std::ios::binary);
  save(out);
  return out.str();
}

NetModel NetModel::deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return load(in);
}

}  // namespace deepagg
