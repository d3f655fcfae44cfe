#include <doctest.h>

#include <cmath>

#include "deepagg/netlab.hpp"
#include "deepagg/scoring.hpp"
#include "deepagg/simgen.hpp"

using namespace deepagg;

namespace {

NetConfig small_config(Head head) {
  NetConfig config;
  config.hidden_sizes = {8, 6};
  config.head = head;
  config.bqn_degree = 4;
  if (head == Head::HEN) config.hen_edges = {-2.0, -0.5, 0.5, 1.5, 3.0};
  config.batch_size = 16;
  config.max_epochs = 25;
  config.patience = 5;
  config.seed = 99;
  return config;
}

Dataset toy_dataset(std::uint64_t seed, int cases, int dim) {
  Rng rng(seed);
  Dataset data;
  data.features.resize(cases, dim);
  data.targets.resize(cases);
  for (int r = 0; r < cases; ++r) {
    double m = 0.0;
    for (int j = 0; j < dim; ++j) {
      data.features(r, j) = rng.normal();
      m += 0.4 * data.features(r, j);
    }
    data.targets[r] = m + 0.5 * rng.normal();
  }
  return data;
}

double relative_gap(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace

TEST_CASE("head transforms") {
  SUBCASE("zero-weight network yields identical parameters for every case") {
    NetModel model = NetModel::initialized(small_config(Head::DRN), 3);
    for (auto& w : model.weights()) w.setZero();
    for (auto& b : model.biases()) b.setZero();
    const Dataset data = toy_dataset(5, 32, 3);
    const Eigen::MatrixXd params = model.forward_params(data.features);
    for (Eigen::Index r = 1; r < params.rows(); ++r) {
      CHECK(params(r, 0) == params(0, 0));
      CHECK(params(r, 1) == params(0, 1));
    }
    CHECK(params(0, 1) > 0.0);
  }
  SUBCASE("BQN coefficients are nondecreasing for arbitrary raw outputs") {
    Rng rng(7);
    for (int rep = 0; rep < 10000; ++rep) {
      std::vector<double> raw(6);
      for (double& x : raw) x = 20.0 * rng.normal();
      const auto coeffs = bqn_transform(raw);
      for (std::size_t j = 1; j < coeffs.size(); ++j) CHECK(coeffs[j] >= coeffs[j - 1]);
    }
  }
  SUBCASE("HEN probabilities form a simplex for arbitrary raw outputs") {
    Rng rng(8);
    for (int rep = 0; rep < 10000; ++rep) {
      std::vector<double> raw(5);
      for (double& x : raw) x = 30.0 * rng.normal();
      const auto probs = hen_transform(raw);
      double total = 0.0;
      for (double p : probs) {
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("head losses") {
  SUBCASE("DRN loss vanishes for a sharp forecast centred on the target") {
    const HeadContext ctx = HeadContext::make(small_config(Head::DRN));
    const double raw[2] = {1.3, -30.0};  // sigma collapses to the floor
    const double loss = head_loss(ctx, std::span<const double>(raw, 2), 1.3, nullptr, nullptr);
    CHECK(loss < 1e-4);
  }
  SUBCASE("DRN location gradient is zero at a centred standard normal") {
    const HeadContext ctx = HeadContext::make(small_config(Head::DRN));
    const double raw[2] = {0.0, softplus_inv(1.0 - kSigmaFloor)};
    double grad[2] = {0.0, 0.0};
    const double loss = head_loss(ctx, std::span<const double>(raw, 2), 0.0, grad, nullptr);
    CHECK(loss == doctest::Approx(0.23369497725510906).epsilon(1e-10));
    CHECK(grad[0] == doctest::Approx(0.0).scale(1.0));
    CHECK(grad[1] > 0.0);  // widening a centred forecast only hurts
  }
  SUBCASE("HEN loss is zero when the containing bin has probability one") {
    const HeadContext ctx = HeadContext::make(small_config(Head::HEN));
    double raw[4] = {0.0, 500.0, 0.0, 0.0};
    const double loss = head_loss(ctx, std::span<const double>(raw, 4), 0.0, nullptr, nullptr);
    CHECK(loss == doctest::Approx(0.0).scale(1.0));
  }
  SUBCASE("targets outside the edge range are clamped and counted") {
    const HeadContext ctx = HeadContext::make(small_config(Head::HEN));
    double raw[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t clamped = 0;
    (void)head_loss(ctx, std::span<const double>(raw, 4), -100.0, nullptr, &clamped);
    (void)head_loss(ctx, std::span<const double>(raw, 4), 100.0, nullptr, &clamped);
    (void)head_loss(ctx, std::span<const double>(raw, 4), 0.0, nullptr, &clamped);
    CHECK(clamped == 2);
  }
}

TEST_CASE("analytic parameter gradients match central finite differences") {
  const Dataset data = toy_dataset(17, 10, 3);
  for (Head head : {Head::DRN, Head::BQN, Head::HEN}) {
    CAPTURE(head_name(head));
    NetModel model = NetModel::initialized(small_config(head), 3);
    std::vector<Eigen::MatrixXd> gw;
    std::vector<Eigen::VectorXd> gb;
    std::vector<Eigen::MatrixXd> gw_scratch;
    std::vector<Eigen::VectorXd> gb_scratch;
    const double h = 1e-5;
    for (int c = 0; c < 10; ++c) {
      const Eigen::RowVectorXd x = data.features.row(c);
      const double y = data.targets[c];
      model.case_loss_grad(x, y, gw, gb);
      for (std::size_t l = 0; l < model.weights().size(); ++l) {
        for (Eigen::Index i = 0; i < model.weights()[l].rows(); ++i) {
          for (Eigen::Index j = 0; j < model.weights()[l].cols(); ++j) {
            const double keep = model.weights()[l](i, j);
            model.weights()[l](i, j) = keep + h;
            const double up = model.case_loss_grad(x, y, gw_scratch, gb_scratch);
            model.weights()[l](i, j) = keep - h;
            const double dn = model.case_loss_grad(x, y, gw_scratch, gb_scratch);
            model.weights()[l](i, j) = keep;
            const double fd = (up - dn) / (2.0 * h);
            CHECK(relative_gap(gw[l](i, j), fd) <= 1e-4);
          }
        }
        for (Eigen::Index i = 0; i < model.biases()[l].size(); ++i) {
          const double keep = model.biases()[l][i];
          model.biases()[l][i] = keep + h;
          const double up = model.case_loss_grad(x, y, gw_scratch, gb_scratch);
          model.biases()[l][i] = keep - h;
          const double dn = model.case_loss_grad(x, y, gw_scratch, gb_scratch);
          model.biases()[l][i] = keep;
          const double fd = (up - dn) / (2.0 * h);
          CHECK(relative_gap(gb[l][i], fd) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("training is deterministic and seeds differ") {
  const Dataset train = toy_dataset(21, 300, 3);
  const Dataset valid = toy_dataset(22, 100, 3);
  const NetConfig config = small_config(Head::DRN);
  const NetModel a = train_member(config, train, valid);
  const NetModel b = train_member(config, train, valid);
  CHECK(a.serialize() == b.serialize());

  NetConfig other = config;
  other.seed = config.seed + 1;
  const NetModel c = train_member(other, train, valid);
  CHECK(a.serialize() != c.serialize());
}

TEST_CASE("training reduces the training loss") {
  const Dataset train = toy_dataset(31, 600, 3);
  const Dataset valid = toy_dataset(32, 200, 3);
  for (Head head : {Head::DRN, Head::BQN, Head::HEN}) {
    const NetModel model = train_member(small_config(head), train, valid);
    CHECK(model.train_info().final_train_loss <= model.train_info().first_epoch_train_loss);
  }
}

TEST_CASE("diverging training reports the epoch") {
  const Dataset train = toy_dataset(41, 200, 3);
  const Dataset valid = toy_dataset(42, 80, 3);
  NetConfig config = small_config(Head::DRN);
  config.learning_rate = 1e30;
  try {
    (void)train_member(config, train, valid);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train_ensemble uses consecutive seeds and keeps order") {
  const Dataset train = toy_dataset(51, 200, 3);
  const Dataset valid = toy_dataset(52, 80, 3);
  const NetConfig config = small_config(Head::DRN);
  const auto pool = train_ensemble(config, train, valid, 3, 2);
  REQUIRE(pool.size() == 3);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    CHECK(pool[i].config().seed == config.seed + i);
  }
  NetConfig first = config;
  const NetModel lone = train_member(first, train, valid);
  CHECK(pool[0].serialize() == lone.serialize());
  CHECK(pool[0].serialize() != pool[1].serialize());

  // every member emits the same family, accepted by EnsembleForecast
  const auto dists0 = pool[0].forward(valid.features.topRows(4));
  for (const auto& d : dists0) CHECK(d.family() == "normal");
}

TEST_CASE("model serialization round trips bit-exactly") {
  const Dataset train = toy_dataset(61, 150, 3);
  const Dataset valid = toy_dataset(62, 60, 3);
  for (Head head : {Head::DRN, Head::BQN, Head::HEN}) {
    const NetModel model = train_member(small_config(head), train, valid);
    const std::string bytes = model.serialize();
    const NetModel back = NetModel::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    const Eigen::MatrixXd p1 = model.forward_params(valid.features);
    const Eigen::MatrixXd p2 = back.forward_params(valid.features);
    CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS(NetModel::deserialize("not a model"));
}

TEST_CASE("forward validates the feature width") {
  NetModel model = NetModel::initialized(small_config(Head::DRN), 3);
  Eigen::MatrixXd wrong(4, 2);
  wrong.setZero();
  CHECK_THROWS_AS(model.forward_raw(wrong), std::invalid_argument);
}

TEST_CASE("hen_edges_from_targets") {
  SUBCASE("linear targets give the rounded quantile grid") {
    std::vector<double> targets(101);
    for (int i = 0; i <= 100; ++i) targets[static_cast<std::size_t>(i)] = i;
    const auto edges = hen_edges_from_targets(targets);
    REQUIRE(edges.size() == 51);
    CHECK(edges.front() == 0.0);
    CHECK(edges.back() == 100.0);
    CHECK(edges[1] == 2.0);
  }
  SUBCASE("rounding deduplicates nearby quantiles") {
    std::vector<double> targets;
    for (int i = 0; i < 200; ++i) targets.push_back(0.001 * i);  // range 0..0.2
    const auto edges = hen_edges_from_targets(targets);
    CHECK(edges.size() < 51);
    for (std::size_t i = 1; i < edges.size(); ++i) {
      CHECK(edges[i] > edges[i - 1]);
      CHECK(edges[i] == doctest::Approx(std::round(edges[i] * 100.0) / 100.0).epsilon(1e-12));
    }
  }
  SUBCASE("degenerate targets fail loudly") {
    CHECK_THROWS_AS(hen_edges_from_targets(std::vector<double>{1.0, 1.0001}),
                    std::invalid_argument);
  }
}

TEST_CASE("a trained DRN approaches the ideal score on the linear scenario") {
  ScenarioSpec spec;
  spec.id = ScenarioId::S1;
  spec.n_train = 6000;
  spec.n_valid = 2000;
  spec.n_test = 4000;
  spec.seed = 314;
  const GeneratedData data = generate(spec);

  NetConfig config;
  config.head = Head::DRN;
  config.seed = 4001;
  const NetModel model = train_member(config, data.train, data.valid);

  const Eigen::MatrixXd params = model.forward_params(data.test.features);
  double mean_crps = 0.0;
  for (Eigen::Index r = 0; r < params.rows(); ++r) {
    mean_crps += crps_normal(params(r, 0), params(r, 1), data.test.targets[r]);
  }
  mean_crps /= static_cast<double>(params.rows());
  const double ideal = optimal_crps(spec, data);
  MESSAGE("test mean CRPS ", mean_crps, " vs ideal ", ideal);
  CHECK(mean_crps <= 1.25 * ideal);
  CHECK(mean_crps >= ideal * 0.95);  // cannot beat the generating process
}
