#include <doctest.h>

#include "amcl/errors.hpp"
#include "amcl/rng.hpp"
#include "amcl/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace amcl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("amcl_train_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough for a unit test: 4 classes x 12 images of 8x8 gray.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.model.hidden = 16;
  cfg.model.feature_width = 8;
  cfg.model.projection_width = 4;
  cfg.model.heads = 2;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.grad_clip = 1.0;
  cfg.eval.knn_k = 3;
  cfg.eval.probe_subsets = {2, 5};
  cfg.eval.probe_iterations = 20;
  cfg.eval.positive_pairs = 20;
  cfg.eval.negative_pairs = 20;
  cfg.eval.held_out = 0.25;
  cfg.io.synthetic = {4, 12, 8, 1, 3};
  return cfg;
}

Dataset tiny_data(const ExperimentConfig& cfg) { return generate_synthetic(cfg.io.synthetic); }

RowMatrixXd gaussian_rows(std::size_t n, const Eigen::RowVectorXd& center, double sigma, SplitMix64& rng) {
  RowMatrixXd m(static_cast<Eigen::Index>(n), center.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = center[j] + sigma * rng.normal();
  }
  return m;
}

// Full-sort nearest-neighbor classifier used as an oracle.
double brute_force_knn(const RowMatrixXd& tr, const std::vector<int>& ytr, const RowMatrixXd& te,
                       const std::vector<int>& yte, std::size_t k) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < te.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (Eigen::Index j = 0; j < tr.rows(); ++j) {
      const double cos = te.row(i).dot(tr.row(j)) / (te.row(i).norm() * tr.row(j).norm());
      d.emplace_back(1.0 - cos, static_cast<std::size_t>(j));
    }
    std::sort(d.begin(), d.end());
    std::vector<int> votes(2, 0);
    for (std::size_t r = 0; r < k; ++r) ++votes[static_cast<std::size_t>(ytr[d[r].second])];
    const int pred = votes[1] > votes[0] ? 1 : 0;
    correct += pred == yte[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(te.rows());
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("temperature schedule") {
  TemperatureMode cosine;
  cosine.kind = TemperatureKind::cosine_schedule;
  cosine.tau_min = 0.1;
  cosine.tau_max = 0.5;
  cosine.period = 60;
  CHECK(*temperature_for_step(cosine, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*temperature_for_step(cosine, 30) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(*temperature_for_step(cosine, 60) == doctest::Approx(0.5).epsilon(1e-15));

  TemperatureMode constant;
  constant.kind = TemperatureKind::constant;
  constant.tau0 = 0.2;
  for (const double e : {0.0, 3.0, 59.0}) CHECK(*temperature_for_step(constant, e) == 0.2);

  TemperatureMode adaptive;
  adaptive.kind = TemperatureKind::adaptive;
  CHECK_FALSE(temperature_for_step(adaptive, 4).has_value());
}

TEST_CASE("cosine learning rate") {
  CHECK(cosine_lr(0.05, 0, 100) == 0.05);
  CHECK(cosine_lr(0.05, 50, 100) == doctest::Approx(0.025));
  CHECK(cosine_lr(0.05, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("knn examples") {
  SplitMix64 rng(3);
  const RowMatrixXd tr = gaussian_rows(10, Eigen::RowVectorXd::Zero(5), 1.0, rng);
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};

  SUBCASE("duplicate of a training point with k = 1") {
    for (Eigen::Index i = 0; i < tr.rows(); ++i) {
      CHECK(knn_predict(tr, labels, tr.row(i), 1) == labels[static_cast<std::size_t>(i)]);
    }
  }
  SUBCASE("identical training labels") {
    const std::vector<int> same(10, 2);
    const RowMatrixXd te = gaussian_rows(8, Eigen::RowVectorXd::Zero(5), 1.0, rng);
    const std::vector<int> yte{2, 0, 2, 1, 2, 3, 2, 0};
    CHECK(knn_eval(tr, same, te, yte, 4) == doctest::Approx(0.5));
  }
  SUBCASE("contracts") {
    CHECK_THROWS_AS(knn_eval(RowMatrixXd(0, 5), {}, tr, labels, 1), ContractViolation);
    CHECK_THROWS_AS(knn_eval(tr, labels, tr, labels, 11), ContractViolation);
  }
}

TEST_CASE("knn vote ties go to the smaller summed distance, then the lower class") {
  RowMatrixXd tr(4, 2);
  tr << 1.0, 0.0,  // class 1, distance 0 from the query
      0.0, 1.0,    // class 0, distance 1
      -1.0, 0.1,   // class 1, far
      0.9, 0.1;    // class 0, close
  const std::vector<int> labels{1, 0, 1, 0};
  Eigen::RowVectorXd q(2);
  q << 1.0, 0.0;
  // k = 2: one vote each; class 1's summed distance is 0.
  CHECK(knn_predict(tr, labels, q, 2) == 1);

  RowMatrixXd sym(2, 2);
  sym << 1.0, 1.0, 1.0, -1.0;
  const std::vector<int> yl{1, 0};
  Eigen::RowVectorXd q2(2);
  q2 << 1.0, 0.0;
  CHECK(knn_predict(sym, yl, q2, 2) == 0);
}

TEST_CASE("knn separates gaussian blobs") {
  constexpr double sigma = 0.1;
  const Eigen::RowVectorXd ca = Eigen::RowVectorXd::Constant(8, 2.0 * sigma);
  const Eigen::RowVectorXd cb = -ca;  // 4 sigma apart per coordinate
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    SplitMix64 rng(seed);
    RowMatrixXd tr(200, 8), te(200, 8);
    tr << gaussian_rows(100, ca, sigma, rng), gaussian_rows(100, cb, sigma, rng);
    te << gaussian_rows(100, ca, sigma, rng), gaussian_rows(100, cb, sigma, rng);
    std::vector<int> y(200, 0);
    std::fill(y.begin() + 100, y.end(), 1);
    const double acc = knn_eval(tr, y, te, y, 5);
    CHECK(acc >= 0.99);
    CHECK(acc == brute_force_knn(tr, y, te, y, 5));
  }
}

TEST_CASE("knn is invariant to rescaling features") {
  SplitMix64 rng(9);
  const RowMatrixXd tr = gaussian_rows(60, Eigen::RowVectorXd::Zero(6), 1.0, rng);
  const RowMatrixXd te = gaussian_rows(40, Eigen::RowVectorXd::Zero(6), 1.0, rng);
  std::vector<int> ytr(60), yte(40);
  for (auto& y : ytr) y = static_cast<int>(rng.below(3));
  for (auto& y : yte) y = static_cast<int>(rng.below(3));
  for (const std::size_t k : {1u, 5u, 20u}) {
    CHECK(knn_eval(tr, ytr, te, yte, k) == knn_eval(7.0 * tr, ytr, 7.0 * te, yte, k));
  }
}

TEST_CASE("linear probe") {
  SUBCASE("one-hot class features are perfectly separable") {
    RowMatrixXd f = RowMatrixXd::Zero(80, 4);
    std::vector<int> y(80);
    for (int i = 0; i < 80; ++i) {
      y[static_cast<std::size_t>(i)] = i % 4;
      f(i, i % 4) = 1.0;
    }
    for (const std::size_t s : {1u, 10u, 20u}) CHECK(linear_probe(f, y, f, y, s, 17) == 1.0);
  }
  SUBCASE("shuffled labels give chance accuracy") {
    SplitMix64 rng(21);
    const RowMatrixXd tr = gaussian_rows(400, Eigen::RowVectorXd::Zero(16), 1.0, rng);
    const RowMatrixXd te = gaussian_rows(4000, Eigen::RowVectorXd::Zero(16), 1.0, rng);
    std::vector<int> ytr(400), yte(4000);
    for (std::size_t i = 0; i < ytr.size(); ++i) ytr[i] = static_cast<int>(i % 4);
    for (std::size_t i = 0; i < yte.size(); ++i) yte[i] = static_cast<int>(i % 4);
    const auto p = shuffled_indices(ytr.size(), 5);
    std::vector<int> shuffled(ytr.size());
    for (std::size_t i = 0; i < p.size(); ++i) shuffled[i] = ytr[p[i]];
    CHECK(std::abs(linear_probe(tr, shuffled, te, yte, 50, 23) - 0.25) <= 0.05);
  }
  SUBCASE("contracts") {
    RowMatrixXd f = RowMatrixXd::Zero(6, 2);
    const std::vector<int> missing{0, 0, 0, 2, 2, 2};  // class 1 absent
    CHECK_THROWS_AS(linear_probe(f, missing, f, missing, 1, 1), ContractViolation);
    const std::vector<int> small{0, 0, 0, 1, 1, 1};
    CHECK_THROWS_AS(linear_probe(f, small, f, small, 4, 1), ContractViolation);
  }
  SUBCASE("seeded subsets are reproducible") {
    SplitMix64 rng(4);
    const RowMatrixXd tr = gaussian_rows(100, Eigen::RowVectorXd::Zero(5), 1.0, rng);
    std::vector<int> y(100);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
    CHECK(linear_probe(tr, y, tr, y, 10, 8) == linear_probe(tr, y, tr, y, 10, 8));
  }
}

TEST_CASE("one SGD step decreases the loss by lr times the squared gradient norm") {
  ModelConfig mc;
  mc.input_width = 12;
  mc.encoder_hidden = 10;
  mc.feature_width = 8;
  mc.projection_width = 4;
  mc.heads = 2;
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    ModelBundle model(mc, seed);
    SplitMix64 rng(seed + 100);
    Eigen::VectorXd xv(8 * 12);
    for (auto& v : xv) v = rng.uniform(0.0, 1.0);
    const Tensor x = Tensor::constant({8, 12}, xv);
    AmclConfig lc;
    lc.heads = 2;
    lc.kappa = 2;
    TemperatureContext ctx;
    ctx.kind = TemperatureKind::adaptive;
    ctx.phi = &model.temp_net;
    auto loss = [&] {
      const Tensor h = encode(model, x);
      std::vector<ContrastiveHead> hs;
      for (const auto& g : model.heads) hs.push_back(in_batch_head(l2_normalize(g(h)), ctx));
      return amcl_ntxent(lc, hs, 4.0).total;
    };
    auto params = model.parameters();
    const Tensor l0 = loss();
    zero_grad(params);
    backward(l0);
    double g2 = 0.0;
    for (const auto& p : params) g2 += p.grad().squaredNorm();
    constexpr double lr = 1e-4;
    SgdMomentum sgd(params, 0.9, 0.0);
    sgd.step(lr);
    const double delta = loss().item() - l0.item();
    CHECK(delta == doctest::Approx(-lr * g2).epsilon(0.1));
  }
}

TEST_CASE("SGD momentum, weight decay and clipping") {
  Tensor w = Tensor::parameter({2}, Eigen::Vector2d(1.0, -2.0));
  SgdMomentum sgd({w}, 0.5, 0.1, 1.0);
  backward(sum(w * Tensor::constant({2}, Eigen::Vector2d(3.0, 4.0))));  // norm 5, clipped to 1
  sgd.step(0.1);
  // v = (0.6, 0.8) + 0.1 w = (0.7, 0.6)
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.07));
  CHECK(w.values()[1] == doctest::Approx(-2.0 - 0.06));
  const Eigen::Vector2d w1 = w.values();
  w.zero_grad();
  sgd.step(0.1);
  // v = 0.5 (0.7, 0.6) + 0.1 w1
  CHECK(w.values()[0] == doctest::Approx(w1[0] - 0.1 * (0.35 + 0.1 * w1[0])));
  CHECK(w.values()[1] == doctest::Approx(w1[1] - 0.1 * (0.3 + 0.1 * w1[1])));
}

TEST_CASE("pretraining is deterministic and logs within the temperature bounds") {
  auto cfg = tiny_config();
  const auto all = tiny_data(cfg);
  const auto [train, held] = experiment_split(cfg, all);
  CHECK(train.size() == 36);
  CHECK(held.size() == 12);

  const auto a = pretrain(cfg, train, held);
  const auto b = pretrain(cfg, train, held);
  const auto dir = scratch("det");
  write_train_log(dir / "a.csv", a.log.steps);
  write_train_log(dir / "b.csv", b.log.steps);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(a.log.steps.size() == 2 * (36 / 8));  // last partial batch dropped

  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    const auto& s = a.log.steps[i];
    CHECK(s.step == i);
    CHECK(s.tau_min > cfg.loss.bounds.eta);
    CHECK(s.tau_max < cfg.loss.bounds.eta + cfg.loss.bounds.iota);
    CHECK(s.tau_min <= s.tau_mean);
    CHECK(s.tau_mean <= s.tau_max);
    CHECK(std::isfinite(s.loss));
  }
  REQUIRE(a.log.evals.size() == 1);
  CHECK(a.log.evals[0].epoch == 1);
  CHECK(a.log.evals[0].knn_acc.has_value());
  CHECK(*a.log.evals[0].overlap >= 0.0);
  REQUIRE(a.log.probes.size() == 2);
  CHECK(a.log.probes[0].subset_per_class == 2);
  CHECK(a.log.probes[1].subset_per_class == 5);
  CHECK(*a.log.evals[0].probe_acc == a.log.probes[1].probe_acc);
  REQUIRE(a.separability.size() == 2);
  CHECK(a.separability[0].source == "projected");
  CHECK(a.separability[0].positive.total == 20);
  CHECK(a.separability[1].negative.total == 20);

  cfg.train.seed = 43;
  const auto c = pretrain(cfg, train, held, {false, {}});
  CHECK(c.log.evals.empty());
  CHECK(c.log.steps.back().loss != a.log.steps.back().loss);
}

TEST_CASE("every loss variant trains") {
  for (const auto v : {LossVariant::ntxent, LossVariant::infonce, LossVariant::simsiam, LossVariant::barlow}) {
    for (const auto kind : {TemperatureKind::adaptive, TemperatureKind::cosine_schedule}) {
      auto cfg = tiny_config();
      cfg.loss.variant = v;
      cfg.loss.temp_mode.kind = kind;
      const auto all = tiny_data(cfg);
      const auto [train, held] = experiment_split(cfg, all);
      const auto r = pretrain(cfg, train, held, {false, {}});
      CHECK(r.log.steps.size() == 8);
      for (const auto& s : r.log.steps) CHECK(std::isfinite(s.loss));
    }
  }
}

TEST_CASE("non-finite loss aborts with the step and the term breakdown") {
  auto cfg = tiny_config();
  cfg.loss.temp_mode.kind = TemperatureKind::constant;
  cfg.loss.temp_mode.tau0 = 1e-320;  // similarities overflow once divided
  const auto all = tiny_data(cfg);
  const auto [train, held] = experiment_split(cfg, all);
  try {
    pretrain(cfg, train, held, {false, {}});
    FAIL("expected EvaluationError");
  } catch (const EvaluationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("pos_term") != std::string::npos);
    CHECK(msg.find("omega_term") != std::string::npos);
  }
}

TEST_CASE("batch larger than the training set is rejected") {
  auto cfg = tiny_config();
  cfg.train.batch_size = 64;
  cfg.loss.kappa = 1;
  const auto all = tiny_data(cfg);
  const auto [train, held] = experiment_split(cfg, all);
  CHECK_THROWS_AS(pretrain(cfg, train, held), ContractViolation);
}

TEST_CASE("reduction to the baseline during pretraining") {
  auto cfg = tiny_config();
  cfg.loss.temp_mode.kind = TemperatureKind::constant;
  cfg.loss.temp_mode.tau0 = 0.3;
  const auto all = tiny_data(cfg);
  const auto [train, held] = experiment_split(cfg, all);
  const auto r = reduction_check(cfg, train, 10);
  CHECK(r.steps == 10);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.max_loss_gap_error < 1e-8);
}

TEST_CASE("checkpoint round trip") {
  for (const auto v : {LossVariant::ntxent, LossVariant::simsiam, LossVariant::barlow}) {
    auto cfg = tiny_config();
    cfg.loss.variant = v;
    ModelBundle model(cfg.model_config(64), 77);
    const auto dir = scratch("ckpt");
    save_checkpoint(dir, model);
    const ModelBundle back = load_checkpoint(dir);
    CHECK(back.config.heads == model.config.heads);
    CHECK(back.predictor.has_value() == model.predictor.has_value());
    CHECK(back.barlow_temp_net.has_value() == model.barlow_temp_net.has_value());
    const auto a = model.named_parameters();
    const auto b = back.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.shape() == b[i].second.shape());
      const Eigen::VectorXd as_float = a[i].second.values().cast<float>().cast<double>();
      CHECK(as_float == b[i].second.values());
    }
  }
  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "amcl_no_such_checkpoint"), IoError);
}

TEST_CASE("log files") {
  const auto dir = scratch("logs");
  std::vector<StepLog> steps(2);
  steps[1].step = 1;
  steps[1].loss = 0.1;
  write_train_log(dir / "train_log.csv", steps);
  std::istringstream t(slurp(dir / "train_log.csv"));
  std::string line;
  std::getline(t, line);
  CHECK(line == "epoch,step,loss,pos_term,neg_term,omega_term,tau_min,tau_mean,tau_max,tau_var_heads");
  std::getline(t, line);
  std::getline(t, line);
  CHECK(line == "0,1,0.10000000000000001,0,0,0,0,0,0,0");

  EvalRow knn_only;
  knn_only.epoch = 3;
  knn_only.knn_acc = 0.5;
  append_eval_log(dir / "eval_log.csv", std::span(&knn_only, 1));
  EvalRow probe_only;
  probe_only.epoch = 3;
  probe_only.probe_acc = 0.25;
  append_eval_log(dir / "eval_log.csv", std::span(&probe_only, 1));
  CHECK(slurp(dir / "eval_log.csv") == "epoch,knn_acc,probe_acc,overlap\n3,0.5,,\n3,,0.25,\n");

  const std::vector<ProbeRow> probes{{3, 10, 0.5}, {3, 20, 0.75}};
  append_probe_log(dir / "probe_log.csv", probes);
  CHECK(slurp(dir / "probe_log.csv") == "epoch,subset_per_class,probe_acc\n3,10,0.5\n3,20,0.75\n");
}

}  // TEST_SUITE
