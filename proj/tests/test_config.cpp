#include <doctest.h>

#include "amcl/config.hpp"
#include "amcl/errors.hpp"
#include "amcl/losses.hpp"

#include <filesystem>
#include <fstream>

using namespace amcl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_path(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

std::string error_message(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty document resolves to the defaults") {
  const auto cfg = config_from_json(json::object());
  CHECK(cfg.model.hidden == 128);
  CHECK(cfg.model.projection_width == 16);
  CHECK(cfg.model.heads == 1);
  CHECK(cfg.loss.variant == LossVariant::ntxent);
  CHECK(cfg.loss.kappa == 1);
  CHECK(cfg.loss.beta == 1.0);
  CHECK(cfg.loss.bounds.eta == 1e-5);
  CHECK(cfg.loss.bounds.iota == 2.0);
  CHECK(cfg.augment_prefix == 5);
  CHECK(cfg.train.epochs == 60);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.lr == 0.05);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.train.weight_decay == 1e-4);
  CHECK(cfg.eval.knn_k == 20);
  CHECK(cfg.eval.probe_subsets == std::vector<std::size_t>{10, 20, 50});
  CHECK(cfg.eval.positive_pairs == 500);
  CHECK(cfg.io.synthetic.classes == 4);
  CHECK(cfg.io.synthetic.per_class == 500);

  // The echoed document is complete and parses back to itself.
  const json echoed = config_to_json(cfg);
  for (const char* section : {"model", "loss", "augment", "train", "eval", "io"}) CHECK(echoed.contains(section));
  CHECK(config_to_json(config_from_json(echoed)) == echoed);
}

TEST_CASE("kappa below one is rejected at loss.kappa") {
  const json j = {{"loss", {{"kappa", 0}}}};
  CHECK(error_path(j) == "loss.kappa");
  CHECK(error_message(j).find("κ ≥ 1") != std::string::npos);
}

TEST_CASE("kappa above the negative count is rejected") {
  CHECK(error_path({{"loss", {{"kappa", 15}}}, {"train", {{"batch_size", 8}}}}) == "loss.kappa");
  CHECK(error_path({{"loss", {{"kappa", 14}}}, {"train", {{"batch_size", 8}}}}) == "<no error>");
  // InfoNCE's candidate set includes the positive.
  CHECK(error_path({{"loss", {{"kappa", 15}, {"variant", "infonce"}}}, {"train", {{"batch_size", 8}}}}) == "<no error>");
  // Softmax aggregation ignores kappa's upper bound.
  CHECK(error_path({{"loss", {{"kappa", 99}, {"neg_agg", "softmax"}}}, {"train", {{"batch_size", 8}}}}) == "<no error>");
}

TEST_CASE("unknown keys and type mismatches name their path") {
  CHECK(error_path({{"modle", json::object()}}) == "modle");
  CHECK(error_path({{"loss", {{"bounds", {{"eta", 1e-5}, {"upper", 2}}}}}}) == "loss.bounds.upper");
  CHECK(error_path({{"train", {{"epochs", "many"}}}}) == "train.epochs");
  CHECK(error_path({{"loss", {{"variant", "moco"}}}}) == "loss.variant");
  CHECK(error_path({{"train", {{"batch_size", 2}}}}) == "train.batch_size");
  CHECK(error_path({{"augment", {{"prefix", 6}}}}) == "augment.prefix");
  CHECK(error_path(json::array()) == "<root>");
}

TEST_CASE("bounds are honoured") {
  const auto cfg = config_from_json({{"loss", {{"bounds", {{"eta", 1e-5}, {"iota", 2}}}}}});
  Mlp phi(MlpSpec{{4, 4}}, 5);
  TemperatureContext ctx;
  ctx.kind = TemperatureKind::adaptive;
  ctx.phi = &phi;
  ctx.bounds = cfg.loss.bounds;
  Eigen::VectorXd v(16);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::sin(3.0 * static_cast<double>(i) + 1.0);
  const Tensor z = l2_normalize(Tensor::constant({4, 4}, 40.0 * v));
  const Eigen::VectorXd t = pair_temperatures(z, z, ctx).values();
  CHECK(t.minCoeff() > 1e-5);
  CHECK(t.maxCoeff() < 2.00001);
}

TEST_CASE("derived model configuration") {
  auto cfg = config_from_json({{"model", {{"heads", 3}}}, {"loss", {{"variant", "barlow"}}}});
  CHECK(cfg.loss.heads == 3);
  auto mc = cfg.model_config(256);
  CHECK(mc.input_width == 256);
  CHECK(mc.heads == 3);
  CHECK(mc.barlow_batch == 64);
  CHECK_FALSE(mc.predictor);
  cfg.loss.variant = LossVariant::simsiam;
  CHECK(cfg.model_config(256).predictor);
  CHECK(cfg.pipeline(16).ops.size() == 5);
}

TEST_CASE("load_config writes the resolved copy") {
  const auto dir = fs::temp_directory_path() / "amcl_config_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const json doc = {{"io", {{"output_dir", (dir / "out").string()}}}, {"train", {{"seed", 7}}}};
  std::ofstream(dir / "c.json") << doc.dump();
  const auto cfg = load_config(dir / "c.json");
  CHECK(cfg.train.seed == 7);
  REQUIRE(fs::exists(dir / "out" / "config.resolved.json"));
  std::ifstream in(dir / "out" / "config.resolved.json");
  CHECK(json::parse(in) == config_to_json(cfg));

  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
}

}  // TEST_SUITE
