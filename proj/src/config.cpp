#include "amcl/config.hpp"

#include "amcl/errors.hpp"

#include <fstream>
#include <set>

namespace amcl {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Walks one JSON object, consuming known keys and rejecting the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, join(path_, key));
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
        throw ConfigError(path, "expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Enum, class Parse>
void get_enum(Section& s, const std::string& key, Enum& out, Parse parse) {
  std::string text;
  s.get(key, text);
  if (text.empty()) return;
  try {
    out = parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(s.path(key), e.what());
  }
}

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path, message);
}

}  // namespace

ModelConfig ExperimentConfig::model_config(std::size_t input_width) const {
  ModelConfig m;
  m.input_width = input_width;
  m.encoder_hidden = model.hidden;
  m.feature_width = model.feature_width;
  m.projection_width = model.projection_width;
  m.heads = model.heads;
  m.predictor = loss.variant == LossVariant::simsiam;
  m.barlow_batch = loss.variant == LossVariant::barlow ? train.batch_size : 0;
  return m;
}

AugPipeline ExperimentConfig::pipeline(std::size_t image_size) const {
  return AugPipeline::prefix(augment_prefix, augment, image_size);
}

void ExperimentConfig::validate() const {
  require(model.hidden >= 1, "model.hidden", "must be >= 1");
  require(model.feature_width >= 1, "model.feature_width", "must be >= 1");
  require(model.projection_width >= 1, "model.projection_width", "must be >= 1");
  require(model.heads >= 1, "model.heads", "C >= 1");

  require(loss.beta >= 0.0, "loss.beta", "β ≥ 0");
  require(loss.kappa >= 1, "loss.kappa", "κ ≥ 1");
  require(loss.lambda >= 0.0, "loss.lambda", "λ ≥ 0");
  require(loss.bounds.eta > 0.0, "loss.bounds.eta", "η > 0");
  require(loss.bounds.iota > 0.0, "loss.bounds.iota", "ι > 0");
  const auto& t = loss.temp_mode;
  require(t.tau0 > 0.0, "loss.temperature.tau0", "τ₀ > 0");
  require(t.tau_min > 0.0, "loss.temperature.tau_min", "τ_min > 0");
  require(t.tau_max >= t.tau_min, "loss.temperature.tau_max", "τ_max ≥ τ_min");
  require(t.period > 0.0, "loss.temperature.period", "period > 0");

  require(augment_prefix >= 1 && augment_prefix <= kAugOpCount, "augment.prefix", "must be in [1, 5]");
  require(augment.crop_scale_min > 0.0 && augment.crop_scale_min <= augment.crop_scale_max &&
              augment.crop_scale_max <= 1.0,
          "augment.crop_scale", "need 0 < min ≤ max ≤ 1");
  require(augment.blur_sigma_min > 0.0 && augment.blur_sigma_min <= augment.blur_sigma_max, "augment.blur_sigma",
          "need 0 < min ≤ max");
  require(augment.gray_probability >= 0.0 && augment.gray_probability <= 1.0, "augment.gray_probability",
          "must be in [0, 1]");
  require(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0, "augment.flip_probability",
          "must be in [0, 1]");
  require(augment.jitter_strength >= 0.0 && augment.jitter_strength < 1.0, "augment.jitter_strength",
          "must be in [0, 1)");

  require(train.epochs >= 1, "train.epochs", "must be >= 1");
  require(train.batch_size >= 4, "train.batch_size", "must be >= 4");
  require(train.lr > 0.0, "train.lr", "must be > 0");
  require(train.momentum >= 0.0 && train.momentum < 1.0, "train.momentum", "must be in [0, 1)");
  require(train.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  require(train.grad_clip >= 0.0, "train.grad_clip", "must be >= 0");

  const std::size_t negatives = 2 * (train.batch_size - 1);
  const std::size_t candidates = negatives + (loss.variant == LossVariant::infonce ? 1 : 0);
  if (loss.neg_agg == NegativeAggregation::topk &&
      (loss.variant == LossVariant::ntxent || loss.variant == LossVariant::infonce)) {
    require(loss.kappa <= candidates, "loss.kappa",
            "κ ≤ N (N = " + std::to_string(candidates) + " candidates for batch size " +
                std::to_string(train.batch_size) + ")");
  }

  require(eval.knn_k >= 1, "eval.knn_k", "must be >= 1");
  require(!eval.probe_subsets.empty(), "eval.probe_subsets", "need at least one subset size");
  for (std::size_t i = 0; i < eval.probe_subsets.size(); ++i) {
    require(eval.probe_subsets[i] >= 1, "eval.probe_subsets[" + std::to_string(i) + "]", "must be >= 1");
  }
  require(eval.probe_iterations >= 1, "eval.probe_iterations", "must be >= 1");
  require(eval.probe_lr > 0.0, "eval.probe_lr", "must be > 0");
  require(eval.probe_l2 >= 0.0, "eval.probe_l2", "must be >= 0");
  require(eval.positive_pairs >= 1, "eval.positive_pairs", "must be >= 1");
  require(eval.negative_pairs >= 1, "eval.negative_pairs", "must be >= 1");
  require(eval.held_out > 0.0 && eval.held_out < 1.0, "eval.held_out", "must be in (0, 1)");

  require(!io.output_dir.empty(), "io.output_dir", "must not be empty");
  require(io.synthetic.classes >= 1, "io.synthetic.classes", "must be >= 1");
  require(io.synthetic.per_class >= 1, "io.synthetic.per_class", "must be >= 1");
  require(io.synthetic.size >= kMinAugSize, "io.synthetic.size", "must be >= 8");
  require(io.synthetic.channels == 1 || io.synthetic.channels == 3, "io.synthetic.channels", "must be 1 or 3");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  {
    Section root(j, "");
    if (const json* m = root.child("model")) {
      Section s(*m, "model");
      s.get("hidden", cfg.model.hidden);
      s.get("feature_width", cfg.model.feature_width);
      s.get("projection_width", cfg.model.projection_width);
      s.get("heads", cfg.model.heads);
    }
    if (const json* l = root.child("loss")) {
      Section s(*l, "loss");
      get_enum(s, "variant", cfg.loss.variant, parse_loss_variant);
      get_enum(s, "neg_agg", cfg.loss.neg_agg, parse_negative_aggregation);
      s.get("beta", cfg.loss.beta);
      s.get("kappa", cfg.loss.kappa);
      s.get("lambda", cfg.loss.lambda);
      s.get("literal_set_regularizer", cfg.loss.literal_set_regularizer);
      if (const json* b = s.child("bounds")) {
        Section bs(*b, "loss.bounds");
        bs.get("eta", cfg.loss.bounds.eta);
        bs.get("iota", cfg.loss.bounds.iota);
      }
      if (const json* t = s.child("temperature")) {
        Section ts(*t, "loss.temperature");
        get_enum(ts, "mode", cfg.loss.temp_mode.kind, parse_temperature_kind);
        ts.get("tau0", cfg.loss.temp_mode.tau0);
        ts.get("tau_min", cfg.loss.temp_mode.tau_min);
        ts.get("tau_max", cfg.loss.temp_mode.tau_max);
        ts.get("period", cfg.loss.temp_mode.period);
      }
    }
    if (const json* a = root.child("augment")) {
      Section s(*a, "augment");
      s.get("prefix", cfg.augment_prefix);
      s.get("crop_scale_min", cfg.augment.crop_scale_min);
      s.get("crop_scale_max", cfg.augment.crop_scale_max);
      s.get("blur_sigma_min", cfg.augment.blur_sigma_min);
      s.get("blur_sigma_max", cfg.augment.blur_sigma_max);
      s.get("gray_probability", cfg.augment.gray_probability);
      s.get("jitter_strength", cfg.augment.jitter_strength);
      s.get("flip_probability", cfg.augment.flip_probability);
    }
    if (const json* t = root.child("train")) {
      Section s(*t, "train");
      s.get("epochs", cfg.train.epochs);
      s.get("batch_size", cfg.train.batch_size);
      s.get("lr", cfg.train.lr);
      s.get("momentum", cfg.train.momentum);
      s.get("weight_decay", cfg.train.weight_decay);
      s.get("grad_clip", cfg.train.grad_clip);
      s.get("seed", cfg.train.seed);
      s.get("eval_every", cfg.train.eval_every);
    }
    if (const json* e = root.child("eval")) {
      Section s(*e, "eval");
      s.get("knn_k", cfg.eval.knn_k);
      s.get("probe_subsets", cfg.eval.probe_subsets);
      s.get("probe_iterations", cfg.eval.probe_iterations);
      s.get("probe_lr", cfg.eval.probe_lr);
      s.get("probe_l2", cfg.eval.probe_l2);
      s.get("positive_pairs", cfg.eval.positive_pairs);
      s.get("negative_pairs", cfg.eval.negative_pairs);
      s.get("held_out", cfg.eval.held_out);
    }
    if (const json* io = root.child("io")) {
      Section s(*io, "io");
      s.get("dataset", cfg.io.dataset);
      s.get("output_dir", cfg.io.output_dir);
      if (const json* syn = s.child("synthetic")) {
        Section ss(*syn, "io.synthetic");
        ss.get("classes", cfg.io.synthetic.classes);
        ss.get("per_class", cfg.io.synthetic.per_class);
        ss.get("size", cfg.io.synthetic.size);
        ss.get("channels", cfg.io.synthetic.channels);
        ss.get("seed", cfg.io.synthetic.seed);
      }
    }
  }
  cfg.loss.heads = cfg.model.heads;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  auto cfg = config_from_json(j);
  write_resolved_config(cfg);
  return cfg;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.loss.temp_mode;
  return json{
      {"model",
       {{"hidden", c.model.hidden},
        {"feature_width", c.model.feature_width},
        {"projection_width", c.model.projection_width},
        {"heads", c.model.heads}}},
      {"loss",
       {{"variant", to_string(c.loss.variant)},
        {"neg_agg", to_string(c.loss.neg_agg)},
        {"beta", c.loss.beta},
        {"kappa", c.loss.kappa},
        {"lambda", c.loss.lambda},
        {"literal_set_regularizer", c.loss.literal_set_regularizer},
        {"bounds", {{"eta", c.loss.bounds.eta}, {"iota", c.loss.bounds.iota}}},
        {"temperature",
         {{"mode", to_string(t.kind)},
          {"tau0", t.tau0},
          {"tau_min", t.tau_min},
          {"tau_max", t.tau_max},
          {"period", t.period}}}}},
      {"augment",
       {{"prefix", c.augment_prefix},
        {"crop_scale_min", c.augment.crop_scale_min},
        {"crop_scale_max", c.augment.crop_scale_max},
        {"blur_sigma_min", c.augment.blur_sigma_min},
        {"blur_sigma_max", c.augment.blur_sigma_max},
        {"gray_probability", c.augment.gray_probability},
        {"jitter_strength", c.augment.jitter_strength},
        {"flip_probability", c.augment.flip_probability}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"grad_clip", c.train.grad_clip},
        {"seed", c.train.seed},
        {"eval_every", c.train.eval_every}}},
      {"eval",
       {{"knn_k", c.eval.knn_k},
        {"probe_subsets", c.eval.probe_subsets},
        {"probe_iterations", c.eval.probe_iterations},
        {"probe_lr", c.eval.probe_lr},
        {"probe_l2", c.eval.probe_l2},
        {"positive_pairs", c.eval.positive_pairs},
        {"negative_pairs", c.eval.negative_pairs},
        {"held_out", c.eval.held_out}}},
      {"io",
       {{"dataset", c.io.dataset},
        {"output_dir", c.io.output_dir},
        {"synthetic",
         {{"classes", c.io.synthetic.classes},
          {"per_class", c.io.synthetic.per_class},
          {"size", c.io.synthetic.size},
          {"channels", c.io.synthetic.channels},
          {"seed", c.io.synthetic.seed}}}}},
  };
}

void write_resolved_config(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.io.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "config.resolved.json");
  if (!out) throw IoError("cannot write " + (dir / "config.resolved.json").string());
  out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace amcl
