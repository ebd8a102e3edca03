#include "amcl/nets.hpp"

#include "amcl/errors.hpp"
#include "amcl/rng.hpp"

#include <cmath>

namespace amcl {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ContractViolation("MlpSpec: need at least one layer (two widths)");
  for (const auto w : widths) {
    if (w < 1) throw ContractViolation("MlpSpec: every width must be >= 1");
  }
}

std::vector<Tensor> init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<Tensor> params;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t fan_in = spec.widths[l];
    const std::size_t fan_out = spec.widths[l + 1];
    SplitMix64 rng(derive_seed(seed, {static_cast<std::uint64_t>(l)}));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Eigen::VectorXd w(static_cast<Eigen::Index>(fan_in * fan_out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    params.push_back(Tensor::parameter({fan_in, fan_out}, std::move(w)));
    params.push_back(Tensor::parameter({fan_out}, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out))));
  }
  return params;
}

Mlp::Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)), params_(init_params(spec_, seed)) {}

Mlp::Mlp(MlpSpec spec, std::vector<Tensor> params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (params_.size() != 2 * spec_.layers()) {
    throw ContractViolation("Mlp: expected " + std::to_string(2 * spec_.layers()) + " parameter tensors, got " +
                            std::to_string(params_.size()));
  }
  for (std::size_t l = 0; l < spec_.layers(); ++l) {
    const Shape w{spec_.widths[l], spec_.widths[l + 1]};
    const Shape b{spec_.widths[l + 1]};
    if (params_[2 * l].shape() != w || params_[2 * l + 1].shape() != b) {
      throw ContractViolation("Mlp: layer " + std::to_string(l) + " parameter shapes " +
                              to_string(params_[2 * l].shape()) + ", " + to_string(params_[2 * l + 1].shape()) +
                              " do not match spec");
    }
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  const bool single = x.rank() == 1;
  if (x.cols() != spec_.input_width() || x.rank() > 2 || x.rank() == 0) {
    throw ContractViolation("Mlp: input shape " + to_string(x.shape()) + " does not match input width " +
                            std::to_string(spec_.input_width()));
  }
  Tensor y = single ? reshape(x, {1, x.size()}) : x;
  for (std::size_t l = 0; l < spec_.layers(); ++l) {
    y = matmul(y, params_[2 * l]) + params_[2 * l + 1];
    if (l + 1 < spec_.layers()) y = relu(y);
  }
  return single ? reshape(y, {spec_.output_width()}) : y;
}

void ModelConfig::validate() const {
  if (input_width < 1 || encoder_hidden < 1 || feature_width < 1 || projection_width < 1) {
    throw ContractViolation("ModelConfig: all widths must be >= 1");
  }
  if (heads < 1) throw ContractViolation("ModelConfig: need at least one projection head");
}

MlpSpec ModelBundle::encoder_spec(const ModelConfig& c) {
  return {{c.input_width, c.encoder_hidden, c.feature_width}};
}
MlpSpec ModelBundle::head_spec(const ModelConfig& c) {
  return {{c.feature_width, c.feature_width, c.projection_width}};
}
MlpSpec ModelBundle::temp_net_spec(const ModelConfig& c) {
  return {{c.projection_width, c.projection_width}};
}
MlpSpec ModelBundle::predictor_spec(const ModelConfig& c) {
  return {{c.projection_width, c.projection_width, c.projection_width}};
}
MlpSpec ModelBundle::barlow_temp_net_spec(const ModelConfig& c) {
  return {{c.barlow_batch, c.barlow_batch}};
}

namespace {

std::vector<Mlp> make_heads(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Mlp> heads;
  const std::uint64_t head_seed = derive_seed(seed, "head");
  for (std::size_t c = 0; c < cfg.heads; ++c) {
    heads.emplace_back(ModelBundle::head_spec(cfg), derive_seed(head_seed, {static_cast<std::uint64_t>(c)}));
  }
  return heads;
}

}  // namespace

ModelBundle::ModelBundle(const ModelConfig& cfg, std::uint64_t seed)
    : config(cfg),
      encoder(encoder_spec(cfg), derive_seed(seed, "encoder")),
      heads(make_heads(cfg, seed)),
      temp_net(temp_net_spec(cfg), derive_seed(seed, "temp_net")) {
  if (cfg.predictor) predictor.emplace(predictor_spec(cfg), derive_seed(seed, "predictor"));
  if (cfg.barlow_batch > 0) barlow_temp_net.emplace(barlow_temp_net_spec(cfg), derive_seed(seed, "barlow_temp_net"));
}

ModelBundle::ModelBundle(ModelConfig cfg, Mlp enc, std::vector<Mlp> hs, Mlp phi, std::optional<Mlp> pred,
                         std::optional<Mlp> phi_bt)
    : config(std::move(cfg)),
      encoder(std::move(enc)),
      heads(std::move(hs)),
      temp_net(std::move(phi)),
      predictor(std::move(pred)),
      barlow_temp_net(std::move(phi_bt)) {
  config.validate();
  if (heads.size() != config.heads) throw ContractViolation("ModelBundle: head count does not match config");
  for (const auto& h : heads) {
    if (!(h.spec() == head_spec(config))) throw ContractViolation("ModelBundle: heads must share one MlpSpec");
  }
}

std::vector<std::pair<std::string, const Mlp*>> ModelBundle::components() const {
  std::vector<std::pair<std::string, const Mlp*>> out{{"encoder", &encoder}};
  for (std::size_t c = 0; c < heads.size(); ++c) out.emplace_back("head" + std::to_string(c), &heads[c]);
  out.emplace_back("temp_net", &temp_net);
  if (predictor) out.emplace_back("predictor", &*predictor);
  if (barlow_temp_net) out.emplace_back("barlow_temp_net", &*barlow_temp_net);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, mlp] : components()) {
    const auto& ps = mlp->parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      out.emplace_back(name + (i % 2 == 0 ? ".W" : ".b") + std::to_string(i / 2), ps[i]);
    }
  }
  return out;
}

std::vector<Tensor> ModelBundle::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Tensor encode(const ModelBundle& bundle, const Tensor& x) {
  if (x.cols() != bundle.config.input_width) {
    throw ContractViolation("encode: input width " + std::to_string(x.cols()) + " != encoder input width " +
                            std::to_string(bundle.config.input_width));
  }
  return bundle.encoder(x);
}

Tensor project(const ModelBundle& bundle, std::size_t c, const Tensor& h) {
  return l2_normalize(bundle.heads.at(c)(h));
}

ViewForward forward_views(const ModelBundle& bundle, const Tensor& x, const Tensor& x_pos) {
  if (x.rows() != x_pos.rows()) {
    throw ContractViolation("forward_views: batch extents differ: " + to_string(x.shape()) + " vs " +
                            to_string(x_pos.shape()));
  }
  ViewForward out{encode(bundle, x), encode(bundle, x_pos), {}};
  for (std::size_t c = 0; c < bundle.heads.size(); ++c) {
    out.heads.push_back({project(bundle, c, out.h), project(bundle, c, out.h_pos)});
  }
  return out;
}

Tensor bounded_sigmoid(const Tensor& r, const TempBounds& bounds) {
  return bounds.eta + bounds.iota * logistic(-clamp(r, -kSigmoidSaturation, kSigmoidSaturation));
}

Tensor adaptive_temperature(const Tensor& u, const Tensor& v, const Mlp& phi, const TempBounds& bounds) {
  if (u.rank() != 1 || u.shape() != v.shape() || u.size() != phi.spec().input_width()) {
    throw ContractViolation("adaptive_temperature: widths " + to_string(u.shape()) + ", " + to_string(v.shape()) +
                            " do not match phi input width " + std::to_string(phi.spec().input_width()));
  }
  return bounded_sigmoid(dot(phi(u), phi(v)), bounds);
}

Tensor pairwise_temperatures(const Tensor& a, const Tensor& b, const Mlp& phi, const TempBounds& bounds) {
  return bounded_sigmoid(matmul(phi(a), transpose(phi(b))), bounds);
}

Tensor paired_temperatures(const Tensor& a, const Tensor& b, const Mlp& phi, const TempBounds& bounds) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("paired_temperatures: shape mismatch " + to_string(a.shape()) + " vs " +
                            to_string(b.shape()));
  }
  return bounded_sigmoid(rowwise_dot(phi(a), phi(b)), bounds);
}

void check_temperature_bounds(const Tensor& tau, const TempBounds& bounds) {
  const auto& v = tau.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > bounds.lower() && v[i] < bounds.upper())) {
      throw ContractViolation("temperature " + std::to_string(v[i]) + " outside (" + std::to_string(bounds.lower()) +
                              ", " + std::to_string(bounds.upper()) + ")");
    }
  }
}

}  // namespace amcl
