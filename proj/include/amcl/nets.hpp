#pragma once

#include "amcl/scalar_math.hpp"
#include "amcl/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace amcl {

/// Layer widths from input to output. Hidden layers use relu; the output
/// layer is affine.
struct MlpSpec {
  std::vector<std::size_t> widths;

  void validate() const;
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  bool operator==(const MlpSpec&) const = default;
};

/// He-uniform weights (limit sqrt(6 / fan_in)) stored as {fan_in, fan_out},
/// zero biases. Returns [W0, b0, W1, b1, ...]; bitwise reproducible per seed.
std::vector<Tensor> init_params(const MlpSpec& spec, std::uint64_t seed);

class Mlp {
 public:
  Mlp(MlpSpec spec, std::uint64_t seed);
  Mlp(MlpSpec spec, std::vector<Tensor> params);

  /// x is {batch, in} or {in}.
  Tensor operator()(const Tensor& x) const;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<Tensor>& parameters() { return params_; }

 private:
  MlpSpec spec_;
  std::vector<Tensor> params_;
};

struct ModelConfig {
  std::size_t input_width = 768;
  std::size_t encoder_hidden = 128;
  std::size_t feature_width = 64;     // d
  std::size_t projection_width = 16;  // d'
  std::size_t heads = 1;              // C
  bool predictor = false;             // SimSiam only
  std::size_t barlow_batch = 0;       // > 0 builds the batch-dimension temperature net

  void validate() const;
};

/// Encoder f, C independent projection heads, the shared temperature
/// network phi, and optional predictor / batch-dimension temperature network.
struct ModelBundle {
  ModelBundle(const ModelConfig& cfg, std::uint64_t seed);
  ModelBundle(ModelConfig cfg, Mlp encoder, std::vector<Mlp> heads, Mlp temp_net,
              std::optional<Mlp> predictor, std::optional<Mlp> barlow_temp_net);

  ModelConfig config;
  Mlp encoder;
  std::vector<Mlp> heads;
  Mlp temp_net;
  std::optional<Mlp> predictor;
  std::optional<Mlp> barlow_temp_net;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<std::pair<std::string, const Mlp*>> components() const;

  static MlpSpec encoder_spec(const ModelConfig& cfg);
  static MlpSpec head_spec(const ModelConfig& cfg);
  static MlpSpec temp_net_spec(const ModelConfig& cfg);
  static MlpSpec predictor_spec(const ModelConfig& cfg);
  static MlpSpec barlow_temp_net_spec(const ModelConfig& cfg);
};

struct HeadProjection {
  Tensor z;      // {batch, d'}, unit rows
  Tensor z_pos;  // {batch, d'}, unit rows
};

struct ViewForward {
  Tensor h;
  Tensor h_pos;
  std::vector<HeadProjection> heads;
};

/// Encoder plus every head on a pair of view batches.
ViewForward forward_views(const ModelBundle& bundle, const Tensor& x, const Tensor& x_pos);

/// Encoder output for {batch, input_width}.
Tensor encode(const ModelBundle& bundle, const Tensor& x);

/// Unit-norm projection of backbone features by head `c`.
Tensor project(const ModelBundle& bundle, std::size_t c, const Tensor& h);

/// iota * logistic(-r) + eta, elementwise. The pre-activation saturates at
/// |r| = 30 so emitted values stay strictly inside (eta, eta + iota) in
/// double precision; the gradient is zero in the saturated region.
Tensor bounded_sigmoid(const Tensor& r, const TempBounds& bounds);

/// Scalar temperature of the pair (u, v): sigma(<phi(u), phi(v)>).
Tensor adaptive_temperature(const Tensor& u, const Tensor& v, const Mlp& phi,
                            const TempBounds& bounds);

/// All pairwise temperatures between rows of a {m, k} and b {n, k} -> {m, n}.
Tensor pairwise_temperatures(const Tensor& a, const Tensor& b, const Mlp& phi,
                             const TempBounds& bounds);

/// Row-aligned temperatures between a {m, k} and b {m, k} -> {m}.
Tensor paired_temperatures(const Tensor& a, const Tensor& b, const Mlp& phi,
                           const TempBounds& bounds);

/// Throws ContractViolation unless every value lies strictly in (eta, eta + iota).
void check_temperature_bounds(const Tensor& tau, const TempBounds& bounds);

}  // namespace amcl
