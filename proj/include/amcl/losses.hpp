#pragma once

// Baseline contrastive losses and their adaptive multi-head counterparts.
//
// Every loss consumes per-head similarity and temperature tensors rather
// than raw embeddings, so the same code serves hand-built single-anchor
// examples and full in-batch training. Builders at the bottom of this file
// turn embeddings into those inputs.
//
// Per-anchor losses are averaged over anchors; head losses are summed.

#include "amcl/nets.hpp"
#include "amcl/scalar_math.hpp"
#include "amcl/tensor.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amcl {

enum class LossVariant { ntxent, simsiam, barlow, infonce };
enum class NegativeAggregation { topk, softmax };
enum class TemperatureKind { constant, cosine_schedule, adaptive };

struct TemperatureMode {
  TemperatureKind kind = TemperatureKind::adaptive;
  double tau0 = 0.2;      // constant
  double tau_min = 0.1;   // cosine schedule
  double tau_max = 0.5;
  double period = 60.0;   // epochs
};

struct AmclConfig {
  LossVariant variant = LossVariant::ntxent;
  std::size_t heads = 1;
  double beta = 1.0;
  std::size_t kappa = 1;
  double lambda = 0.005;
  TempBounds bounds;
  TemperatureMode temp_mode;
  NegativeAggregation neg_agg = NegativeAggregation::topk;
  /// Use log(prod tau_k) + sum 1/tau_k for the top-k negative regularizer
  /// instead of sum_k Omega(tau_k).
  bool literal_set_regularizer = false;
};

std::string_view to_string(LossVariant v);
std::string_view to_string(NegativeAggregation a);
std::string_view to_string(TemperatureKind k);
LossVariant parse_loss_variant(std::string_view s);
NegativeAggregation parse_negative_aggregation(std::string_view s);
TemperatureKind parse_temperature_kind(std::string_view s);

// -- primitives --

/// Cosine similarity: rank-1 operands give a scalar, rank-2 operands are
/// compared row by row. Throws DomainError on a zero vector.
Tensor cosine_sim(const Tensor& u, const Tensor& v);

/// Elementwise (d'/2) log tau + 1/tau. Throws DomainError on tau <= 0.
Tensor omega(const Tensor& tau, double d_prime);

/// Row-wise log sum_n (2 pi tau_n)^(-d'/2) exp((s_n - 1) / tau_n):
/// {m, n} similarities and temperatures -> {m}.
Tensor softmax_negative_aggregate(const Tensor& neg_sim, const Tensor& neg_tau, double d_prime);

/// Indices of the k largest entries of each row, largest first; ties go to
/// the lower index.
std::vector<std::vector<std::size_t>> top_k_indices(const Tensor& rows, std::size_t k);

// -- loss inputs --

/// One head of an anchor/positive/negatives problem.
struct ContrastiveHead {
  Tensor pos_sim;  // {M}
  Tensor pos_tau;  // {M}
  Tensor neg_sim;  // {M, N}
  Tensor neg_tau;  // {M, N}
};

/// One head of the symmetric siamese problem. The `_ab` pair compares the
/// predicted view a with the stopped projection of view b.
struct SiameseHead {
  Tensor sim_ab;  // {M}
  Tensor sim_ba;  // {M}
  Tensor tau_ab;  // {M}
  Tensor tau_ba;  // {M}
};

/// One head of the cross-correlation problem.
struct BarlowHead {
  Tensor cross_corr;  // {d', d'}
  Tensor tau;         // {d', d'}: diagonal = positive, off-diagonal = negative
};

/// Temperatures that entered one head's loss, for logging and statistics.
struct HeadTemperatures {
  Eigen::VectorXd positive;   // per anchor (per channel for Barlow)
  Eigen::VectorXd negative;   // selected / all / off-diagonal, flattened
  std::vector<std::vector<std::size_t>> selected;  // top-k candidate indices per anchor
};

struct LossTerms {
  Tensor total;
  double pos_term = 0.0;    // similarity-weighted positive part
  double neg_term = 0.0;    // negative / decorrelation part
  double omega_term = 0.0;  // beta-weighted regularizer contribution
  std::vector<HeadTemperatures> temperatures;
};

// -- baseline losses (one head, constant temperature) --

/// -log(exp(s+/tau) / sum_n exp(s_n/tau)); the denominator holds negatives only.
Tensor baseline_ntxent(const Tensor& pos_sim, const Tensor& neg_sim, double tau);
/// As NT-Xent with the positive term added to the denominator.
Tensor baseline_infonce(const Tensor& pos_sim, const Tensor& neg_sim, double tau);
/// -1/2 sim(p_a, sg(z_b)) - 1/2 sim(p_b, sg(z_a)), rows are samples.
Tensor baseline_simsiam(const Tensor& pred_a, const Tensor& proj_a, const Tensor& pred_b, const Tensor& proj_b);
/// sum_l (1 - C_ll)^2 + lambda sum_{l != m} C_lm^2 over batch-standardized inputs.
Tensor baseline_barlow(const Tensor& za, const Tensor& zb, double lambda);

// -- adaptive multi-head losses --

LossTerms amcl_ntxent(const AmclConfig& cfg, std::span<const ContrastiveHead> heads, double d_prime);
/// The positive pair joins the candidate set as index N (after all negatives).
LossTerms amcl_infonce(const AmclConfig& cfg, std::span<const ContrastiveHead> heads, double d_prime);
LossTerms amcl_simsiam(const AmclConfig& cfg, std::span<const SiameseHead> heads, double d_prime);
LossTerms amcl_barlow(const AmclConfig& cfg, std::span<const BarlowHead> heads, double d_prime);

// -- likelihood oracle --

/// Raw vectors of one head for the likelihood oracle.
struct OracleHead {
  Tensor anchor;     // {M, d'} unit rows
  Tensor positive;   // {M, d'} unit rows
  Tensor negatives;  // {M * N, d'} unit rows; row i * N + n is negative n of anchor i
  Tensor pos_tau;    // {M}
  Tensor neg_tau;    // {M, N}
};

/// Negative log of the ratio of isotropic Gaussian densities over squared
/// distances, computed directly from the vectors (no similarity or Omega
/// algebra). Valid for ntxent and infonce.
Tensor mle_oracle(LossVariant variant, std::span<const OracleHead> heads, double d_prime);

/// Oracle minus softmax-aggregated AMCL loss (beta = 1): C (d'/2) log(2 pi).
double mle_offset(std::size_t heads, double d_prime);

// -- builders --

/// How temperatures are produced for one step.
struct TemperatureContext {
  TemperatureKind kind = TemperatureKind::constant;
  double tau = 0.2;           // constant / scheduled value for this step
  const Mlp* phi = nullptr;   // adaptive only
  TempBounds bounds;
};

/// {m, n} temperatures between rows of a and b.
Tensor pair_temperatures(const Tensor& a, const Tensor& b, const TemperatureContext& ctx);
/// {m} temperatures between aligned rows of a and b.
Tensor row_temperatures(const Tensor& a, const Tensor& b, const TemperatureContext& ctx);

/// Positive partner of view i among 2B stacked views [a_0..a_{B-1}, b_0..b_{B-1}].
std::size_t partner_index(std::size_t i, std::size_t batch);

/// Every stacked view is an anchor; its positive is the other view of the
/// same image and its negatives are all 2(B-1) views of other images, in
/// increasing view order. `z` holds unit rows.
ContrastiveHead in_batch_head(const Tensor& z, const TemperatureContext& ctx);

/// Rows of `pred_*` and `proj_*` are per-sample; projections are stopped.
SiameseHead siamese_head(const Tensor& pred_a, const Tensor& proj_a, const Tensor& pred_b, const Tensor& proj_b,
                         const TemperatureContext& ctx);

/// Zero mean, unit population standard deviation per column.
Tensor batch_standardize(const Tensor& z);
/// Throws ContractViolation when a column's mean/std is beyond 1e-6 of 0/1.
void check_standardized(const Tensor& z);
/// C_lm = (1/N) sum_n za_nl zb_nm for standardized {N, d'} inputs.
Tensor cross_correlation(const Tensor& za, const Tensor& zb);
/// Cross-correlation plus channel temperatures from batch-dimension vectors.
BarlowHead barlow_head(const Tensor& za, const Tensor& zb, const TemperatureContext& ctx);

}  // namespace amcl
