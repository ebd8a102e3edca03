#include "amcl/losses.hpp"

#include "amcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace amcl {

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::ntxent: return "ntxent";
    case LossVariant::simsiam: return "simsiam";
    case LossVariant::barlow: return "barlow";
    case LossVariant::infonce: return "infonce";
  }
  return "?";
}

std::string_view to_string(NegativeAggregation a) {
  return a == NegativeAggregation::topk ? "topk" : "softmax";
}

std::string_view to_string(TemperatureKind k) {
  switch (k) {
    case TemperatureKind::constant: return "constant";
    case TemperatureKind::cosine_schedule: return "cosine_schedule";
    case TemperatureKind::adaptive: return "adaptive";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view s) {
  for (auto v : {LossVariant::ntxent, LossVariant::simsiam, LossVariant::barlow, LossVariant::infonce}) {
    if (to_string(v) == s) return v;
  }
  throw ContractViolation("unknown loss variant '" + std::string(s) + "'");
}

NegativeAggregation parse_negative_aggregation(std::string_view s) {
  for (auto v : {NegativeAggregation::topk, NegativeAggregation::softmax}) {
    if (to_string(v) == s) return v;
  }
  throw ContractViolation("unknown negative aggregation '" + std::string(s) + "'");
}

TemperatureKind parse_temperature_kind(std::string_view s) {
  for (auto v : {TemperatureKind::constant, TemperatureKind::cosine_schedule, TemperatureKind::adaptive}) {
    if (to_string(v) == s) return v;
  }
  throw ContractViolation("unknown temperature mode '" + std::string(s) + "'");
}

// -- primitives --

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) {
    throw ContractViolation("cosine_sim: shape mismatch " + to_string(u.shape()) + " vs " + to_string(v.shape()));
  }
  if (u.rank() == 1) return dot(l2_normalize(u), l2_normalize(v));
  return rowwise_dot(l2_normalize(u), l2_normalize(v));
}

Tensor omega(const Tensor& tau, double d_prime) { return (d_prime / 2.0) * log(tau) + 1.0 / tau; }

Tensor softmax_negative_aggregate(const Tensor& neg_sim, const Tensor& neg_tau, double d_prime) {
  if (neg_sim.shape() != neg_tau.shape() || neg_sim.rank() != 2) {
    throw ContractViolation("softmax_negative_aggregate: expected matching {M, N} inputs, got " +
                            to_string(neg_sim.shape()) + " and " + to_string(neg_tau.shape()));
  }
  const Tensor log_norm = (-d_prime / 2.0) * log(2.0 * std::numbers::pi * neg_tau);
  return logsumexp_rows(log_norm + (neg_sim - 1.0) / neg_tau);
}

std::vector<std::vector<std::size_t>> top_k_indices(const Tensor& rows, std::size_t k) {
  const std::size_t m = rows.rows();
  const std::size_t n = rows.cols();
  if (k < 1 || k > n) {
    throw ContractViolation("top-k: kappa = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  std::vector<std::vector<std::size_t>> out(m);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double va = rows.at(i, a);
                        const double vb = rows.at(i, b);
                        return va > vb || (va == vb && a < b);
                      });
    out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

// -- baselines --

namespace {

void require_pairs(const char* who, const Tensor& pos_sim, const Tensor& neg_sim) {
  if (pos_sim.rank() != 1 || neg_sim.rank() != 2 || neg_sim.rows() != pos_sim.size()) {
    throw ContractViolation(std::string(who) + ": expected {M} positives and {M, N} negatives, got " +
                            to_string(pos_sim.shape()) + " and " + to_string(neg_sim.shape()));
  }
  if (neg_sim.cols() == 0) throw ContractViolation(std::string(who) + ": need at least one negative (N = 0)");
}

Tensor as_column(const Tensor& v) { return reshape(v, {v.size(), 1}); }

}  // namespace

Tensor baseline_ntxent(const Tensor& pos_sim, const Tensor& neg_sim, double tau) {
  require_pairs("baseline_ntxent", pos_sim, neg_sim);
  return mean(-(pos_sim / tau) + logsumexp_rows(neg_sim / tau));
}

Tensor baseline_infonce(const Tensor& pos_sim, const Tensor& neg_sim, double tau) {
  require_pairs("baseline_infonce", pos_sim, neg_sim);
  return mean(-(pos_sim / tau) + logsumexp_rows(concat_cols(as_column(pos_sim), neg_sim) / tau));
}

Tensor baseline_simsiam(const Tensor& pred_a, const Tensor& proj_a, const Tensor& pred_b, const Tensor& proj_b) {
  const Tensor ab = cosine_sim(pred_a, stop_gradient(proj_b));
  const Tensor ba = cosine_sim(pred_b, stop_gradient(proj_a));
  return mean(-0.5 * ab - 0.5 * ba);
}

namespace {

std::vector<std::size_t> off_diagonal_indices(std::size_t n) {
  std::vector<std::size_t> idx;
  idx.reserve(n * (n - 1));
  for (std::size_t l = 0; l < n; ++l) {
    for (std::size_t m = 0; m < n; ++m) {
      if (l != m) idx.push_back(l * n + m);
    }
  }
  return idx;
}

Tensor off_diagonal(const Tensor& a) {
  const std::size_t n = a.rows();
  auto idx = off_diagonal_indices(n);
  const std::size_t count = idx.size();
  return gather(a, std::move(idx), {count});
}

}  // namespace

Tensor baseline_barlow(const Tensor& za, const Tensor& zb, double lambda) {
  const Tensor c = cross_correlation(za, zb);
  const Tensor on = sum(square(1.0 - diagonal(c)));
  if (c.rows() < 2) return on;
  return on + lambda * sum(square(off_diagonal(c)));
}

// -- adaptive multi-head --

namespace {

void require_head(const ContrastiveHead& h) {
  require_pairs("amcl", h.pos_sim, h.neg_sim);
  if (h.pos_tau.shape() != h.pos_sim.shape() || h.neg_tau.shape() != h.neg_sim.shape()) {
    throw ContractViolation("amcl: temperature shapes " + to_string(h.pos_tau.shape()) + ", " +
                            to_string(h.neg_tau.shape()) + " do not match similarity shapes " +
                            to_string(h.pos_sim.shape()) + ", " + to_string(h.neg_sim.shape()));
  }
}

// Shared body of NT-Xent and InfoNCE once the candidate set is fixed.
LossTerms contrastive_terms(const AmclConfig& cfg, std::span<const ContrastiveHead> heads, double d_prime) {
  if (heads.empty()) throw ContractViolation("amcl: need at least one head");
  LossTerms out;
  Tensor total = Tensor::scalar(0.0);
  for (const auto& h : heads) {
    require_head(h);
    const std::size_t m = h.neg_sim.rows();
    const std::size_t n = h.neg_sim.cols();
    const Tensor pos = -(h.pos_sim / h.pos_tau);
    const Tensor omega_pos = cfg.beta * omega(h.pos_tau, d_prime);
    Tensor neg;
    Tensor omega_neg = Tensor::filled({m}, 0.0);
    HeadTemperatures temps;
    temps.positive = h.pos_tau.values();
    if (cfg.neg_agg == NegativeAggregation::topk) {
      const std::size_t k = cfg.kappa;
      if (k < 1 || k > n) {
        throw ContractViolation("amcl: kappa = " + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                " candidates");
      }
      temps.selected = top_k_indices(h.neg_sim, k);
      std::vector<std::size_t> flat;
      flat.reserve(m * k);
      for (std::size_t i = 0; i < m; ++i) {
        for (const auto j : temps.selected[i]) flat.push_back(i * n + j);
      }
      const Tensor s_sel = gather(h.neg_sim, flat, {m, k});
      const Tensor t_sel = gather(h.neg_tau, std::move(flat), {m, k});
      neg = row_mean(s_sel / t_sel);
      const Tensor set_reg = cfg.literal_set_regularizer ? log(t_sel) + 1.0 / t_sel : omega(t_sel, d_prime);
      omega_neg = cfg.beta * row_sum(set_reg);
      temps.negative = t_sel.values();
    } else {
      neg = softmax_negative_aggregate(h.neg_sim, h.neg_tau, d_prime);
      temps.negative = h.neg_tau.values();
    }
    const Tensor head_loss = mean(pos + neg + omega_pos - omega_neg);
    total = total + head_loss;
    out.pos_term += mean(pos).item();
    out.neg_term += mean(neg).item();
    out.omega_term += mean(omega_pos - omega_neg).item();
    out.temperatures.push_back(std::move(temps));
  }
  out.total = total;
  return out;
}

}  // namespace

LossTerms amcl_ntxent(const AmclConfig& cfg, std::span<const ContrastiveHead> heads, double d_prime) {
  return contrastive_terms(cfg, heads, d_prime);
}

LossTerms amcl_infonce(const AmclConfig& cfg, std::span<const ContrastiveHead> heads, double d_prime) {
  std::vector<ContrastiveHead> extended;
  extended.reserve(heads.size());
  for (const auto& h : heads) {
    require_head(h);
    extended.push_back({h.pos_sim, h.pos_tau, concat_cols(h.neg_sim, as_column(h.pos_sim)),
                        concat_cols(h.neg_tau, as_column(h.pos_tau))});
  }
  return contrastive_terms(cfg, extended, d_prime);
}

LossTerms amcl_simsiam(const AmclConfig& cfg, std::span<const SiameseHead> heads, double d_prime) {
  if (heads.empty()) throw ContractViolation("amcl_simsiam: need at least one head");
  LossTerms out;
  Tensor total = Tensor::scalar(0.0);
  for (const auto& h : heads) {
    if (h.sim_ab.shape() != h.tau_ab.shape() || h.sim_ba.shape() != h.tau_ba.shape() ||
        h.sim_ab.shape() != h.sim_ba.shape()) {
      throw ContractViolation("amcl_simsiam: branch shapes disagree");
    }
    const Tensor pos = -(h.sim_ab / (2.0 * h.tau_ab)) - h.sim_ba / (2.0 * h.tau_ba);
    const Tensor reg = cfg.beta * (omega(h.tau_ab, d_prime) + omega(h.tau_ba, d_prime));
    total = total + mean(pos + reg);
    out.pos_term += mean(pos).item();
    out.omega_term += mean(reg).item();
    HeadTemperatures temps;
    temps.positive.resize(h.tau_ab.values().size() + h.tau_ba.values().size());
    temps.positive << h.tau_ab.values(), h.tau_ba.values();
    out.temperatures.push_back(std::move(temps));
  }
  out.total = total;
  return out;
}

LossTerms amcl_barlow(const AmclConfig& cfg, std::span<const BarlowHead> heads, double d_prime) {
  if (heads.empty()) throw ContractViolation("amcl_barlow: need at least one head");
  LossTerms out;
  Tensor total = Tensor::scalar(0.0);
  for (const auto& h : heads) {
    if (h.cross_corr.rank() != 2 || h.cross_corr.rows() != h.cross_corr.cols() ||
        h.tau.shape() != h.cross_corr.shape()) {
      throw ContractViolation("amcl_barlow: expected square cross-correlation and matching temperatures, got " +
                              to_string(h.cross_corr.shape()) + " and " + to_string(h.tau.shape()));
    }
    const Tensor c_diag = diagonal(h.cross_corr);
    const Tensor t_diag = diagonal(h.tau);
    const Tensor on = sum(square(1.0 - c_diag / t_diag));
    Tensor off = Tensor::scalar(0.0);
    Tensor reg = cfg.beta * sum(omega(t_diag, d_prime));
    HeadTemperatures temps;
    temps.positive = t_diag.values();
    if (h.cross_corr.rows() > 1) {
      const Tensor c_off = off_diagonal(h.cross_corr);
      const Tensor t_off = off_diagonal(h.tau);
      off = cfg.lambda * sum(square(c_off) / t_off);
      reg = reg - cfg.beta * sum(omega(t_off, d_prime));
      temps.negative = t_off.values();
    }
    total = total + on + off + reg;
    out.pos_term += on.item();
    out.neg_term += off.item();
    out.omega_term += reg.item();
    out.temperatures.push_back(std::move(temps));
  }
  out.total = total;
  return out;
}

// -- oracle --

namespace {

// Isotropic Gaussian density of squared distance `dist2` with variance tau.
Tensor gaussian_density(const Tensor& dist2, const Tensor& tau, double d_prime) {
  return pow(2.0 * std::numbers::pi * tau, -d_prime / 2.0) * exp(-(dist2 / (2.0 * tau)));
}

}  // namespace

Tensor mle_oracle(LossVariant variant, std::span<const OracleHead> heads, double d_prime) {
  if (variant != LossVariant::ntxent && variant != LossVariant::infonce) {
    throw ContractViolation("mle_oracle: only ntxent and infonce have a likelihood form");
  }
  if (heads.empty()) throw ContractViolation("mle_oracle: need at least one head");
  Tensor total = Tensor::scalar(0.0);
  for (const auto& h : heads) {
    const std::size_t m = h.anchor.rows();
    const std::size_t n = h.neg_tau.cols();
    const std::size_t d = h.anchor.cols();
    if (h.positive.shape() != h.anchor.shape() || h.negatives.rows() != m * n || h.negatives.cols() != d ||
        h.pos_tau.size() != m || h.neg_tau.rows() != m) {
      throw ContractViolation("mle_oracle: inconsistent head shapes");
    }
    std::vector<std::size_t> repeat;
    repeat.reserve(m * n * d);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t c = 0; c < d; ++c) repeat.push_back(i * d + c);
      }
    }
    const Tensor anchors = gather(h.anchor, std::move(repeat), {m * n, d});
    const Tensor dist_pos = row_sum(square(h.anchor - h.positive));
    const Tensor dist_neg = reshape(row_sum(square(anchors - h.negatives)), {m, n});
    const Tensor numerator = gaussian_density(dist_pos, h.pos_tau, d_prime);
    Tensor denominator = row_sum(gaussian_density(dist_neg, h.neg_tau, d_prime));
    if (variant == LossVariant::infonce) denominator = denominator + numerator;
    total = total + mean(log(denominator) - log(numerator));
  }
  return total;
}

double mle_offset(std::size_t heads, double d_prime) {
  return static_cast<double>(heads) * d_prime / 2.0 * std::log(2.0 * std::numbers::pi);
}

// -- builders --

Tensor pair_temperatures(const Tensor& a, const Tensor& b, const TemperatureContext& ctx) {
  if (ctx.kind == TemperatureKind::adaptive) {
    if (ctx.phi == nullptr) throw ContractViolation("adaptive temperatures need a temperature network");
    Tensor t = pairwise_temperatures(a, b, *ctx.phi, ctx.bounds);
    check_temperature_bounds(t, ctx.bounds);
    return t;
  }
  return Tensor::filled({a.rows(), b.rows()}, ctx.tau);
}

Tensor row_temperatures(const Tensor& a, const Tensor& b, const TemperatureContext& ctx) {
  if (ctx.kind == TemperatureKind::adaptive) {
    if (ctx.phi == nullptr) throw ContractViolation("adaptive temperatures need a temperature network");
    Tensor t = paired_temperatures(a, b, *ctx.phi, ctx.bounds);
    check_temperature_bounds(t, ctx.bounds);
    return t;
  }
  return Tensor::filled({a.rows()}, ctx.tau);
}

std::size_t partner_index(std::size_t i, std::size_t batch) { return i < batch ? i + batch : i - batch; }

ContrastiveHead in_batch_head(const Tensor& z, const TemperatureContext& ctx) {
  const std::size_t views = z.rows();
  if (z.rank() != 2 || views % 2 != 0 || views < 4) {
    throw ContractViolation("in_batch_head: need 2B stacked views with B >= 2, got " + to_string(z.shape()));
  }
  const std::size_t batch = views / 2;
  const std::size_t negs = views - 2;
  const Tensor sims = matmul(z, transpose(z));
  const Tensor taus = pair_temperatures(z, z, ctx);
  std::vector<std::size_t> pos_idx(views);
  std::vector<std::size_t> neg_idx;
  neg_idx.reserve(views * negs);
  for (std::size_t i = 0; i < views; ++i) {
    const std::size_t p = partner_index(i, batch);
    pos_idx[i] = i * views + p;
    for (std::size_t j = 0; j < views; ++j) {
      if (j != i && j != p) neg_idx.push_back(i * views + j);
    }
  }
  return {gather(sims, pos_idx, {views}), gather(taus, pos_idx, {views}), gather(sims, neg_idx, {views, negs}),
          gather(taus, neg_idx, {views, negs})};
}

SiameseHead siamese_head(const Tensor& pred_a, const Tensor& proj_a, const Tensor& pred_b, const Tensor& proj_b,
                         const TemperatureContext& ctx) {
  const Tensor pa = l2_normalize(pred_a);
  const Tensor pb = l2_normalize(pred_b);
  const Tensor za = l2_normalize(stop_gradient(proj_a));
  const Tensor zb = l2_normalize(stop_gradient(proj_b));
  return {rowwise_dot(pa, zb), rowwise_dot(pb, za), row_temperatures(pa, zb, ctx), row_temperatures(pb, za, ctx)};
}

Tensor batch_standardize(const Tensor& z) {
  if (z.rank() != 2 || z.rows() < 2) {
    throw ContractViolation("batch_standardize: need {N >= 2, d} input, got " + to_string(z.shape()));
  }
  const Tensor centered = z - batch_mean(z);
  return centered / sqrt(batch_mean(square(centered)));
}

void check_standardized(const Tensor& z) {
  if (z.rank() != 2 || z.rows() < 2) {
    throw ContractViolation("barlow: need {N >= 2, d'} projections, got " + to_string(z.shape()));
  }
  const auto m = z.matrix();
  const Eigen::RowVectorXd mu = m.colwise().mean();
  const Eigen::RowVectorXd sd = ((m.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index c = 0; c < mu.size(); ++c) {
    if (std::abs(mu[c]) > 1e-6 || std::abs(sd[c] - 1.0) > 1e-6) {
      throw ContractViolation("barlow: channel " + std::to_string(c) + " is not batch-standardized (mean " +
                              std::to_string(mu[c]) + ", std " + std::to_string(sd[c]) + ")");
    }
  }
}

Tensor cross_correlation(const Tensor& za, const Tensor& zb) {
  if (za.shape() != zb.shape()) {
    throw ContractViolation("cross_correlation: shape mismatch " + to_string(za.shape()) + " vs " +
                            to_string(zb.shape()));
  }
  check_standardized(za);
  check_standardized(zb);
  return matmul(transpose(za), zb) / static_cast<double>(za.rows());
}

BarlowHead barlow_head(const Tensor& za, const Tensor& zb, const TemperatureContext& ctx) {
  Tensor c = cross_correlation(za, zb);
  return {c, pair_temperatures(transpose(za), transpose(zb), ctx)};
}

}  // namespace amcl
