#include "amcl/checks.hpp"

#include "amcl/errors.hpp"
#include "amcl/gradcheck.hpp"
#include "amcl/rng.hpp"

#include <cmath>

namespace amcl {

namespace {

constexpr std::size_t kDim = 8;     // d'
constexpr std::size_t kBatch = 4;   // 2B = 8 views, N = 6 negatives
constexpr double kConstantTau = 0.5;

Tensor random_leaf(Shape shape, SplitMix64& rng, double scale = 1.0) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(numel(shape)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.uniform(-1.0, 1.0);
  return Tensor::parameter(std::move(shape), std::move(v));
}

std::vector<Tensor> random_leaves(std::size_t count, const Shape& shape, SplitMix64& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_leaf(shape, rng));
  return out;
}

TemperatureContext context(bool adaptive, const Mlp* phi) {
  TemperatureContext ctx;
  ctx.kind = adaptive ? TemperatureKind::adaptive : TemperatureKind::constant;
  ctx.tau = kConstantTau;
  ctx.phi = phi;
  return ctx;
}

std::vector<Tensor> with_phi(std::vector<Tensor> leaves, const Mlp& phi, bool adaptive) {
  if (adaptive) {
    for (const auto& p : phi.parameters()) leaves.push_back(p);
  }
  return leaves;
}

CheckResult run(std::string name, const std::function<Tensor()>& fn, std::vector<Tensor> params, double tol) {
  const auto report = finite_diff_check(fn, params, 1e-5);
  return {std::move(name), report.max_rel_error, tol};
}

std::string tag(bool adaptive, std::size_t heads) {
  return std::string(adaptive ? "adaptive" : "constant") + " C=" + std::to_string(heads);
}

}  // namespace

std::vector<CheckResult> gradcheck_suite(std::uint64_t seed, double tolerance) {
  std::vector<CheckResult> results;
  SplitMix64 rng(seed);
  const Mlp phi({{kDim, kDim}}, derive_seed(seed, "phi"));
  // Standardized columns have norm sqrt(N); shrink phi_bt so the temperatures
  // stay off the lower bound, where the loss reaches ~1e9 and central
  // differences lose all precision.
  const Mlp phi_bt({{2 * kBatch - 2, 2 * kBatch - 2}}, derive_seed(seed, "phi_bt"));
  for (auto p : phi_bt.parameters()) p.leaf_values() *= 0.25;

  for (const auto variant : {LossVariant::ntxent, LossVariant::infonce}) {
    for (const auto agg : {NegativeAggregation::topk, NegativeAggregation::softmax}) {
      for (const bool adaptive : {true, false}) {
        for (const std::size_t heads : {std::size_t{1}, std::size_t{3}}) {
          for (const std::size_t kappa : {std::size_t{1}, std::size_t{3}}) {
            if (agg == NegativeAggregation::softmax && kappa != 1) continue;
            AmclConfig cfg;
            cfg.variant = variant;
            cfg.heads = heads;
            cfg.beta = 1.0;
            cfg.kappa = kappa;
            cfg.neg_agg = agg;
            const auto ctx = context(adaptive, &phi);
            auto raw = random_leaves(heads, {2 * kBatch, kDim}, rng);
            auto fn = [cfg, ctx, raw]() {
              std::vector<ContrastiveHead> hs;
              for (const auto& r : raw) hs.push_back(in_batch_head(l2_normalize(r), ctx));
              return (cfg.variant == LossVariant::ntxent ? amcl_ntxent(cfg, hs, kDim) : amcl_infonce(cfg, hs, kDim))
                  .total;
            };
            std::string name = std::string("amcl_") + std::string(to_string(variant)) + " " +
                               std::string(to_string(agg)) + " " + tag(adaptive, heads);
            if (agg == NegativeAggregation::topk) name += " kappa=" + std::to_string(kappa);
            results.push_back(run(std::move(name), fn, with_phi(raw, phi, adaptive), tolerance));
          }
        }
      }
    }
  }

  for (const bool adaptive : {true, false}) {
    for (const std::size_t heads : {std::size_t{1}, std::size_t{3}}) {
      AmclConfig cfg;
      cfg.variant = LossVariant::simsiam;
      cfg.heads = heads;
      const auto ctx = context(adaptive, &phi);
      auto pred_a = random_leaves(heads, {kBatch, kDim}, rng);
      auto pred_b = random_leaves(heads, {kBatch, kDim}, rng);
      auto proj_a = random_leaves(heads, {kBatch, kDim}, rng);
      auto proj_b = random_leaves(heads, {kBatch, kDim}, rng);
      auto fn = [=]() {
        std::vector<SiameseHead> hs;
        for (std::size_t c = 0; c < heads; ++c) hs.push_back(siamese_head(pred_a[c], proj_a[c], pred_b[c], proj_b[c], ctx));
        return amcl_simsiam(cfg, hs, kDim).total;
      };
      // Stop-gradient branches are probed separately: their analytic
      // gradient is zero by construction.
      std::vector<Tensor> params = pred_a;
      params.insert(params.end(), pred_b.begin(), pred_b.end());
      results.push_back(run("amcl_simsiam " + tag(adaptive, heads), fn, with_phi(params, phi, adaptive), tolerance));
    }
  }

  for (const bool adaptive : {true, false}) {
    for (const std::size_t heads : {std::size_t{1}, std::size_t{3}}) {
      AmclConfig cfg;
      cfg.variant = LossVariant::barlow;
      cfg.heads = heads;
      cfg.lambda = 0.5;
      const auto ctx = context(adaptive, &phi_bt);
      auto za = random_leaves(heads, {2 * kBatch - 2, kDim}, rng);
      auto zb = random_leaves(heads, {2 * kBatch - 2, kDim}, rng);
      auto fn = [=]() {
        std::vector<BarlowHead> hs;
        for (std::size_t c = 0; c < heads; ++c) {
          hs.push_back(barlow_head(batch_standardize(za[c]), batch_standardize(zb[c]), ctx));
        }
        return amcl_barlow(cfg, hs, kDim).total;
      };
      std::vector<Tensor> params = za;
      params.insert(params.end(), zb.begin(), zb.end());
      results.push_back(run("amcl_barlow " + tag(adaptive, heads), fn, with_phi(params, phi_bt, adaptive), tolerance));
    }
  }

  {
    const auto ctx = context(false, nullptr);
    auto raw = random_leaf({2 * kBatch, kDim}, rng);
    results.push_back(run(
        "baseline_ntxent",
        [=]() {
          const auto h = in_batch_head(l2_normalize(raw), ctx);
          return baseline_ntxent(h.pos_sim, h.neg_sim, kConstantTau);
        },
        {raw}, tolerance));
    results.push_back(run(
        "baseline_infonce",
        [=]() {
          const auto h = in_batch_head(l2_normalize(raw), ctx);
          return baseline_infonce(h.pos_sim, h.neg_sim, kConstantTau);
        },
        {raw}, tolerance));
    auto pa = random_leaf({kBatch, kDim}, rng);
    auto pb = random_leaf({kBatch, kDim}, rng);
    auto za = random_leaf({kBatch, kDim}, rng);
    auto zb = random_leaf({kBatch, kDim}, rng);
    results.push_back(run(
        "baseline_simsiam", [=]() { return baseline_simsiam(pa, za, pb, zb); }, {pa, pb}, tolerance));
    auto ba = random_leaf({2 * kBatch - 2, kDim}, rng);
    auto bb = random_leaf({2 * kBatch - 2, kDim}, rng);
    results.push_back(run(
        "baseline_barlow",
        [=]() { return baseline_barlow(batch_standardize(ba), batch_standardize(bb), 0.5); }, {ba, bb}, tolerance));
  }
  return results;
}

EquivalenceResult mle_equivalence(LossVariant variant, std::uint64_t seed, std::size_t instances) {
  if (variant != LossVariant::ntxent && variant != LossVariant::infonce) {
    throw ContractViolation("mle_equivalence: variant must be ntxent or infonce");
  }
  EquivalenceResult out;
  out.instances = instances;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::uint64_t inst_seed = derive_seed(seed, {static_cast<std::uint64_t>(t)});
    SplitMix64 rng(inst_seed);
    const std::size_t heads = 1 + static_cast<std::size_t>(rng.below(3));
    const std::size_t batch = 2 + static_cast<std::size_t>(rng.below(3));
    const std::size_t views = 2 * batch;
    const bool adaptive = (t % 2) == 0;
    const Mlp phi({{kDim, kDim}}, derive_seed(inst_seed, "phi"));
    TemperatureContext ctx = context(adaptive, &phi);
    ctx.tau = rng.uniform(0.2, 1.5);
    auto raw = random_leaves(heads, {views, kDim}, rng);

    AmclConfig cfg;
    cfg.variant = variant;
    cfg.heads = heads;
    cfg.beta = 1.0;
    cfg.neg_agg = NegativeAggregation::softmax;

    std::vector<ContrastiveHead> hs;
    std::vector<OracleHead> os;
    for (const auto& r : raw) {
      const Tensor z = l2_normalize(r);
      ContrastiveHead h = in_batch_head(z, ctx);
      std::vector<std::size_t> pos_rows;
      std::vector<std::size_t> neg_rows;
      for (std::size_t i = 0; i < views; ++i) {
        const std::size_t p = partner_index(i, batch);
        for (std::size_t c = 0; c < kDim; ++c) pos_rows.push_back(p * kDim + c);
        for (std::size_t j = 0; j < views; ++j) {
          if (j == i || j == p) continue;
          for (std::size_t c = 0; c < kDim; ++c) neg_rows.push_back(j * kDim + c);
        }
      }
      const std::size_t negs = views - 2;
      os.push_back({z, gather(z, std::move(pos_rows), {views, kDim}), gather(z, std::move(neg_rows), {views * negs, kDim}),
                    h.pos_tau, h.neg_tau});
      hs.push_back(std::move(h));
    }
    const Tensor loss = (variant == LossVariant::ntxent ? amcl_ntxent(cfg, hs, kDim) : amcl_infonce(cfg, hs, kDim)).total;
    const Tensor oracle = mle_oracle(variant, os, kDim);

    const double expected = oracle.item() - mle_offset(heads, kDim);
    out.value_error =
        std::max(out.value_error, std::abs(loss.item() - expected) / std::max(1.0, std::abs(expected)));

    std::vector<Tensor> params = with_phi(raw, phi, adaptive);
    zero_grad(params);
    backward(loss);
    std::vector<Eigen::VectorXd> g_loss;
    for (const auto& p : params) g_loss.push_back(p.grad());
    zero_grad(params);
    backward(oracle);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Eigen::VectorXd g_oracle = params[k].grad();
      for (Eigen::Index i = 0; i < g_oracle.size(); ++i) {
        const double err = std::abs(g_loss[k][i] - g_oracle[i]) / std::max(1.0, std::abs(g_oracle[i]));
        out.grad_error = std::max(out.grad_error, err);
      }
    }
  }
  return out;
}

StopGradientProbe simsiam_stop_gradient_probe(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const Mlp phi({{kDim, kDim}}, derive_seed(seed, "phi"));
  const auto ctx = context(true, &phi);
  AmclConfig cfg;
  cfg.variant = LossVariant::simsiam;
  cfg.heads = 2;
  auto pred_a = random_leaves(2, {kBatch, kDim}, rng);
  auto pred_b = random_leaves(2, {kBatch, kDim}, rng);
  auto proj_a = random_leaves(2, {kBatch, kDim}, rng);
  auto proj_b = random_leaves(2, {kBatch, kDim}, rng);
  auto fn = [&]() {
    std::vector<SiameseHead> hs;
    for (std::size_t c = 0; c < 2; ++c) hs.push_back(siamese_head(pred_a[c], proj_a[c], pred_b[c], proj_b[c], ctx));
    return amcl_simsiam(cfg, hs, kDim).total;
  };
  std::vector<Tensor> branches = proj_a;
  branches.insert(branches.end(), proj_b.begin(), proj_b.end());
  for (auto& b : branches) b.zero_grad();
  backward(fn());

  StopGradientProbe probe;
  probe.min_fd_sensitivity = std::numeric_limits<double>::infinity();
  const double h = 1e-5;
  for (auto& b : branches) {
    probe.max_abs_analytic = std::max(probe.max_abs_analytic, b.grad().cwiseAbs().maxCoeff());
    double sensitivity = 0.0;
    Eigen::VectorXd& v = b.leaf_values();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = fn().item();
      v[i] = saved - h;
      const double down = fn().item();
      v[i] = saved;
      sensitivity = std::max(sensitivity, std::abs(up - down) / (2.0 * h));
    }
    probe.min_fd_sensitivity = std::min(probe.min_fd_sensitivity, sensitivity);
  }
  return probe;
}

}  // namespace amcl
