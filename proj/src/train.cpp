#include "amcl/train.hpp"

#include "amcl/amtd.hpp"
#include "amcl/errors.hpp"
#include "amcl/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace amcl {

std::optional<double> temperature_for_step(const TemperatureMode& mode, double epoch) {
  switch (mode.kind) {
    case TemperatureKind::constant:
      return mode.tau0;
    case TemperatureKind::cosine_schedule:
      return mode.tau_min +
             0.5 * (mode.tau_max - mode.tau_min) * (1.0 + std::cos(2.0 * std::numbers::pi * epoch / mode.period));
    case TemperatureKind::adaptive:
      break;
  }
  return std::nullopt;
}

std::pair<Dataset, Dataset> experiment_split(const ExperimentConfig& cfg, const Dataset& all) {
  return split_dataset(all, cfg.eval.held_out, derive_seed(cfg.train.seed, "split"));
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay, double grad_clip)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay), grad_clip_(grad_clip) {
  for (const auto& p : params_) velocity_.push_back(Eigen::VectorXd::Zero(p.values().size()));
}

void SgdMomentum::step(double lr) {
  double scale = 1.0;
  if (grad_clip_ > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_) sq += p.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > grad_clip_) scale = grad_clip_ / norm;
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Eigen::VectorXd& w = params_[k].leaf_values();
    velocity_[k] = momentum_ * velocity_[k] + scale * params_[k].grad() + weight_decay_ * w;
    w -= lr * velocity_[k];
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

namespace {

struct StepResult {
  LossTerms terms;
  Tensor baseline;  // baseline NT-Xent on head 0, when requested
  double tau = 0.0;  // constant / scheduled temperature of this step
};

std::size_t image_side(const Dataset& ds) {
  if (ds.size() == 0) throw ContractViolation("dataset is empty");
  const auto& img = ds.images[0];
  if (img.width != img.height) throw ContractViolation("images must be square");
  return img.width;
}

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, const Dataset& train)
      : cfg_(cfg),
        train_(train),
        pipeline_(cfg.pipeline(image_side(train))),
        model_(cfg.model_config(pipeline_.output_size * pipeline_.output_size * train.images[0].channels),
               derive_seed(cfg.train.seed, "model")),
        params_(model_.parameters()),
        sgd_(params_, cfg.train.momentum, cfg.train.weight_decay, cfg.train.grad_clip),
        aug_seed_(derive_seed(cfg.train.seed, "augment")),
        shuffle_seed_(derive_seed(cfg.train.seed, "shuffle")) {
    loss_cfg_ = cfg.loss;
    loss_cfg_.heads = cfg.model.heads;
    steps_per_epoch_ = train.size() / cfg.train.batch_size;
    if (steps_per_epoch_ == 0) {
      throw ContractViolation("training set (" + std::to_string(train.size()) + " images) is smaller than one batch");
    }
  }

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t total_steps() const { return steps_per_epoch_ * cfg_.train.epochs; }
  const ModelBundle& model() const { return model_; }
  ModelBundle& model() { return model_; }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    return shuffled_indices(train_.size(), derive_seed(shuffle_seed_, {static_cast<std::uint64_t>(epoch)}));
  }

  // Stacked views [a_0..a_{B-1}, b_0..b_{B-1}] for one batch.
  Tensor batch_views(std::span<const std::size_t> indices, std::size_t epoch) const {
    std::vector<Image> views(2 * indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      auto [a, b] = make_two_views(train_.images[indices[i]], pipeline_, epoch, indices[i], aug_seed_);
      views[i] = std::move(a);
      views[indices.size() + i] = std::move(b);
    }
    return Tensor::constant(images_to_rows(views));
  }

  StepResult forward(const Tensor& x, std::size_t epoch, bool want_baseline) const {
    const std::size_t batch = x.rows() / 2;
    const double d_prime = static_cast<double>(cfg_.model.projection_width);
    const auto tau = temperature_for_step(cfg_.loss.temp_mode, static_cast<double>(epoch));
    TemperatureContext ctx;
    ctx.kind = tau ? TemperatureKind::constant : TemperatureKind::adaptive;
    ctx.tau = tau.value_or(0.0);
    ctx.phi = &model_.temp_net;
    ctx.bounds = cfg_.loss.bounds;

    StepResult out;
    out.tau = ctx.tau;
    const Tensor h = model_.encoder(x);
    switch (cfg_.loss.variant) {
      case LossVariant::ntxent:
      case LossVariant::infonce: {
        std::vector<ContrastiveHead> heads;
        for (const auto& g : model_.heads) heads.push_back(in_batch_head(l2_normalize(g(h)), ctx));
        out.terms = cfg_.loss.variant == LossVariant::ntxent ? amcl_ntxent(loss_cfg_, heads, d_prime)
                                                             : amcl_infonce(loss_cfg_, heads, d_prime);
        if (want_baseline) {
          if (!tau) throw ContractViolation("baseline comparison needs a constant temperature");
          out.baseline = baseline_ntxent(heads[0].pos_sim, heads[0].neg_sim, *tau);
        }
        break;
      }
      case LossVariant::simsiam: {
        std::vector<SiameseHead> heads;
        for (const auto& g : model_.heads) {
          const Tensor proj = g(h);
          const Tensor pred = (*model_.predictor)(proj);
          heads.push_back(siamese_head(slice_rows(pred, 0, batch), slice_rows(proj, 0, batch),
                                       slice_rows(pred, batch, batch), slice_rows(proj, batch, batch), ctx));
        }
        out.terms = amcl_simsiam(loss_cfg_, heads, d_prime);
        break;
      }
      case LossVariant::barlow: {
        TemperatureContext bctx = ctx;
        bctx.phi = model_.barlow_temp_net ? &*model_.barlow_temp_net : nullptr;
        std::vector<BarlowHead> heads;
        for (const auto& g : model_.heads) {
          const Tensor proj = g(h);
          heads.push_back(barlow_head(batch_standardize(slice_rows(proj, 0, batch)),
                                      batch_standardize(slice_rows(proj, batch, batch)), bctx));
        }
        out.terms = amcl_barlow(loss_cfg_, heads, d_prime);
        break;
      }
    }
    return out;
  }

  // Degenerate projections (all-zero rows) surface as evaluation failures.
  StepResult guarded_forward(const Tensor& x, std::size_t epoch, std::size_t step, bool want_baseline) const {
    try {
      return forward(x, epoch, want_baseline);
    } catch (const DomainError& e) {
      throw EvaluationError("numerical failure at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            "): " + e.what());
    }
  }

  StepLog log_row(const StepResult& r, std::size_t epoch, std::size_t step) const {
    StepLog row;
    row.epoch = epoch;
    row.step = step;
    row.loss = r.terms.total.item();
    row.pos_term = r.terms.pos_term;
    row.neg_term = r.terms.neg_term;
    row.omega_term = r.terms.omega_term;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<Eigen::VectorXd> positives;
    for (const auto& t : r.terms.temperatures) {
      for (const Eigen::VectorXd* v : {&t.positive, &t.negative}) {
        if (v->size() == 0) continue;
        lo = std::min(lo, v->minCoeff());
        hi = std::max(hi, v->maxCoeff());
        sum += v->sum();
        count += static_cast<std::size_t>(v->size());
      }
      positives.push_back(t.positive);
    }
    row.tau_min = lo;
    row.tau_max = hi;
    row.tau_mean = sum / static_cast<double>(count);
    row.tau_var_heads = temperature_stats(positives).cross_head_variance;
    return row;
  }

  void check_finite(const StepResult& r, std::size_t epoch, std::size_t step) const {
    const double v = r.terms.total.item();
    if (!std::isfinite(v) || !r.terms.total.values().allFinite()) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "non-finite loss at step %zu (epoch %zu): pos_term=%g neg_term=%g omega_term=%g",
                    step, epoch, r.terms.pos_term, r.terms.neg_term, r.terms.omega_term);
      throw EvaluationError(buf);
    }
  }

  void update(std::size_t step) { sgd_.step(cosine_lr(cfg_.train.lr, step, total_steps())); }

  std::vector<Tensor>& params() { return params_; }

 private:
  const ExperimentConfig& cfg_;
  const Dataset& train_;
  AugPipeline pipeline_;
  ModelBundle model_;
  std::vector<Tensor> params_;
  SgdMomentum sgd_;
  AmclConfig loss_cfg_;
  std::uint64_t aug_seed_;
  std::uint64_t shuffle_seed_;
  std::size_t steps_per_epoch_ = 0;
};

bool eval_due(const ExperimentConfig& cfg, std::size_t epoch) {
  if (epoch + 1 == cfg.train.epochs) return true;
  return cfg.train.eval_every > 0 && (epoch + 1) % cfg.train.eval_every == 0;
}

}  // namespace

PretrainResult pretrain(const ExperimentConfig& cfg, const Dataset& train, const Dataset& held_out,
                        const PretrainOptions& options) {
  cfg.validate();
  Trainer trainer(cfg, train);
  RunLog log;
  std::vector<SeparabilityReport> last_reports;
  const std::size_t batch = cfg.train.batch_size;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto order = trainer.epoch_order(epoch);
    for (std::size_t s = 0; s < trainer.steps_per_epoch(); ++s, ++step) {
      const Tensor x = trainer.batch_views(std::span(order).subspan(s * batch, batch), epoch);
      const StepResult r = trainer.guarded_forward(x, epoch, step, false);
      trainer.check_finite(r, epoch, step);
      zero_grad(trainer.params());
      backward(r.terms.total);
      trainer.update(step);
      log.steps.push_back(trainer.log_row(r, epoch, step));
      if (options.on_step) options.on_step(log.steps.back());
    }
    if (options.evaluate && eval_due(cfg, epoch)) {
      auto ev = evaluate(trainer.model(), cfg, train, held_out, epoch);
      log.evals.push_back(ev.row);
      log.probes.insert(log.probes.end(), ev.probes.begin(), ev.probes.end());
      last_reports = std::move(ev.separability);
    }
  }
  return {std::move(trainer.model()), std::move(log), std::move(last_reports)};
}

ReductionCheckResult reduction_check(const ExperimentConfig& base, const Dataset& train, std::size_t steps) {
  ExperimentConfig cfg = base;
  cfg.model.heads = 1;
  cfg.loss.heads = 1;
  cfg.loss.variant = LossVariant::ntxent;
  cfg.loss.neg_agg = NegativeAggregation::softmax;
  if (cfg.loss.temp_mode.kind == TemperatureKind::adaptive) cfg.loss.temp_mode.kind = TemperatureKind::constant;
  cfg.validate();

  Trainer trainer(cfg, train);
  // Run enough epochs to cover `steps`, keeping the schedule of a full run.
  cfg.train.epochs = std::max(cfg.train.epochs, (steps + trainer.steps_per_epoch() - 1) / trainer.steps_per_epoch());
  const double d_prime = static_cast<double>(cfg.model.projection_width);
  const std::size_t batch = cfg.train.batch_size;
  ReductionCheckResult out;
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < steps; ++epoch) {
    const auto order = trainer.epoch_order(epoch);
    for (std::size_t s = 0; s < trainer.steps_per_epoch() && step < steps; ++s, ++step) {
      const Tensor x = trainer.batch_views(std::span(order).subspan(s * batch, batch), epoch);
      const StepResult r = trainer.guarded_forward(x, epoch, step, true);
      trainer.check_finite(r, epoch, step);

      auto& params = trainer.params();
      zero_grad(params);
      backward(r.baseline);
      std::vector<Eigen::VectorXd> g_base;
      for (const auto& p : params) g_base.push_back(p.grad());
      zero_grad(params);
      backward(r.terms.total);
      double diff = 0.0, norm = 0.0;
      for (std::size_t k = 0; k < params.size(); ++k) {
        diff += (params[k].grad() - g_base[k]).squaredNorm();
        norm += g_base[k].squaredNorm();
      }
      out.max_rel_error = std::max(out.max_rel_error, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300));

      const double tau = r.tau;
      const double gap = -1.0 / tau - d_prime / 2.0 * std::log(2.0 * std::numbers::pi * tau) +
                         cfg.loss.beta * omega(tau, d_prime);
      const double observed = r.terms.total.item() - r.baseline.item();
      out.max_loss_gap_error = std::max(out.max_loss_gap_error, std::abs(observed - gap) / std::max(1.0, std::abs(gap)));

      trainer.update(step);
      out.steps = step + 1;
    }
  }
  return out;
}

// -- evaluation --

RowMatrixXd backbone_features(const ModelBundle& model, std::span<const Image> images) {
  if (images.empty()) return RowMatrixXd(0, static_cast<Eigen::Index>(model.config.feature_width));
  return encode(model, Tensor::constant(images_to_rows(images))).matrix();
}

namespace {

RowMatrixXd normalized_rows(const RowMatrixXd& m) {
  RowMatrixXd out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

int knn_vote(const Eigen::VectorXd& dist, std::span<const int> labels, std::size_t k) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double da = dist[static_cast<Eigen::Index>(a)];
                      const double db = dist[static_cast<Eigen::Index>(b)];
                      return da < db || (da == db && a < b);
                    });
  int max_label = 0;
  for (std::size_t j = 0; j < k; ++j) max_label = std::max(max_label, labels[order[j]]);
  std::vector<std::size_t> votes(static_cast<std::size_t>(max_label + 1), 0);
  std::vector<double> dsum(votes.size(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const auto c = static_cast<std::size_t>(labels[order[j]]);
    ++votes[c];
    dsum[c] += dist[static_cast<Eigen::Index>(order[j])];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && votes[c] > 0 && dsum[c] < dsum[best])) best = c;
  }
  return static_cast<int>(best);
}

}  // namespace

int knn_predict(const RowMatrixXd& train, std::span<const int> train_labels, const Eigen::RowVectorXd& query,
                std::size_t k) {
  RowMatrixXd q(1, query.size());
  q.row(0) = query;
  const std::vector<int> fake{0};
  RowMatrixXd t = train;
  if (train.rows() == 0) throw ContractViolation("knn: empty training set");
  const Eigen::VectorXd sims = normalized_rows(t) * normalized_rows(q).row(0).transpose();
  if (k < 1 || k > train_labels.size()) throw ContractViolation("knn: k must be in [1, train size]");
  return knn_vote((1.0 - sims.array()).matrix(), train_labels, k);
}

double knn_eval(const RowMatrixXd& train, std::span<const int> train_labels, const RowMatrixXd& test,
                std::span<const int> test_labels, std::size_t k) {
  if (train.rows() == 0 || train_labels.empty()) throw ContractViolation("knn: empty training set");
  if (static_cast<std::size_t>(train.rows()) != train_labels.size() ||
      static_cast<std::size_t>(test.rows()) != test_labels.size()) {
    throw ContractViolation("knn: feature and label counts differ");
  }
  if (k < 1 || k > train_labels.size()) {
    throw ContractViolation("knn: k = " + std::to_string(k) + " must be in [1, " + std::to_string(train_labels.size()) + "]");
  }
  if (test.rows() == 0) return 0.0;
  const RowMatrixXd tr = normalized_rows(train);
  const RowMatrixXd te = normalized_rows(test);
  const Eigen::MatrixXd sims = te * tr.transpose();
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < te.rows(); ++i) {
    const Eigen::VectorXd dist = (1.0 - sims.row(i).array()).matrix().transpose();
    correct += knn_vote(dist, train_labels, k) == test_labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(te.rows());
}

double linear_probe(const RowMatrixXd& train, std::span<const int> train_labels, const RowMatrixXd& test,
                    std::span<const int> test_labels, std::size_t subset_per_class, std::uint64_t seed,
                    const ProbeSettings& settings) {
  if (static_cast<std::size_t>(train.rows()) != train_labels.size() ||
      static_cast<std::size_t>(test.rows()) != test_labels.size()) {
    throw ContractViolation("probe: feature and label counts differ");
  }
  int max_label = -1;
  for (const int l : train_labels) max_label = std::max(max_label, l);
  for (const int l : test_labels) max_label = std::max(max_label, l);
  const auto classes = static_cast<std::size_t>(max_label + 1);
  if (classes == 0) throw ContractViolation("probe: no labels");

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < train_labels.size(); ++i) by_class[static_cast<std::size_t>(train_labels[i])].push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < classes; ++c) {
    if (subset_per_class == 0 || by_class[c].empty()) {
      throw ContractViolation("probe: class " + std::to_string(c) + " is absent from the labeled subset");
    }
    if (by_class[c].size() < subset_per_class) {
      throw ContractViolation("probe: subset size " + std::to_string(subset_per_class) + " exceeds the " +
                              std::to_string(by_class[c].size()) + " samples of class " + std::to_string(c));
    }
    const auto perm = shuffled_indices(by_class[c].size(), derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    for (std::size_t j = 0; j < subset_per_class; ++j) chosen.push_back(by_class[c][perm[j]]);
  }

  const auto n = static_cast<Eigen::Index>(chosen.size());
  const Eigen::Index d = train.cols();
  Eigen::MatrixXd x(n, d);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(classes));
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = train.row(static_cast<Eigen::Index>(chosen[static_cast<std::size_t>(i)]));
    y(i, train_labels[chosen[static_cast<std::size_t>(i)]]) = 1.0;
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  Eigen::RowVectorXd sd = ((x.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;
  }
  x = (x.rowwise() - mu).array().rowwise() / sd.array();

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(classes));
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(classes));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < settings.iterations; ++it) {
    Eigen::MatrixXd logits = (x * w).rowwise() + b;
    const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
    logits = (logits.colwise() - mx).array().exp();
    const Eigen::VectorXd z = logits.rowwise().sum();
    const Eigen::MatrixXd p = logits.array().colwise() / z.array();
    const Eigen::MatrixXd err = (p - y) * inv_n;
    w -= settings.lr * (x.transpose() * err + settings.l2 * w);
    b -= settings.lr * err.colwise().sum();
  }

  if (test.rows() == 0) return 0.0;
  const Eigen::MatrixXd xt = (test.rowwise() - mu).array().rowwise() / sd.array();
  const Eigen::MatrixXd scores = (xt * w).rowwise() + b;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    correct += static_cast<int>(arg) == test_labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

std::vector<SeparabilityReport> separability_analysis(const ModelBundle& model, const ExperimentConfig& cfg,
                                                      const Dataset& held_out) {
  if (held_out.size() < 2) throw ContractViolation("separability: need at least two held-out images");
  const auto pipeline = cfg.pipeline(image_side(held_out));
  const std::uint64_t seed = derive_seed(cfg.train.seed, "separability");
  constexpr std::uint64_t kEvalEpoch = ~std::uint64_t{0};
  SplitMix64 rng(derive_seed(seed, "pairs"));

  const std::size_t np = cfg.eval.positive_pairs;
  const std::size_t nn = cfg.eval.negative_pairs;
  std::vector<Image> left, right;
  left.reserve(np + nn);
  right.reserve(np + nn);
  for (std::size_t p = 0; p < np; ++p) {
    const auto i = static_cast<std::size_t>(rng.below(held_out.size()));
    auto [a, b] = make_two_views(held_out.images[i], pipeline, kEvalEpoch, p, seed);
    left.push_back(std::move(a));
    right.push_back(std::move(b));
  }
  for (std::size_t p = 0; p < nn; ++p) {
    const auto i = static_cast<std::size_t>(rng.below(held_out.size()));
    auto j = static_cast<std::size_t>(rng.below(held_out.size() - 1));
    if (j >= i) ++j;
    left.push_back(make_two_views(held_out.images[i], pipeline, kEvalEpoch, np + p, seed).first);
    right.push_back(make_two_views(held_out.images[j], pipeline, kEvalEpoch, np + p, seed).second);
  }

  const Tensor hl = encode(model, Tensor::constant(images_to_rows(left)));
  const Tensor hr = encode(model, Tensor::constant(images_to_rows(right)));
  std::vector<RowMatrixXd> zl, zr;
  for (std::size_t c = 0; c < model.heads.size(); ++c) {
    zl.push_back(model.heads[c](hl).matrix());
    zr.push_back(model.heads[c](hr).matrix());
  }
  const std::vector<RowMatrixXd> bl{hl.matrix()}, br{hr.matrix()};
  const auto proj = pair_similarities(zl, zr);
  const auto back = pair_similarities(bl, br);
  const std::span<const double> pv(proj), bv(back);
  return {separability("projected", pv.first(np), pv.subspan(np)),
          separability("backbone", bv.first(np), bv.subspan(np))};
}

EvaluationResult evaluate(const ModelBundle& model, const ExperimentConfig& cfg, const Dataset& train,
                          const Dataset& held_out, std::size_t epoch) {
  EvaluationResult out;
  out.row.epoch = epoch;
  const RowMatrixXd ftr = backbone_features(model, train.images);
  const RowMatrixXd fte = backbone_features(model, held_out.images);
  const std::size_t k = std::min(cfg.eval.knn_k, train.size());
  out.row.knn_acc = knn_eval(ftr, train.labels, fte, held_out.labels, k);

  const ProbeSettings ps{cfg.eval.probe_iterations, cfg.eval.probe_lr, cfg.eval.probe_l2};
  std::size_t largest = 0;
  for (const auto s : cfg.eval.probe_subsets) {
    const double acc = linear_probe(ftr, train.labels, fte, held_out.labels, s,
                                    derive_seed(derive_seed(cfg.train.seed, "probe"), {static_cast<std::uint64_t>(s)}), ps);
    out.probes.push_back({epoch, s, acc});
    if (s >= largest) {
      largest = s;
      out.row.probe_acc = acc;
    }
  }
  out.separability = separability_analysis(model, cfg, held_out);
  out.row.overlap = out.separability[0].overlap;
  return out;
}

// -- I/O --

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::ofstream open_append(const std::filesystem::path& path, const char* header) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << header << '\n';
  return out;
}

}  // namespace

void write_train_log(const std::filesystem::path& path, std::span<const StepLog> steps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,step,loss,pos_term,neg_term,omega_term,tau_min,tau_mean,tau_max,tau_var_heads\n";
  for (const auto& s : steps) {
    out << s.epoch << ',' << s.step << ',' << fmt(s.loss) << ',' << fmt(s.pos_term) << ',' << fmt(s.neg_term) << ','
        << fmt(s.omega_term) << ',' << fmt(s.tau_min) << ',' << fmt(s.tau_mean) << ',' << fmt(s.tau_max) << ','
        << fmt(s.tau_var_heads) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void append_eval_log(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  auto out = open_append(path, "epoch,knn_acc,probe_acc,overlap");
  for (const auto& r : rows) {
    out << r.epoch << ',' << fmt(r.knn_acc) << ',' << fmt(r.probe_acc) << ',' << fmt(r.overlap) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void append_probe_log(const std::filesystem::path& path, std::span<const ProbeRow> rows) {
  auto out = open_append(path, "epoch,subset_per_class,probe_acc");
  for (const auto& r : rows) out << r.epoch << ',' << r.subset_per_class << ',' << fmt(r.probe_acc) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& model) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream bin(dir / "checkpoint.amtd", std::ios::binary);
  if (!bin) throw IoError("cannot write " + (dir / "checkpoint.amtd").string());

  nlohmann::json manifest;
  const auto& c = model.config;
  manifest["format"] = "amcl-checkpoint";
  manifest["version"] = 1;
  manifest["model"] = {{"input_width", c.input_width},   {"encoder_hidden", c.encoder_hidden},
                       {"feature_width", c.feature_width}, {"projection_width", c.projection_width},
                       {"heads", c.heads},                 {"predictor", c.predictor},
                       {"barlow_batch", c.barlow_batch}};
  for (const auto& [name, mlp] : model.components()) {
    manifest["components"].push_back({{"name", name}, {"widths", mlp->spec().widths}});
  }
  std::size_t offset = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    const auto bytes = encode_amtd(t, AmtdDtype::float32);
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes.size()}});
    offset += bytes.size();
  }
  if (!bin) throw IoError("write failed: " + (dir / "checkpoint.amtd").string());
  std::ofstream js(dir / "checkpoint.json");
  if (!js) throw IoError("cannot write " + (dir / "checkpoint.json").string());
  js << manifest.dump(2) << '\n';
}

ModelBundle load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "checkpoint.json");
  if (!js) throw IoError("cannot open " + (dir / "checkpoint.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const std::exception& e) {
    throw ParseError("checkpoint.json", e.what());
  }
  std::ifstream bin(dir / "checkpoint.amtd", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "checkpoint.amtd").string());
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  try {
    ModelConfig c;
    const auto& m = manifest.at("model");
    c.input_width = m.at("input_width");
    c.encoder_hidden = m.at("encoder_hidden");
    c.feature_width = m.at("feature_width");
    c.projection_width = m.at("projection_width");
    c.heads = m.at("heads");
    c.predictor = m.at("predictor");
    c.barlow_batch = m.at("barlow_batch");

    std::map<std::string, Tensor> tensors;
    for (const auto& t : manifest.at("tensors")) {
      const std::size_t off = t.at("offset");
      const std::size_t len = t.at("bytes");
      if (off + len > blob.size()) throw ParseError("checkpoint.amtd", "tensor extends past end of file");
      const std::vector<std::uint8_t> chunk(blob.begin() + static_cast<std::ptrdiff_t>(off),
                                            blob.begin() + static_cast<std::ptrdiff_t>(off + len));
      const Tensor v = decode_amtd(chunk);
      if (v.shape() != t.at("shape").get<Shape>()) throw ParseError("checkpoint.json", "shape mismatch for " + t.at("name").get<std::string>());
      tensors.emplace(t.at("name").get<std::string>(), Tensor::parameter(v.shape(), v.values()));
    }
    auto build = [&](const std::string& name) -> Mlp {
      for (const auto& comp : manifest.at("components")) {
        if (comp.at("name") != name) continue;
        MlpSpec spec{comp.at("widths").get<std::vector<std::size_t>>()};
        std::vector<Tensor> ps;
        for (std::size_t l = 0; l < spec.layers(); ++l) {
          ps.push_back(tensors.at(name + ".W" + std::to_string(l)));
          ps.push_back(tensors.at(name + ".b" + std::to_string(l)));
        }
        return Mlp(std::move(spec), std::move(ps));
      }
      throw ParseError("checkpoint.json", "missing component " + name);
    };
    std::vector<Mlp> heads;
    for (std::size_t h = 0; h < c.heads; ++h) heads.push_back(build("head" + std::to_string(h)));
    std::optional<Mlp> pred, phi_bt;
    if (c.predictor) pred = build("predictor");
    if (c.barlow_batch > 0) phi_bt = build("barlow_temp_net");
    return ModelBundle(c, build("encoder"), std::move(heads), build("temp_net"), std::move(pred), std::move(phi_bt));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint.json", e.what());
  } catch (const std::out_of_range& e) {
    throw ParseError("checkpoint.json", std::string("missing tensor: ") + e.what());
  }
}

}  // namespace amcl
