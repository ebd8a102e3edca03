#include "amcl/checks.hpp"
#include "amcl/config.hpp"
#include "amcl/errors.hpp"
#include "amcl/rng.hpp"
#include "amcl/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace amcl;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t steps = 50;
  std::size_t instances = 100;
};

[[noreturn]] void fail(Exit code, const std::string& category, const std::string& reason) {
  throw std::pair<Exit, std::string>(code, category + ": " + reason);
}

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig cfg = opt.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(opt.config);
  if (opt.seed) cfg.train.seed = *opt.seed;
  return cfg;
}

Dataset require_dataset(const ExperimentConfig& cfg) {
  if (cfg.io.dataset.empty()) fail(kUsage, "config", "io.dataset: no dataset path given");
  if (!fs::is_directory(cfg.io.dataset)) fail(kIo, "io", "io.dataset: no dataset at " + cfg.io.dataset);
  return load_dataset(cfg.io.dataset);
}

fs::path out_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.io.output_dir, ec);
  if (ec) fail(kIo, "io", "io.output_dir: " + ec.message());
  return cfg.io.output_dir;
}

void print(const char* fmt_line, auto... args) {
  if constexpr (sizeof...(args) == 0) {
    std::fputs(fmt_line, stdout);
  } else {
    std::printf(fmt_line, args...);
  }
  std::fflush(stdout);
}

int cmd_gradcheck(const Options& opt) {
  const auto cfg = resolve(opt);
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : gradcheck_suite(cfg.train.seed)) {
    print("%-48s %.3e %s\n", r.name.c_str(), r.error, r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
    worst = std::max(worst, r.error);
  }
  if (!ok) fail(kCheckFailed, "check", "gradcheck max relative error " + std::to_string(worst) + " >= 1e-4");
  print("gradcheck passed, max relative error %.3e\n", worst);
  return kOk;
}

int cmd_gen_data(const Options& opt) {
  const auto cfg = resolve(opt);
  const fs::path dir = cfg.io.dataset.empty() ? out_dir(cfg) / "data" : fs::path(cfg.io.dataset);
  const auto ds = generate_synthetic(cfg.io.synthetic);
  save_dataset(ds, dir);
  write_resolved_config(cfg);
  print("wrote %zu images to %s\n", ds.size(), dir.string().c_str());
  return kOk;
}

int cmd_pretrain(const Options& opt) {
  const auto cfg = resolve(opt);
  const auto all = require_dataset(cfg);
  const fs::path out = out_dir(cfg);
  write_resolved_config(cfg);
  const auto [train, held_out] = experiment_split(cfg, all);
  PretrainOptions po;
  po.on_step = [&](const StepLog& s) {
    if (s.step % 100 == 0) print("epoch %zu step %zu loss %.6f tau [%.4g, %.4g]\n", s.epoch, s.step, s.loss, s.tau_min, s.tau_max);
  };
  const auto result = pretrain(cfg, train, held_out, po);
  save_checkpoint(out / "checkpoint", result.model);
  write_train_log(out / "train_log.csv", result.log.steps);
  fs::remove(out / "eval_log.csv");
  fs::remove(out / "probe_log.csv");
  append_eval_log(out / "eval_log.csv", result.log.evals);
  append_probe_log(out / "probe_log.csv", result.log.probes);
  if (!result.separability.empty()) write_separability_csv(out / "separability.csv", result.separability);
  for (const auto& e : result.log.evals) {
    print("eval epoch %zu knn %.4f probe %.4f overlap %.4f\n", e.epoch, e.knn_acc.value_or(NAN),
          e.probe_acc.value_or(NAN), e.overlap.value_or(NAN));
  }
  return kOk;
}

struct Loaded {
  ExperimentConfig cfg;
  Dataset train, held_out;
  ModelBundle model;
};

Loaded load_trained(const Options& opt) {
  auto cfg = resolve(opt);
  auto all = require_dataset(cfg);
  auto [train, held_out] = experiment_split(cfg, all);
  const fs::path ckpt = fs::path(cfg.io.output_dir) / "checkpoint";
  if (!fs::exists(ckpt / "checkpoint.json")) fail(kIo, "io", "no checkpoint in " + ckpt.string() + " (run pretrain first)");
  auto model = load_checkpoint(ckpt);
  return {std::move(cfg), std::move(train), std::move(held_out), std::move(model)};
}

std::size_t final_epoch(const ExperimentConfig& cfg) { return cfg.train.epochs == 0 ? 0 : cfg.train.epochs - 1; }

int cmd_knn(const Options& opt) {
  const auto l = load_trained(opt);
  const auto ftr = backbone_features(l.model, l.train.images);
  const auto fte = backbone_features(l.model, l.held_out.images);
  EvalRow row;
  row.epoch = final_epoch(l.cfg);
  row.knn_acc = knn_eval(ftr, l.train.labels, fte, l.held_out.labels, std::min(l.cfg.eval.knn_k, l.train.size()));
  append_eval_log(out_dir(l.cfg) / "eval_log.csv", std::span(&row, 1));
  print("knn_acc %.6f\n", *row.knn_acc);
  return kOk;
}

int cmd_probe(const Options& opt) {
  const auto l = load_trained(opt);
  const auto ftr = backbone_features(l.model, l.train.images);
  const auto fte = backbone_features(l.model, l.held_out.images);
  const ProbeSettings ps{l.cfg.eval.probe_iterations, l.cfg.eval.probe_lr, l.cfg.eval.probe_l2};
  EvalRow row;
  row.epoch = final_epoch(l.cfg);
  std::vector<ProbeRow> rows;
  std::size_t largest = 0;
  for (const auto s : l.cfg.eval.probe_subsets) {
    const double acc = linear_probe(ftr, l.train.labels, fte, l.held_out.labels, s,
                                    derive_seed(derive_seed(l.cfg.train.seed, "probe"), {static_cast<std::uint64_t>(s)}), ps);
    rows.push_back({row.epoch, s, acc});
    print("probe subset %zu acc %.6f\n", s, acc);
    if (s >= largest) {
      largest = s;
      row.probe_acc = acc;
    }
  }
  const fs::path out = out_dir(l.cfg);
  append_eval_log(out / "eval_log.csv", std::span(&row, 1));
  append_probe_log(out / "probe_log.csv", rows);
  return kOk;
}

int cmd_analyze(const Options& opt) {
  const auto l = load_trained(opt);
  const auto reports = separability_analysis(l.model, l.cfg, l.held_out);
  write_separability_csv(out_dir(l.cfg) / "separability.csv", reports);
  for (const auto& r : reports) print("%s overlap %.6f\n", r.source.c_str(), r.overlap);
  return kOk;
}

int cmd_reduce_check(const Options& opt) {
  const auto cfg = resolve(opt);
  const Dataset all = cfg.io.dataset.empty() ? generate_synthetic(cfg.io.synthetic) : require_dataset(cfg);
  const auto [train, held_out] = experiment_split(cfg, all);
  constexpr double kTol = 1e-8;
  bool ok = true;
  const auto red = reduction_check(cfg, train, opt.steps);
  print("reduction: %zu steps, gradient rel error %.3e, loss gap error %.3e\n", red.steps, red.max_rel_error,
        red.max_loss_gap_error);
  ok = ok && red.max_rel_error < kTol && red.max_loss_gap_error < kTol;
  for (const auto v : {LossVariant::ntxent, LossVariant::infonce}) {
    const auto eq = mle_equivalence(v, cfg.train.seed, opt.instances);
    print("mle %s: %zu instances, value rel error %.3e, gradient rel error %.3e\n",
          v == LossVariant::ntxent ? "ntxent" : "infonce", eq.instances, eq.value_error, eq.grad_error);
    ok = ok && eq.value_error < kTol && eq.grad_error < kTol;
  }
  if (!ok) fail(kCheckFailed, "check", "reduce-check error exceeds 1e-8");
  print("reduce-check passed\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multi-head contrastive learning lab"};
  app.require_subcommand(1);
  Options opt;

  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opt.config, "experiment config (JSON)");
    sub->add_option("-s,--seed", opt.seed, "override train.seed");
    return sub;
  };
  auto* gradcheck = add("gradcheck", "finite-difference check of every loss variant");
  auto* pretrain_cmd = add("pretrain", "self-supervised pretraining");
  auto* knn = add("knn", "KNN accuracy of the pretrained backbone");
  auto* probe = add("probe", "linear probes on the pretrained backbone");
  auto* analyze = add("analyze", "positive/negative similarity histograms");
  auto* gen = add("gen-data", "write the synthetic dataset");
  auto* reduce = add("reduce-check", "reduction-to-baseline and likelihood equivalence checks");
  reduce->add_option("--steps", opt.steps, "pretraining steps to compare")->check(CLI::PositiveNumber);
  reduce->add_option("--instances", opt.instances, "random likelihood instances")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(opt);
    if (pretrain_cmd->parsed()) return cmd_pretrain(opt);
    if (knn->parsed()) return cmd_knn(opt);
    if (probe->parsed()) return cmd_probe(opt);
    if (analyze->parsed()) return cmd_analyze(opt);
    if (gen->parsed()) return cmd_gen_data(opt);
    if (reduce->parsed()) return cmd_reduce_check(opt);
  } catch (const std::pair<Exit, std::string>& f) {
    std::cerr << "error " << f.second << '\n';
    return f.first;
  } catch (const ConfigError& e) {
    std::cerr << "error config: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error config: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error io: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "error io: " << e.what() << '\n';
    return kIo;
  } catch (const EvaluationError& e) {
    std::cerr << "error check: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}
