// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "amcl/augment.hpp"
#include "amcl/checks.hpp"
#include "amcl/config.hpp"
#include "amcl/errors.hpp"
#include "amcl/losses.hpp"
#include "amcl/scalar_math.hpp"
#include "amcl/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

using namespace amcl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// -- shared desk-scale experiment --

ExperimentConfig desk_config(bool amcl, std::size_t prefix, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.augment_prefix = prefix;
  cfg.loss.neg_agg = NegativeAggregation::softmax;
  cfg.train.grad_clip = 0.1;
  cfg.train.seed = seed;
  if (amcl) {
    cfg.model.heads = 3;
    cfg.loss.temp_mode.kind = TemperatureKind::adaptive;
  } else {
    cfg.model.heads = 1;
    cfg.loss.temp_mode.kind = TemperatureKind::constant;
    cfg.loss.temp_mode.tau0 = 0.2;
  }
  cfg.loss.heads = cfg.model.heads;
  return cfg;
}

struct RunSummary {
  double knn = 0.0;
  double overlap = 0.0;
  double seconds = 0.0;
  double tau_lo = 0.0;
  double tau_hi = 0.0;
};

class DeskRuns {
 public:
  const RunSummary& get(bool amcl, std::size_t prefix, std::uint64_t seed) {
    const auto key = std::make_tuple(amcl, prefix, seed);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    const auto cfg = desk_config(amcl, prefix, seed);
    const auto [train, held] = experiment_split(cfg, data());
    const auto t0 = Clock::now();
    const auto r = pretrain(cfg, train, held);
    RunSummary s;
    s.seconds = seconds_since(t0);
    s.knn = *r.log.evals.back().knn_acc;
    s.overlap = *r.log.evals.back().overlap;
    s.tau_lo = std::numeric_limits<double>::infinity();
    s.tau_hi = -s.tau_lo;
    for (const auto& st : r.log.steps) {
      s.tau_lo = std::min(s.tau_lo, st.tau_min);
      s.tau_hi = std::max(s.tau_hi, st.tau_max);
    }
    std::printf("  run %-8s prefix %zu seed %llu: knn %.4f overlap %.4f tau [%.3g, %.3g] %.1fs\n",
                amcl ? "amcl" : "baseline", prefix, static_cast<unsigned long long>(seed), s.knn, s.overlap,
                s.tau_lo, s.tau_hi, s.seconds);
    std::fflush(stdout);
    return runs_.emplace(key, s).first->second;
  }

  const Dataset& data() {
    if (!data_) data_ = generate_synthetic(ExperimentConfig{}.io.synthetic);
    return *data_;
  }

 private:
  std::optional<Dataset> data_;
  std::map<std::tuple<bool, std::size_t, std::uint64_t>, RunSummary> runs_;
};

DeskRuns g_runs;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

// -- criteria --

Outcome check_gradient_correctness() {
  const auto t0 = Clock::now();
  const auto results = gradcheck_suite(2026);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed();
    if (r.error >= worst) {
      worst = r.error;
      worst_name = r.name;
    }
  }
  return {ok && secs < 120.0,
          fmt("%zu cases, max rel error %.2e (%s), %.1fs", results.size(), worst, worst_name.c_str(), secs)};
}

Outcome check_omega_stationarity() {
  bool ok = true;
  std::string detail;
  for (const double d : {2.0, 8.0, 64.0, 128.0}) {
    const double star = 2.0 / d;
    const Tensor tau = Tensor::parameter({}, Eigen::VectorXd::Constant(1, star));
    backward(omega(tau, d));
    const double slope = std::abs(tau.grad()[0]);
    double best = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 4000; ++k) {
      const double t = 1e-3 * k;
      const double v = omega(t, d);
      if (v < best_val) {
        best_val = v;
        best = t;
      }
    }
    const bool here = slope < 1e-10 && std::abs(best - star) <= 1e-3 + 1e-12;
    ok = ok && here;
    detail += fmt("d'=%g |dΩ/dτ|=%.1e argmin=%.3f; ", d, slope, best);
  }
  return {ok, detail};
}

Outcome check_mle_equivalence() {
  bool ok = true;
  std::string detail;
  for (const auto v : {LossVariant::ntxent, LossVariant::infonce}) {
    const auto r = mle_equivalence(v, 2026, 100);
    ok = ok && r.instances == 100 && r.value_error < 1e-8 && r.grad_error < 1e-8;
    detail += fmt("%s: value %.1e grad %.1e over %zu; ", std::string(to_string(v)).c_str(), r.value_error,
                  r.grad_error, r.instances);
  }
  return {ok, detail};
}

Outcome check_reduction() {
  ExperimentConfig cfg;
  cfg.loss.temp_mode.kind = TemperatureKind::constant;
  cfg.loss.temp_mode.tau0 = 0.2;
  const auto [train, held] = experiment_split(cfg, g_runs.data());
  const auto r = reduction_check(cfg, train, 50);
  return {r.steps == 50 && r.max_rel_error < 1e-8,
          fmt("%zu steps, max gradient rel error %.2e, loss offset deviation %.2e", r.steps, r.max_rel_error,
              r.max_loss_gap_error)};
}

Outcome check_stop_gradient() {
  bool ok = true;
  std::string detail;
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = simsiam_stop_gradient_probe(seed);
    ok = ok && p.max_abs_analytic == 0.0 && p.min_fd_sensitivity > 0.0;
    detail += fmt("seed %llu: analytic %.1e, fd sensitivity %.2e; ", static_cast<unsigned long long>(seed),
                  p.max_abs_analytic, p.min_fd_sensitivity);
  }
  return {ok, detail};
}

Outcome check_logged_temperatures() {
  const auto& r = g_runs.get(true, 5, 1);
  const TempBounds b;
  return {r.tau_lo > b.eta && r.tau_hi < b.eta + b.iota,
          fmt("logged temperatures in [%.6g, %.6g] within (%g, %g)", r.tau_lo, r.tau_hi, b.eta, b.eta + b.iota)};
}

Outcome check_separability_trend() {
  int wins = 0;
  double mean_a = 0.0, mean_b = 0.0, worst_secs = 0.0;
  for (const auto s : kSeeds) {
    const auto& a = g_runs.get(true, 5, s);
    const auto& b = g_runs.get(false, 5, s);
    wins += a.overlap < b.overlap;
    mean_a += a.overlap / 3.0;
    mean_b += b.overlap / 3.0;
    worst_secs = std::max({worst_secs, a.seconds, b.seconds});
  }
  return {wins >= 2 && mean_a < mean_b && worst_secs * 3 < 1800.0,
          fmt("amcl below baseline in %d/3 seeds, mean overlap %.4f vs %.4f, slowest run %.1fs", wins, mean_a, mean_b,
              worst_secs)};
}

Outcome check_augmentation_trend() {
  double gain[2] = {0.0, 0.0};
  const std::size_t prefixes[2] = {1, 5};
  for (int p = 0; p < 2; ++p) {
    for (const auto s : kSeeds) {
      gain[p] += (g_runs.get(true, prefixes[p], s).knn - g_runs.get(false, prefixes[p], s).knn) / 3.0;
    }
  }
  return {gain[1] > gain[0], fmt("mean knn gain %+.4f with 5 augmentations vs %+.4f with 1", gain[1], gain[0])};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome check_determinism() {
  const auto cfg = desk_config(true, 5, 42);
  const auto [train, held] = experiment_split(cfg, g_runs.data());
  const fs::path dir = fs::temp_directory_path() / "amcl_acceptance_determinism";
  fs::create_directories(dir);
  PretrainOptions quiet{false, {}};
  write_train_log(dir / "first.csv", pretrain(cfg, train, held, quiet).log.steps);
  write_train_log(dir / "second.csv", pretrain(cfg, train, held, quiet).log.steps);
  const auto a = slurp(dir / "first.csv");
  const auto b = slurp(dir / "second.csv");
  fs::remove_all(dir);
  return {!a.empty() && a == b, fmt("train_log.csv %zu bytes, identical: %s", a.size(), a == b ? "yes" : "no")};
}

Outcome check_pnm_parser(const fs::path& fixtures) {
  std::size_t files = 0, commented = 0, failures = 0;
  for (const auto& entry : fs::directory_iterator(fixtures / "pnm_corpus")) {
    const auto bytes = slurp(entry.path());
    const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
    ++files;
    commented += bytes.find('#') != std::string::npos;
    try {
      const Image img = parse_pnm(raw);
      const auto written = write_pnm(img);
      const bool same = parse_pnm(written) == img;
      failures += !same;
      // canonical inputs must come back byte for byte
      const std::string header = img.channels == 1 ? "P5\n" : "P6\n";
      const std::string canon = header + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
      if (bytes.starts_with(canon)) failures += written != raw;
    } catch (const std::exception&) {
      ++failures;
    }
  }
  const std::map<std::string, std::string> expected{
      {"bad_magic.pgm", "magic"},         {"bad_maxval.pgm", "maxval"},         {"truncated_payload.ppm", "payload"},
      {"dimension_overflow.pgm", "dimension"}, {"missing_height.pgm", "height"}, {"bad_width.pgm", "width"}};
  std::size_t rejected = 0;
  for (const auto& [name, field] : expected) {
    const auto bytes = slurp(fixtures / "pnm_malformed" / name);
    try {
      parse_pnm(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    } catch (const ParseError& e) {
      rejected += e.field() == field;
    }
  }
  return {files == 50 && commented > 0 && failures == 0 && rejected == expected.size(),
          fmt("%zu corpus files (%zu with comments), %zu round-trip failures; %zu/%zu malformed rejected with the "
              "expected field",
              files, commented, failures, rejected, expected.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string fixtures = AMCL_FIXTURE_DIR;
  app.add_option("--only", only, "criteria to run (default: all)");
  app.add_option("--fixtures", fixtures, "fixture directory");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      Criterion{"gradient correctness", &check_gradient_correctness},
      Criterion{"omega stationarity", &check_omega_stationarity},
      Criterion{"MLE equivalence", &check_mle_equivalence},
      Criterion{"reduction to baseline", &check_reduction},
      Criterion{"stop-gradient", &check_stop_gradient},
      Criterion{"temperature bounds", &check_logged_temperatures},
      Criterion{"separability trend", &check_separability_trend},
      Criterion{"augmentation-count trend", &check_augmentation_trend},
      Criterion{"determinism", &check_determinism},
      Criterion{"PNM parser", [&] { return check_pnm_parser(fixtures); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d (%s): %s - %s\n", id, criteria[i].name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
