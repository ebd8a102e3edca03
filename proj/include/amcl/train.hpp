#pragma once

// Pretraining loop, evaluation protocols and checkpoints.

#include "amcl/augment.hpp"
#include "amcl/config.hpp"
#include "amcl/metrics.hpp"
#include "amcl/nets.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace amcl {

/// Constant and scheduled modes give the step's temperature; adaptive mode
/// gives nullopt (the temperature network decides per pair).
std::optional<double> temperature_for_step(const TemperatureMode& mode, double epoch);

/// SGD with momentum; weight decay is added to the gradient and an optional
/// global-norm clip is applied to the raw gradient first.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay, double grad_clip = 0.0);
  void step(double lr);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::VectorXd> velocity_;
  double momentum_;
  double weight_decay_;
  double grad_clip_;
};

/// Cosine decay from `base` at step 0 towards 0 at `total`.
double cosine_lr(double base, std::size_t step, std::size_t total);

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, from 0
  double loss = 0.0;
  double pos_term = 0.0;
  double neg_term = 0.0;
  double omega_term = 0.0;
  double tau_min = 0.0;
  double tau_mean = 0.0;
  double tau_max = 0.0;
  double tau_var_heads = 0.0;
};

struct EvalRow {
  std::size_t epoch = 0;
  std::optional<double> knn_acc;
  std::optional<double> probe_acc;  // largest probe subset
  std::optional<double> overlap;    // head-averaged projected similarities
};

struct ProbeRow {
  std::size_t epoch = 0;
  std::size_t subset_per_class = 0;
  double probe_acc = 0.0;
};

struct RunLog {
  std::vector<StepLog> steps;
  std::vector<EvalRow> evals;
  std::vector<ProbeRow> probes;
};

struct PretrainOptions {
  bool evaluate = true;
  std::function<void(const StepLog&)> on_step;
};

struct PretrainResult {
  ModelBundle model;
  RunLog log;
  std::vector<SeparabilityReport> separability;  // from the last evaluation
};

/// Self-supervised pretraining on `train`; evaluations use `held_out` as the
/// test set. Throws EvaluationError on a non-finite loss, naming the step
/// and the term breakdown.
PretrainResult pretrain(const ExperimentConfig& cfg, const Dataset& train, const Dataset& held_out,
                        const PretrainOptions& options = {});

/// Train / held-out split used by every command for a config.
std::pair<Dataset, Dataset> experiment_split(const ExperimentConfig& cfg, const Dataset& all);

// -- evaluation --

/// Backbone features h of un-augmented images.
RowMatrixXd backbone_features(const ModelBundle& model, std::span<const Image> images);

/// Majority vote among the k nearest training rows under cosine distance;
/// vote ties go to the smaller summed distance, then the lower class index.
int knn_predict(const RowMatrixXd& train, std::span<const int> train_labels, const Eigen::RowVectorXd& query,
                std::size_t k);
double knn_eval(const RowMatrixXd& train, std::span<const int> train_labels, const RowMatrixXd& test,
                std::span<const int> test_labels, std::size_t k);

struct ProbeSettings {
  std::size_t iterations = 500;
  double lr = 0.1;
  double l2 = 1e-4;
};

/// Multinomial logistic regression by full-batch gradient descent on a
/// stratified seeded subset of `subset_per_class` rows per class; features
/// are standardized with subset statistics. Returns accuracy on `test`.
double linear_probe(const RowMatrixXd& train, std::span<const int> train_labels, const RowMatrixXd& test,
                    std::span<const int> test_labels, std::size_t subset_per_class, std::uint64_t seed,
                    const ProbeSettings& settings = {});

/// Positive pairs: two fresh views of one held-out image; negative pairs:
/// views of two distinct held-out images. Returns the projected
/// (head-averaged) and backbone reports, in that order.
std::vector<SeparabilityReport> separability_analysis(const ModelBundle& model, const ExperimentConfig& cfg,
                                                      const Dataset& held_out);

/// Runs every configured evaluation (KNN, probes, separability) for `epoch`.
struct EvaluationResult {
  EvalRow row;
  std::vector<ProbeRow> probes;
  std::vector<SeparabilityReport> separability;
};
EvaluationResult evaluate(const ModelBundle& model, const ExperimentConfig& cfg, const Dataset& train,
                          const Dataset& held_out, std::size_t epoch);

// -- checks --

struct ReductionCheckResult {
  std::size_t steps = 0;
  double max_rel_error = 0.0;  // ||g_amcl - g_base|| / ||g_base||, worst step
  double max_loss_gap_error = 0.0;  // deviation of (amcl - baseline) from its closed-form constant
};

/// Pretrains for `steps` steps with C = 1, constant temperature and softmax
/// aggregation, comparing every step's parameter gradient with that of the
/// baseline NT-Xent loss before stepping with the AMCL gradient.
ReductionCheckResult reduction_check(const ExperimentConfig& cfg, const Dataset& train, std::size_t steps);

// -- I/O --

void write_train_log(const std::filesystem::path& path, std::span<const StepLog> steps);
/// Appends rows (writing the header first if the file is new).
void append_eval_log(const std::filesystem::path& path, std::span<const EvalRow> rows);
void append_probe_log(const std::filesystem::path& path, std::span<const ProbeRow> rows);

/// `checkpoint.amtd` (concatenated float32 AMTD tensors) plus
/// `checkpoint.json` (names, shapes, byte offsets, component specs, model config).
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& model);
ModelBundle load_checkpoint(const std::filesystem::path& dir);

}  // namespace amcl
