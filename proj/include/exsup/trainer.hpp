// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "exsup/backbone.hpp"
#include "exsup/dataset.hpp"
#include "exsup/loss.hpp"
#include "exsup/metrics.hpp"

namespace exsup {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-4;
  // Step-size multiplier for the imputation head. Deliberately small: the
  // distance term pulls the explanation map toward the head's output, so the
  // head has to act as a slow-moving anchor. Give it the same step as the
  // backbone and it chases a degrading map downward instead of holding the
  // map up, and the supervision signal collapses with it.
  double impute_lr_scale = 0.1;
  Eigen::Index batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  RobustLossConfig loss;
  BackboneConfig backbone;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double pred_loss = 0.0;
  double exp_loss = 0.0;
  double total_loss = 0.0;
  double val_accuracy = 0.0;
  ExplanationScore val_explanation;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based; 0 when no validation ran
  double best_val_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  TrainConfig config;
};

struct AdamState {
  long step = 0;
  std::vector<Array> m;
  std::vector<Array> v;
};

// Textbook update with bias correction. An empty state initializes itself to
// the parameter shapes; afterwards shapes must match exactly. The span
// overload applies one step size per parameter (parameter-group rates).
void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& state,
               std::span<const double> lr, double beta1, double beta2, double eps);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One mini-batch of references into a dataset.
struct BatchView {
  Tensor images;  // [N,C,H,W] constant
  std::vector<int> labels;
  std::vector<const AnnotationMask*> masks;
};
BatchView make_batch(const Dataset& ds, std::span<const std::size_t> indices);

struct ObjectiveParts {
  BoundParams bound;  // every parameter, as tape leaves (or constants)
  Tensor total;
  Tensor pred;
  Tensor exp;                       // constant scalar 0 when the path is gated
  std::vector<double> thresholds;   // adaptive thresholds used (res variants)
  std::vector<Scalar> saliency_norms;
};

// Builds the joint objective for one batch: prediction loss plus the
// configured explanation loss. With lambda_exp == 0 or variant none the
// explanation path is skipped entirely. Pass tape == nullptr for a pure
// evaluation. The two overrides pin the alternating-scheme constants
// (thresholds) and the frozen saliency denominators, which finite-difference
// probes must hold fixed across evaluations.
ObjectiveParts batch_objective(Tape* tape, const ModelParams& params, const TrainConfig& cfg,
                               const BatchView& batch,
                               std::span<const Array* const> gaussian_targets = {},
                               const std::vector<double>* threshold_override = nullptr,
                               const std::vector<Scalar>* norm_override = nullptr);

struct TrainResult {
  ModelParams params;  // best-validation-accuracy snapshot
  TrainReport report;
};

// Mini-batch Adam training of the joint objective with the alternating
// threshold scheme: each step recomputes saliency, solves the batch's
// threshold constraints, then takes one gradient step. Aborts with
// TrainingDiverged on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set);

struct EvalResult {
  double accuracy = 0.0;
  ExplanationScore explanation;
};

// Accuracy over all samples plus mean explanation scores at binarization
// threshold 0.5. Explanations are judged against the clean annotation layers
// when the dataset carries them. Saliency targets the true label.
EvalResult evaluate(const ModelParams& params, const BackboneConfig& cfg, const Dataset& ds,
                    double threshold = 0.5);

// Per-epoch CSV rows plus one final row carrying the best epoch; no
// wall-clock content, so reruns are byte-identical.
void write_train_report_csv(const std::filesystem::path& path, const TrainReport& report);

}  // namespace exsup
