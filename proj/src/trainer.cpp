// SPDX-License-Identifier: Apache-2.0
#include "exsup/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "exsup/csv.hpp"
#include "exsup/imputation.hpp"
#include "exsup/rng.hpp"
#include "exsup/threshold.hpp"

namespace exsup {

namespace {

constexpr std::uint64_t kBatchStreamSalt = 0xba7c4e55aa11fe37ull;

std::string diverged_message(int epoch, long long step, double value) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "training diverged: total loss %.17g is not finite (epoch %d, step %lld)", value,
                epoch, step);
  return std::string(buf);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train config: learning rate must be positive and finite");
  if (!(impute_lr_scale > 0.0) || !std::isfinite(impute_lr_scale))
    throw std::invalid_argument("train config: imputation lr scale must be positive and finite");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train config: adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam epsilon must be positive");
  loss.validate();
  backbone.validate();
}

void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& state,
               std::span<const double> lr, double beta1, double beta2, double eps) {
  const std::size_t n = params.params.size();
  if (grads.size() != n)
    throw std::invalid_argument("adam_step: gradient count does not match parameter count");
  if (lr.size() != n)
    throw std::invalid_argument("adam_step: learning-rate count does not match parameter count");
  if (state.m.empty()) {
    state.step = 0;
    state.m.resize(n);
    state.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      state.m[i] = Array::Zero(params.params[i].value.size());
      state.v[i] = Array::Zero(params.params[i].value.size());
    }
  }
  if (state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("adam_step: state was initialized for a different parameter set");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    Array& p = params.params[i].value;
    const Array& g = grads[i];
    if (g.size() != p.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch for parameter " +
                                  params.params[i].name);
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g.square();
    p -= lr[i] * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + eps);
  }
}

void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  const std::vector<double> rates(params.params.size(), lr);
  adam_step(params, grads, state, rates, beta1, beta2, eps);
}

BatchView make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  BatchView batch{ds.batch_images(indices), {}, {}};
  batch.labels.reserve(indices.size());
  batch.masks.reserve(indices.size());
  for (std::size_t i : indices) {
    batch.labels.push_back(ds.samples[i].label);
    batch.masks.push_back(&ds.samples[i].mask);
  }
  return batch;
}

namespace {

// [N,1,H,W] constant assembled from per-sample fixed targets.
Tensor fixed_imputation_batch(const BatchView& batch, std::span<const Array* const> cached,
                              const RobustLossConfig& cfg, Eigen::Index h, Eigen::Index w) {
  const auto n = static_cast<Eigen::Index>(batch.masks.size());
  const Eigen::Index hw = h * w;
  Array data(n * hw);
  if (!cached.empty()) {
    if (static_cast<Eigen::Index>(cached.size()) != n)
      throw std::invalid_argument("fixed imputation cache does not match the batch size");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (cached[i]->size() != hw)
        throw std::invalid_argument("fixed imputation cache entry has the wrong size");
      data.segment(i * hw, hw) = *cached[i];
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      DenseMap target = gaussian_impute(*batch.masks[i], cfg.imputation.gaussian_kernel,
                                        cfg.imputation.gaussian_sigma);
      if (target.size() != hw)
        throw std::invalid_argument("fixed imputation target does not match the image extent");
      data.segment(i * hw, hw) = Eigen::Map<const Array>(target.data(), target.size());
    }
  }
  return Tensor({n, 1, h, w}, std::move(data));
}

std::vector<double> solve_thresholds(const SaliencyMaps& maps,
                                     const std::vector<const AnnotationMask*>& masks,
                                     bool per_sample) {
  const Array& vals = maps.full.data();
  const auto n = static_cast<Eigen::Index>(masks.size());
  const Eigen::Index hw = maps.full.dim(2) * maps.full.dim(3);
  std::vector<double> out;
  if (per_sample) {
    out.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      ConstraintSet c;
      c.add_sample(std::span<const double>(vals.data() + i * hw, static_cast<std::size_t>(hw)),
                   masks[i]->positive, masks[i]->negative);
      out[static_cast<std::size_t>(i)] = optimal_threshold(c);
    }
  } else {
    ConstraintSet c;
    for (Eigen::Index i = 0; i < n; ++i)
      c.add_sample(std::span<const double>(vals.data() + i * hw, static_cast<std::size_t>(hw)),
                   masks[i]->positive, masks[i]->negative);
    out.assign(1, optimal_threshold(c));
  }
  return out;
}

}  // namespace

ObjectiveParts batch_objective(Tape* tape, const ModelParams& params, const TrainConfig& cfg,
                               const BatchView& batch, std::span<const Array* const> gaussian_targets,
                               const std::vector<double>* threshold_override,
                               const std::vector<Scalar>* norm_override) {
  ObjectiveParts parts{BoundParams(tape, params), {}, {}, {}, {}, {}};
  Forward fw = forward(parts.bound, cfg.backbone, batch.images);
  parts.pred = prediction_loss(fw.logits, batch.labels);

  const bool supervised =
      cfg.loss.variant != SupervisionVariant::kNone && cfg.loss.lambda_exp > 0.0;
  if (!supervised) {
    // The explanation path contributes nothing; skipping it keeps the update
    // (and therefore the trained parameters) bit-identical to plain training.
    parts.exp = Tensor::scalar(0.0);
    parts.total = parts.pred;
    return parts;
  }

  SaliencyMaps maps = compute_saliency(parts.bound.at("head.weight"), fw.activations, batch.labels,
                                       cfg.backbone.in_h, cfg.backbone.in_w, norm_override);
  parts.saliency_norms = maps.norm;

  Tensor exp_loss;
  switch (cfg.loss.variant) {
    case SupervisionVariant::kGradia:
      exp_loss = gradia_loss(maps, batch.masks);
      break;
    case SupervisionVariant::kHaics:
      exp_loss = haics_loss(maps, batch.masks);
      break;
    case SupervisionVariant::kResG:
    case SupervisionVariant::kResL: {
      parts.thresholds = threshold_override
                             ? *threshold_override
                             : solve_thresholds(maps, batch.masks, cfg.loss.per_sample_threshold);
      Tensor imputed;
      if (cfg.loss.variant == SupervisionVariant::kResG) {
        imputed = fixed_imputation_batch(batch, gaussian_targets, cfg.loss, cfg.backbone.in_h,
                                         cfg.backbone.in_w);
      } else {
        if (cfg.backbone.in_h != cfg.backbone.in_w)
          throw std::invalid_argument("learnable imputation requires square inputs");
        ImputationGeometry geom =
            make_geometry(cfg.loss.imputation, cfg.backbone.in_h, cfg.backbone.feature_h());
        Tensor native = learnable_impute(stack_masks(batch.masks), parts.bound, geom);
        // the distance term reads the upsampled map, so the head's output is
        // lifted to annotation resolution the same way
        imputed = upsample_bilinear(native, cfg.backbone.in_h, cfg.backbone.in_w);
      }
      exp_loss = res_loss(maps, batch.masks, parts.thresholds, imputed, cfg.loss);
      break;
    }
    case SupervisionVariant::kNone:
      break;  // unreachable, handled above
  }

  parts.exp = exp_loss;
  parts.total = total_objective(parts.pred, parts.exp, cfg.loss.lambda_exp);
  return parts;
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set) {
  cfg.validate();
  if (train_set.samples.empty()) throw std::invalid_argument("train: training set is empty");

  const bool learnable =
      cfg.loss.variant == SupervisionVariant::kResL && cfg.loss.lambda_exp > 0.0;
  const bool needs_gaussian =
      cfg.loss.variant == SupervisionVariant::kResG && cfg.loss.lambda_exp > 0.0;

  ModelParams params = init_params(cfg.backbone, cfg.seed);
  if (learnable) {
    if (cfg.backbone.in_h != cfg.backbone.in_w)
      throw std::invalid_argument("learnable imputation requires square inputs");
    ImputationGeometry geom =
        make_geometry(cfg.loss.imputation, cfg.backbone.in_h, cfg.backbone.feature_h());
    for (Param& p : init_imputation(geom, cfg.seed)) params.params.push_back(std::move(p));
  }

  // Fixed targets never change during training, so they are built once.
  std::vector<Array> gaussian_cache;
  if (needs_gaussian) {
    gaussian_cache.reserve(train_set.samples.size());
    for (const Sample& s : train_set.samples) {
      DenseMap target = gaussian_impute(s.mask, cfg.loss.imputation.gaussian_kernel,
                                        cfg.loss.imputation.gaussian_sigma);
      gaussian_cache.emplace_back(Eigen::Map<const Array>(target.data(), target.size()));
    }
  }

  TrainReport report;
  report.seed = cfg.seed;
  report.config = cfg;

  Rng shuffle_root(Rng::mix(cfg.seed ^ kBatchStreamSalt));
  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<double> rates;
  rates.reserve(params.params.size());
  for (const Param& p : params.params) {
    const bool impute = p.name.rfind("impute.", 0) == 0;
    rates.push_back(impute ? cfg.learning_rate * cfg.impute_lr_scale : cfg.learning_rate);
  }

  AdamState adam;
  ModelParams best = params;
  double best_acc = -1.0;
  int best_epoch = 0;
  long long step = 0;

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng = shuffle_root.fork(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);

    double pred_sum = 0.0, exp_sum = 0.0, total_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      BatchView batch = make_batch(train_set, idx);

      std::vector<const Array*> targets;
      if (needs_gaussian) {
        targets.reserve(count);
        for (std::size_t i : idx) targets.push_back(&gaussian_cache[i]);
      }

      Tape tape;
      ObjectiveParts parts = batch_objective(&tape, params, cfg, batch, targets);
      const double total = parts.total.value();
      ++step;
      if (!std::isfinite(total)) throw TrainingDiverged(diverged_message(epoch, step, total));

      pred_sum += parts.pred.value();
      exp_sum += parts.exp.value();
      total_sum += total;
      ++batches;

      tape.backward(parts.total);
      std::vector<Array> grads;
      grads.reserve(params.params.size());
      for (const auto& [name, tensor] : parts.bound.all()) grads.push_back(tape.grad(tensor));
      adam_step(params, grads, adam, rates, cfg.beta1, cfg.beta2, cfg.adam_eps);
    }

    EpochStats st;
    st.epoch = epoch;
    st.pred_loss = pred_sum / static_cast<double>(batches);
    st.exp_loss = exp_sum / static_cast<double>(batches);
    st.total_loss = total_sum / static_cast<double>(batches);
    if (!val_set.samples.empty()) {
      EvalResult ev = evaluate(params, cfg.backbone, val_set);
      st.val_accuracy = ev.accuracy;
      st.val_explanation = ev.explanation;
      if (ev.accuracy > best_acc) {
        best_acc = ev.accuracy;
        best = params;
        best_epoch = epoch;
      }
    }
    report.epochs.push_back(st);
  }
  const auto t1 = std::chrono::steady_clock::now();

  if (val_set.samples.empty() || best_epoch == 0) {
    best = params;  // no validation signal; keep the final parameters
    best_epoch = 0;
    best_acc = 0.0;
  }
  report.best_epoch = best_epoch;
  report.best_val_accuracy = std::max(best_acc, 0.0);
  report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  return {std::move(best), std::move(report)};
}

EvalResult evaluate(const ModelParams& params, const BackboneConfig& cfg, const Dataset& ds,
                    double threshold) {
  const std::size_t n = ds.samples.size();
  if (n == 0) return {};
  BoundParams bound(nullptr, params);

  std::size_t correct = 0;
  double iou_sum = 0.0, p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t count = std::min(kChunk, n - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    BatchView batch = make_batch(ds, idx);

    Forward fw = forward(bound, cfg, batch.images);
    const Array& logits = fw.logits.data();
    const Eigen::Index classes = fw.logits.dim(1);
    for (std::size_t row = 0; row < count; ++row) {
      const Scalar* base = logits.data() + static_cast<Eigen::Index>(row) * classes;
      Eigen::Index arg = 0;
      for (Eigen::Index c = 1; c < classes; ++c)
        if (base[c] > base[arg]) arg = c;  // first index wins ties
      if (static_cast<int>(arg) == batch.labels[row]) ++correct;
    }

    SaliencyMaps maps =
        compute_saliency(bound.at("head.weight"), fw.activations, batch.labels, cfg.in_h, cfg.in_w);
    ExplanationScore es = evaluate_explanations(maps, batch.masks, threshold);
    const auto weight = static_cast<double>(count);
    iou_sum += es.iou * weight;
    p_sum += es.precision * weight;
    r_sum += es.recall * weight;
    f_sum += es.f1 * weight;
  }

  EvalResult out;
  const auto dn = static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / dn;
  out.explanation = {iou_sum / dn, p_sum / dn, r_sum / dn, f_sum / dn};
  return out;
}

void write_train_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "phase,epoch,pred_loss,exp_loss,total_loss,val_accuracy,val_iou,val_precision,"
         "val_recall,val_f1\n";
  auto row = [&out](const char* phase, const EpochStats& st) {
    out << phase << ',' << st.epoch << ',' << csv_double(st.pred_loss) << ','
        << csv_double(st.exp_loss) << ',' << csv_double(st.total_loss) << ','
        << csv_double(st.val_accuracy) << ',' << csv_double(st.val_explanation.iou) << ','
        << csv_double(st.val_explanation.precision) << ','
        << csv_double(st.val_explanation.recall) << ',' << csv_double(st.val_explanation.f1)
        << '\n';
  };
  for (const EpochStats& st : report.epochs) row("epoch", st);
  if (!report.epochs.empty()) {
    // Final row repeats the selected epoch (the best validation epoch when
    // validation ran, the last epoch otherwise).
    const std::size_t pick = report.best_epoch > 0
                                 ? static_cast<std::size_t>(report.best_epoch - 1)
                                 : report.epochs.size() - 1;
    row("final", report.epochs[pick]);
  }
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

}  // namespace exsup
