// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "exsup/imputation.hpp"
#include "exsup/mask.hpp"
#include "exsup/saliency.hpp"
#include "exsup/tensor.hpp"

namespace exsup {

enum class SupervisionVariant { kNone, kGradia, kHaics, kResG, kResL };

std::string_view to_string(SupervisionVariant v);
SupervisionVariant variant_from_string(std::string_view s);  // throws on unknown names

struct RobustLossConfig {
  double alpha = 0.01;     // slack absorbed before the hinge activates
  double gamma = 50.0;     // tanh slope; saturates within ~0.1 of the threshold
  double lambda_exp = 1.0;
  SupervisionVariant variant = SupervisionVariant::kNone;
  ImputationConfig imputation;
  // one threshold per sample instead of one per batch
  bool per_sample_threshold = false;

  void validate() const;  // alpha in [0,2], gamma > 0, lambda_exp >= 0
};

// Robust explanation loss. Per sample:
//   hinge    = max{0, mean over labeled pixels |tanh(gamma (M - a)) - H| - alpha}
//   distance = mean over labeled pixels |M - imputed|
// with H = positive - negative, batch loss the mean of hinge + distance over
// all samples; samples without labeled pixels contribute exactly 0. The hinge
// always reads the full-resolution map. The distance term reads whichever of
// the two map resolutions matches `imputed`: a mask-resolution target is
// compared against the upsampled map, a native-resolution target against the
// native map with the labeled region carried over by block-any downsampling.
//
// `thresholds` holds one shared value or one value per sample.
Tensor res_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks,
                std::span<const double> thresholds, const Tensor& imputed,
                const RobustLossConfig& cfg);

// mean over every full-resolution pixel of |M - positive|
Tensor gradia_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks);

// binary cross-entropy against positive/negative targets over labeled pixels
// only (per-sample mean, then batch mean); M is clipped to [1e-7, 1-1e-7]
Tensor haics_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks);

// pred_loss + lambda_exp * exp_loss
Tensor total_objective(const Tensor& pred_loss, const Tensor& exp_loss, double lambda_exp);

}  // namespace exsup
