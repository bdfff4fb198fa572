// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "exsup/mask.hpp"
#include "exsup/saliency.hpp"

namespace exsup {

struct ExplanationScore {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// |pred & truth| / |pred | truth|; both empty counts as perfect agreement.
double iou(const BinaryMask& pred, const BinaryMask& truth);

// Confusion restricted to labeled pixels: positives are the mask's positive
// layer, negatives its negative layer, everything else is ignored. 0/0
// ratios collapse to 0.
struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
Prf prf1(const BinaryMask& pred, const BinaryMask& positive, const BinaryMask& negative);

// Binarizes each full-resolution map at `threshold` and averages per-sample
// scores. Scores are computed against the clean annotation layers when the
// dataset carries them, otherwise against the noisy ones.
ExplanationScore evaluate_explanations(const SaliencyMaps& maps,
                                       const std::vector<const AnnotationMask*>& masks,
                                       double threshold = 0.5);

}  // namespace exsup
