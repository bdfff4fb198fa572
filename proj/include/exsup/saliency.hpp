// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "exsup/mask.hpp"
#include "exsup/tensor.hpp"

namespace exsup {

// Model explanation per sample, at the feature-map resolution it was formed
// at and bilinearly upsampled to input resolution. Values live in [0,1] with
// per-sample max 1 unless the map is identically zero.
struct SaliencyMaps {
  Tensor native;  // [N,1,h,w]
  Tensor full;    // [N,1,H,W]
  std::vector<int> target_class;
  std::vector<Scalar> norm;  // divisor applied per sample (max, or 1 for zero maps)
};

// Class activation map: relu over the head-weighted channel sum of the final
// activations, divided by the per-sample max. The divisor is captured as a
// constant, so the backward pass never differentiates through the max; with a
// GAP + linear head this map equals the gradient-based formulation while
// staying first-order in the parameters.
//
// norm_override substitutes the captured divisors (finite-difference
// harnesses need the denominator pinned across evaluations); values must be
// positive.
SaliencyMaps compute_saliency(const Tensor& head_weight, const Tensor& activations,
                              std::vector<int> target_class, Eigen::Index full_h,
                              Eigen::Index full_w,
                              const std::vector<Scalar>* norm_override = nullptr);

// 1 where value >= threshold; evaluation-time companion of the adaptive
// threshold used in training.
BinaryMask binarize_plane(const Scalar* values, Eigen::Index h, Eigen::Index w,
                          double threshold = 0.5);
std::vector<BinaryMask> binarize(const SaliencyMaps& maps, double threshold = 0.5);

}  // namespace exsup
