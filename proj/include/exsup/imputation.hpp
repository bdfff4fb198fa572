// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "exsup/backbone.hpp"
#include "exsup/mask.hpp"
#include "exsup/tensor.hpp"

namespace exsup {

using DenseMap = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ImputationKind { kGaussian, kLearnableShallow, kLearnableDeep };

struct ImputationConfig {
  ImputationKind kind = ImputationKind::kGaussian;
  int gaussian_kernel = 5;     // odd; 5 gives ~2px of boundary slack at 64x64
  double gaussian_sigma = 1.5;
  Eigen::Index deep_hidden = 8;
};

// Normalized k x k Gaussian: nonnegative, sums to 1.
DenseMap gaussian_kernel(int k, double sigma);

// Fixed imputation target clamp(G*positive - G*negative, 0, 1) with same-size
// zero-padded blur, at mask resolution. Subtracting the blurred negative
// layer pulls the target toward 0 around regions the model should ignore.
// k=1 returns the positive layer exactly.
DenseMap gaussian_impute(const AnnotationMask& mask, int k, double sigma);

// Conv stack geometry for the learnable imputation head. The stack consumes
// the 2-channel (positive, negative) mask stack and must land exactly on the
// saliency native resolution; anything else throws.
struct ImputationGeometry {
  struct Layer {
    Eigen::Index out_channels, kernel, stride, padding;
  };
  std::vector<Layer> layers;
  Eigen::Index in_extent = 0;   // square input assumed
  Eigen::Index out_extent = 0;
};

// One convolution with kernel 2s, stride s = in/out, padding s/2; the
// 224 -> 7 case lands on kernel 64 / stride 32 / padding 16.
ImputationGeometry shallow_geometry(Eigen::Index in_extent, Eigen::Index out_extent);

// Five convolutions. Downsampling is concentrated in the leading stride-2
// layers (even kernels 8 then 4, so every extent stays integral); trailing
// layers are kernel-3 stride-1. in/out must be a power of two <= 32.
ImputationGeometry deep_geometry(Eigen::Index in_extent, Eigen::Index out_extent,
                                 Eigen::Index hidden);

ImputationGeometry make_geometry(const ImputationConfig& cfg, Eigen::Index in_extent,
                                 Eigen::Index out_extent);

// Parameters named impute.conv<i>.weight / impute.conv<i>.bias. The head
// starts at the fixed-imputation special case of its family (block-average
// carriers plus a calibrated output layer, see the implementation) with small
// uniform jitter, drawn on an independent stream: adding these to a model
// leaves the backbone draw for the same seed untouched.
std::vector<Param> init_imputation(const ImputationGeometry& geom, std::uint64_t seed);

// 2-channel constant input [N,2,H,W] from the noisy annotation layers.
Tensor stack_masks(const std::vector<const AnnotationMask*>& masks);

// relu between layers, sigmoid on the output; differentiable w.r.t. the
// bound impute.* parameters. Returns [N,1,out,out].
Tensor learnable_impute(const Tensor& stacked, const BoundParams& params,
                        const ImputationGeometry& geom);

}  // namespace exsup
