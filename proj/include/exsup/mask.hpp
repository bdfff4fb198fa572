// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace exsup {

// 0/1 per pixel; uint8 keeps mask-heavy datasets small
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel-level annotation attached to a sample: `positive` marks evidence for
// the label, `negative` marks confusing regions the model should ignore.
// The two layers never overlap. The *_clean fields carry the uncorrupted
// ground truth when the dataset provides it (synthetic data does) and have
// size 0 otherwise.
struct AnnotationMask {
  BinaryMask positive;
  BinaryMask negative;
  BinaryMask positive_clean;
  BinaryMask negative_clean;

  bool has_clean() const { return positive_clean.size() > 0; }
  const BinaryMask& eval_positive() const { return has_clean() ? positive_clean : positive; }
  const BinaryMask& eval_negative() const { return has_clean() ? negative_clean : negative; }

  // labeled = positive | negative
  Eigen::Index labeled_count() const {
    return (positive != 0 || negative != 0).count();
  }
};

// Throws std::invalid_argument unless both layers are 0/1 valued, equally
// sized, and disjoint (clean layers included when present).
void validate(const AnnotationMask& mask);

// Square structuring element of the given radius (side 2r+1).
BinaryMask dilate(const BinaryMask& m, int radius);
BinaryMask erode(const BinaryMask& m, int radius);

// 8-connected component labels, 0 for background; returns the component
// count and fills `labels` with 1-based ids.
int connected_components(const BinaryMask& m, Eigen::ArrayXXi& labels);

// Block reduction by `factor`: output pixel is 1 when any pixel of the
// corresponding factor x factor block is 1. Extents must divide evenly.
BinaryMask downsample_any(const BinaryMask& m, Eigen::Index factor);

}  // namespace exsup
