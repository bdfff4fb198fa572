// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exsup/mask.hpp"
#include "exsup/tensor.hpp"

namespace exsup {

struct Sample {
  std::string id;
  int label = 0;
  Array image;  // channels*height*width, row-major, values in [0,1]
  AnnotationMask mask;
};

struct Dataset {
  Eigen::Index channels = 1;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  int num_classes = 2;
  std::vector<Sample> samples;

  // [indices.size(), C, H, W] constant tensor
  Tensor batch_images(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
  int count = 500;
  Eigen::Index image_size = 64;  // >= 32
  int class_count = 2;
  std::uint64_t seed = 7;
  int distractors = 2;
};

// Two-class shape discrimination: class 0 carries a filled disk, class 1 a
// cross, at random position and scale over a noisy background. Distractor
// shapes (hollow frames, diagonal stripes) appear in both classes and define
// the negative annotation; the class shape defines the positive one. Labels
// alternate, so class counts differ by at most 1. Clean mask layers equal the
// noisy ones until a corruption pass replaces the latter. Bit-reproducible
// per seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct NoiseSpec {
  int boundary_radius = 0;       // > 0 dilates, < 0 erodes
  double drop_probability = 0.0; // per 8-connected region, in [0,1]
  std::uint64_t seed = 0;

  void validate() const;
};

// Boundary morphology followed by connected-region dropout on each layer,
// then overlap removal from the negative layer so disjointness survives
// dilation. Reads the clean layers, fills the noisy ones. Deterministic in
// spec.seed.
AnnotationMask corrupt_annotations(const AnnotationMask& clean, const NoiseSpec& spec);

// corrupt_annotations per sample with a stream derived from spec.seed and
// the sample id, so sample order and dataset size never shift the draws.
void corrupt_dataset(Dataset& ds, const NoiseSpec& spec);

// Class-stratified disjoint splits (train, val, test); per-class counts in
// each split differ by at most 1. Throws when sizes oversubscribe.
std::array<Dataset, 3> split(const Dataset& ds, std::array<Eigen::Index, 3> sizes,
                             std::uint64_t seed);

// Directory layout: images/<id>.png, masks_pos/<id>.png, optional
// masks_neg/<id>.png, optional masks_pos_clean/ and masks_neg_clean/, and
// labels.csv with header id,label. Gray or RGB images normalized to [0,1];
// masks binarized at >= 128. Missing negative masks mean an all-zero layer.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace exsup
