// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exsup/tensor.hpp"

namespace exsup {

// Small conv classifier: repeated [conv 3x3 /1 pad 1 -> relu -> maxpool 2x2 /2]
// blocks, then global average pool and a single linear head. GAP + one linear
// layer keeps the class activation map a first-order function of the
// activations and head weights, so supervising it never needs a second
// backward pass.
struct BackboneConfig {
  Eigen::Index in_channels = 1;
  Eigen::Index in_h = 64;
  Eigen::Index in_w = 64;
  std::vector<Eigen::Index> widths = {16, 32, 64};
  Eigen::Index kernel = 3;
  Eigen::Index num_classes = 2;

  Eigen::Index feature_h() const { return in_h >> widths.size(); }
  Eigen::Index feature_w() const { return in_w >> widths.size(); }
  void validate() const;  // throws unless the feature map stays >= 4x4
};

// Flat named-parameter list; order is the canonical checkpoint order.
struct ModelParams {
  std::vector<Param> params;

  Param& at(std::string_view name);
  const Param& at(std::string_view name) const;
  bool contains(std::string_view name) const;
};

// Kaiming-style fan-in scaled uniform init, U(+-sqrt(6/fan_in)) for weights
// and zero biases; bit-reproducible per seed. Parameter names:
// block<i>.weight / block<i>.bias, head.weight / head.bias.
ModelParams init_params(const BackboneConfig& cfg, std::uint64_t seed);

// Tensor views of a parameter set: tape leaves when tape != nullptr,
// constants otherwise (pure evaluation).
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape* tape, const ModelParams& params);
  const Tensor& at(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& all() const { return bound_; }

 private:
  std::vector<std::pair<std::string, Tensor>> bound_;
};

struct Forward {
  Tensor logits;       // [N, num_classes]
  Tensor activations;  // [N, K, h, w], the tensor feeding the global pool
};

Forward forward(const BoundParams& params, const BackboneConfig& cfg, const Tensor& batch);

// mean softmax cross-entropy
Tensor prediction_loss(const Tensor& logits, std::span<const int> labels);

// Little-endian binary checkpoint: magic, version, then name / shape / data
// records in list order. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Reconstructs the architecture from parameter shapes (block<i>.weight is
// [out, in, k, k]); the input extent is not stored, so the caller supplies
// it. Throws when the parameter set does not look like this backbone.
BackboneConfig infer_backbone(const ModelParams& params, Eigen::Index in_h, Eigen::Index in_w);

}  // namespace exsup
