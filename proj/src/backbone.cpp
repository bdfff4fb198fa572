// SPDX-License-Identifier: Apache-2.0
#include "exsup/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "exsup/rng.hpp"

namespace exsup {

void BackboneConfig::validate() const {
  if (in_channels < 1 || in_h < 1 || in_w < 1 || num_classes < 2 || widths.empty()) {
    throw std::invalid_argument("backbone: degenerate configuration");
  }
  if (kernel % 2 != 1) {
    throw std::invalid_argument("backbone: kernel must be odd to keep spatial extent");
  }
  Eigen::Index h = in_h, w = in_w;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (h % 2 != 0 || w % 2 != 0) {
      throw std::invalid_argument("backbone: input extent must halve cleanly at every block");
    }
    h /= 2;
    w /= 2;
  }
  if (h < 4 || w < 4) {
    throw std::invalid_argument("backbone: final feature map " + std::to_string(h) + "x" +
                                std::to_string(w) + " is below the 4x4 minimum");
  }
}

Param& ModelParams::at(std::string_view name) {
  for (Param& p : params)
    if (p.name == name) return p;
  throw std::out_of_range("params: no parameter named '" + std::string(name) + "'");
}

const Param& ModelParams::at(std::string_view name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

bool ModelParams::contains(std::string_view name) const {
  for (const Param& p : params)
    if (p.name == name) return true;
  return false;
}

namespace {

Param uniform_param(std::string name, Dims shape, Eigen::Index fan_in, Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(fan_in));
  Array v(numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
  return Param{std::move(name), std::move(shape), std::move(v)};
}

}  // namespace

ModelParams init_params(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::mix(seed ^ 0x5eedf00dcafe1234ull));
  ModelParams mp;
  Eigen::Index cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const Eigen::Index cout = cfg.widths[i];
    const Eigen::Index fan_in = cin * cfg.kernel * cfg.kernel;
    const std::string stem = "block" + std::to_string(i + 1);
    mp.params.push_back(
        uniform_param(stem + ".weight", {cout, cin, cfg.kernel, cfg.kernel}, fan_in, rng));
    mp.params.push_back(Param{stem + ".bias", {cout}, Array::Zero(cout)});
    cin = cout;
  }
  mp.params.push_back(uniform_param("head.weight", {cin, cfg.num_classes}, cin, rng));
  mp.params.push_back(Param{"head.bias", {cfg.num_classes}, Array::Zero(cfg.num_classes)});
  return mp;
}

BoundParams::BoundParams(Tape* tape, const ModelParams& params) {
  bound_.reserve(params.params.size());
  for (const Param& p : params.params) {
    Tensor t = tape ? tape->leaf(p.shape, p.value) : Tensor(p.shape, p.value);
    bound_.emplace_back(p.name, std::move(t));
  }
}

const Tensor& BoundParams::at(std::string_view name) const {
  for (const auto& [n, t] : bound_)
    if (n == name) return t;
  throw std::out_of_range("params: no bound tensor named '" + std::string(name) + "'");
}

Forward forward(const BoundParams& params, const BackboneConfig& cfg, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != cfg.in_channels || batch.dim(2) != cfg.in_h ||
      batch.dim(3) != cfg.in_w) {
    throw std::invalid_argument("forward: batch shape " + dims_to_string(batch.shape()) +
                                " does not match the configured input size");
  }
  const Eigen::Index pad = cfg.kernel / 2;
  Tensor x = batch;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string stem = "block" + std::to_string(i + 1);
    x = conv2d(x, params.at(stem + ".weight"), params.at(stem + ".bias"), 1, pad);
    x = relu(x);
    x = max_pool2d(x, 2, 2);
  }
  Tensor pooled = global_avg_pool(x);
  Tensor logits = linear(pooled, params.at("head.weight"), params.at("head.bias"));
  return Forward{std::move(logits), std::move(x)};
}

Tensor prediction_loss(const Tensor& logits, std::span<const int> labels) {
  return softmax_cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// checkpoint format: "EXSB" magic, u32 version, u64 record count, then per
// record: u32 name length, name bytes, u32 rank, u64 extents, f64 payload.
// Everything little-endian.

namespace {

constexpr char kMagic[4] = {'E', 'X', 'S', 'B'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, static_cast<std::uint64_t>(params.params.size()));
  for (const Param& p : params.params) {
    put(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(os, static_cast<std::uint32_t>(p.shape.size()));
    for (Eigen::Index d : p.shape) put(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(Scalar)) * p.value.size());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: '" + path.string() + "' is not a parameter file");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is, "record count");
  ModelParams mp;
  mp.params.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len = get<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(is, "rank");
    if (!is || rank > 8) throw std::runtime_error("checkpoint: corrupt record header");
    Dims shape(rank);
    for (auto& d : shape) d = static_cast<Eigen::Index>(get<std::uint64_t>(is, "extent"));
    const Eigen::Index n = numel(shape);
    if (n < 0 || n > (1 << 28)) throw std::runtime_error("checkpoint: implausible tensor size");
    Array v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(Scalar)) * n);
    if (!is) throw std::runtime_error("checkpoint: truncated payload in '" + name + "'");
    mp.params.push_back(Param{std::move(name), std::move(shape), std::move(v)});
  }
  return mp;
}

BackboneConfig infer_backbone(const ModelParams& params, Eigen::Index in_h, Eigen::Index in_w) {
  BackboneConfig cfg;
  cfg.in_h = in_h;
  cfg.in_w = in_w;
  cfg.widths.clear();

  std::vector<std::pair<int, const Param*>> blocks;
  const Param* head_bias = nullptr;
  for (const Param& p : params.params) {
    if (p.name.rfind("block", 0) == 0 && p.name.size() > 6 &&
        p.name.substr(p.name.find('.')) == ".weight") {
      const int index = std::atoi(p.name.c_str() + 5);
      if (index < 1 || p.shape.size() != 4)
        throw std::runtime_error("checkpoint: unexpected block parameter '" + p.name + "'");
      blocks.emplace_back(index, &p);
    } else if (p.name == "head.bias") {
      head_bias = &p;
    }
  }
  if (blocks.empty() || head_bias == nullptr)
    throw std::runtime_error("checkpoint: parameter set does not describe this backbone");
  std::sort(blocks.begin(), blocks.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  cfg.in_channels = blocks.front().second->shape[1];
  cfg.kernel = blocks.front().second->shape[2];
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].first != static_cast<int>(i) + 1)
      throw std::runtime_error("checkpoint: block parameters are not consecutive");
    cfg.widths.push_back(blocks[i].second->shape[0]);
  }
  cfg.num_classes = head_bias->shape.at(0);
  cfg.validate();
  return cfg;
}

}  // namespace exsup
