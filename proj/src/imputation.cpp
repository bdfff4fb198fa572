// SPDX-License-Identifier: Apache-2.0
#include "exsup/imputation.hpp"

#include <cmath>
#include <stdexcept>

#include "exsup/rng.hpp"

namespace exsup {

namespace {

Eigen::ArrayXd gaussian_1d(int k, double sigma) {
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("gaussian kernel size must be odd and positive, got " +
                                std::to_string(k));
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive");
  Eigen::ArrayXd g(k);
  const double c = (k - 1) / 2.0;
  for (int i = 0; i < k; ++i) g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  return g / g.sum();
}

// separable same-size blur with zero padding
DenseMap blur(const BinaryMask& m, const Eigen::ArrayXd& g) {
  const Eigen::Index h = m.rows(), w = m.cols(), k = g.size(), r = k / 2;
  DenseMap rows = DenseMap::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index sx = x + i - r;
        if (sx >= 0 && sx < w && m(y, sx) != 0) acc += g[i];
      }
      rows(y, x) = acc;
    }
  }
  DenseMap out = DenseMap::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index sy = y + i - r;
        if (sy >= 0 && sy < h) acc += g[i] * rows(sy, x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

}  // namespace

DenseMap gaussian_kernel(int k, double sigma) {
  const Eigen::ArrayXd g = gaussian_1d(k, sigma);
  DenseMap out(k, k);
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) out(y, x) = g[y] * g[x];
  return out;
}

DenseMap gaussian_impute(const AnnotationMask& mask, int k, double sigma) {
  const Eigen::ArrayXd g = gaussian_1d(k, sigma);
  DenseMap target = blur(mask.positive, g) - blur(mask.negative, g);
  return target.max(0.0).min(1.0);
}

// ---------------------------------------------------------------------------

namespace {

void verify_landing(const ImputationGeometry& geom) {
  Eigen::Index e = geom.in_extent;
  for (const auto& layer : geom.layers) {
    e = conv_output_extent(e, layer.kernel, layer.stride, layer.padding);
  }
  if (e != geom.out_extent) {
    throw std::invalid_argument("imputation: conv stack lands on extent " + std::to_string(e) +
                                ", saliency needs " + std::to_string(geom.out_extent));
  }
}

}  // namespace

ImputationGeometry shallow_geometry(Eigen::Index in_extent, Eigen::Index out_extent) {
  if (out_extent < 1 || in_extent % out_extent != 0) {
    throw std::invalid_argument("imputation: input extent " + std::to_string(in_extent) +
                                " is not a multiple of output extent " +
                                std::to_string(out_extent));
  }
  const Eigen::Index stride = in_extent / out_extent;
  ImputationGeometry geom;
  geom.in_extent = in_extent;
  geom.out_extent = out_extent;
  geom.layers.push_back({1, 2 * stride, stride, stride / 2});
  verify_landing(geom);
  return geom;
}

ImputationGeometry deep_geometry(Eigen::Index in_extent, Eigen::Index out_extent,
                                 Eigen::Index hidden) {
  if (out_extent < 1 || in_extent % out_extent != 0) {
    throw std::invalid_argument("imputation: input extent " + std::to_string(in_extent) +
                                " is not a multiple of output extent " +
                                std::to_string(out_extent));
  }
  const Eigen::Index factor = in_extent / out_extent;
  Eigen::Index halvings = 0;
  while ((Eigen::Index(1) << halvings) < factor) ++halvings;
  if ((Eigen::Index(1) << halvings) != factor || halvings > 5) {
    throw std::invalid_argument("imputation: deep stack needs a power-of-two ratio <= 32, got " +
                                std::to_string(factor));
  }
  if (hidden < 2) throw std::invalid_argument("imputation: deep stack needs >= 2 hidden channels");
  ImputationGeometry geom;
  geom.in_extent = in_extent;
  geom.out_extent = out_extent;
  for (Eigen::Index i = 0; i < 5; ++i) {
    const bool last = (i == 4);
    const Eigen::Index ch = last ? 1 : hidden;
    if (i < halvings) {
      geom.layers.push_back(i == 0 ? ImputationGeometry::Layer{ch, 8, 2, 3}
                                   : ImputationGeometry::Layer{ch, 4, 2, 1});
    } else {
      geom.layers.push_back({ch, 3, 1, 1});
    }
  }
  verify_landing(geom);
  return geom;
}

ImputationGeometry make_geometry(const ImputationConfig& cfg, Eigen::Index in_extent,
                                 Eigen::Index out_extent) {
  switch (cfg.kind) {
    case ImputationKind::kLearnableShallow:
      return shallow_geometry(in_extent, out_extent);
    case ImputationKind::kLearnableDeep:
      return deep_geometry(in_extent, out_extent, cfg.deep_hidden);
    case ImputationKind::kGaussian:
      break;
  }
  throw std::logic_error("imputation: gaussian variant has no conv geometry");
}

// The head starts at the fixed-imputation special case of the family:
// channels 0/1 carry exact block averages of the positive/negative layer
// through the stack (stride-s layers average their central s x s taps,
// stride-1 layers pass the center through), and the output layer maps full
// positive block coverage to sigmoid(+4) and empty blocks to sigmoid(-4).
// A head that starts uninformative stalls joint training: the distance term
// then pulls the explanation map toward a flat prediction long enough to
// flatten (or relu-kill) it before the head catches up. Small uniform jitter
// on every weight breaks symmetry so training can refine the estimate.
std::vector<Param> init_imputation(const ImputationGeometry& geom, std::uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0x1a9f3ec58b7d2461ull));
  std::vector<Param> out;
  const std::size_t depth = geom.layers.size();
  Eigen::Index cin = 2;
  for (std::size_t i = 0; i < depth; ++i) {
    const auto& layer = geom.layers[i];
    const Eigen::Index k = layer.kernel;
    const Eigen::Index k2 = k * k;
    const Scalar jitter = Scalar(0.25) / static_cast<Scalar>(k2);
    Array w(layer.out_channels * cin * k2);
    for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = rng.uniform(-jitter, jitter);

    auto tap = [&](Eigen::Index out_c, Eigen::Index in_c) {
      return w.data() + (out_c * cin + in_c) * k2;
    };
    // carrier taps: the output pixel's own stride block, which sits at
    // offset `padding` inside the kernel window
    const Eigen::Index s = layer.stride;
    const Eigen::Index t0 = s > 1 ? layer.padding : (k - 1) / 2;
    const Eigen::Index span = s > 1 ? s : 1;
    if (t0 < 0 || t0 + span > k)
      throw std::logic_error("imputation: carrier block does not fit the kernel window");
    const Scalar block = Scalar(1) / static_cast<Scalar>(span * span);
    auto stamp = [&](Scalar* base, Scalar scale) {
      for (Eigen::Index y = t0; y < t0 + span; ++y)
        for (Eigen::Index x = t0; x < t0 + span; ++x) base[y * k + x] += scale * block;
    };
    const bool last = i + 1 == depth;
    if (last) {
      // read the two carriers (the raw layers when the stack is one deep)
      stamp(tap(0, 0), Scalar(8));
      stamp(tap(0, 1), Scalar(-8));
    } else {
      stamp(tap(0, 0), Scalar(1));
      stamp(tap(1, 1), Scalar(1));
    }

    Array b = Array::Zero(layer.out_channels);
    if (last) b[0] = -4;
    const std::string stem = "impute.conv" + std::to_string(i + 1);
    out.push_back(
        Param{stem + ".weight", {layer.out_channels, cin, layer.kernel, layer.kernel}, std::move(w)});
    out.push_back(Param{stem + ".bias", {layer.out_channels}, std::move(b)});
    cin = layer.out_channels;
  }
  return out;
}

Tensor stack_masks(const std::vector<const AnnotationMask*>& masks) {
  if (masks.empty()) throw std::invalid_argument("stack_masks: empty batch");
  const Eigen::Index n = static_cast<Eigen::Index>(masks.size());
  const Eigen::Index h = masks[0]->positive.rows(), w = masks[0]->positive.cols();
  Array data(n * 2 * h * w);
  for (Eigen::Index i = 0; i < n; ++i) {
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    if (m.positive.rows() != h || m.positive.cols() != w) {
      throw std::invalid_argument("stack_masks: mixed mask sizes in one batch");
    }
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        data[((i * 2 + 0) * h + y) * w + x] = m.positive(y, x);
        data[((i * 2 + 1) * h + y) * w + x] = m.negative(y, x);
      }
    }
  }
  return Tensor({n, 2, h, w}, std::move(data));
}

Tensor learnable_impute(const Tensor& stacked, const BoundParams& params,
                        const ImputationGeometry& geom) {
  if (stacked.rank() != 4 || stacked.dim(1) != 2 || stacked.dim(2) != geom.in_extent ||
      stacked.dim(3) != geom.in_extent) {
    throw std::invalid_argument("learnable_impute: expected [N,2," +
                                std::to_string(geom.in_extent) + "," +
                                std::to_string(geom.in_extent) + "], got " +
                                dims_to_string(stacked.shape()));
  }
  Tensor x = stacked;
  for (std::size_t i = 0; i < geom.layers.size(); ++i) {
    const auto& layer = geom.layers[i];
    const std::string stem = "impute.conv" + std::to_string(i + 1);
    x = conv2d(x, params.at(stem + ".weight"), params.at(stem + ".bias"), layer.stride,
               layer.padding);
    if (i + 1 < geom.layers.size()) x = relu(x);
  }
  return sigmoid(x);
}

}  // namespace exsup
