// SPDX-License-Identifier: Apache-2.0
#include "exsup/saliency.hpp"

#include <stdexcept>
#include <utility>

namespace exsup {

SaliencyMaps compute_saliency(const Tensor& head_weight, const Tensor& activations,
                              std::vector<int> target_class, Eigen::Index full_h,
                              Eigen::Index full_w, const std::vector<Scalar>* norm_override) {
  if (activations.rank() != 4) {
    throw std::invalid_argument("saliency: activations must be [N,K,h,w], got " +
                                dims_to_string(activations.shape()));
  }
  if (head_weight.rank() != 2 || head_weight.dim(0) != activations.dim(1)) {
    throw std::invalid_argument("saliency: head weight " + dims_to_string(head_weight.shape()) +
                                " does not match " + std::to_string(activations.dim(1)) +
                                " channels");
  }
  const Eigen::Index n = activations.dim(0), k = activations.dim(1);
  const Eigen::Index hw = activations.dim(2) * activations.dim(3);
  const Eigen::Index classes = head_weight.dim(1);
  if (static_cast<Eigen::Index>(target_class.size()) != n) {
    throw std::invalid_argument("saliency: one target class per sample required");
  }
  for (int c : target_class) {
    if (c < 0 || c >= classes) {
      throw std::out_of_range("saliency: target class " + std::to_string(c) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  if (norm_override && static_cast<Eigen::Index>(norm_override->size()) != n) {
    throw std::invalid_argument("saliency: norm override must have one entry per sample");
  }

  const Array& w = head_weight.data();
  const Array& a = activations.data();
  Array raw(n * hw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int cls = target_class[static_cast<std::size_t>(i)];
    auto out = raw.segment(i * hw, hw);
    out.setZero();
    for (Eigen::Index ch = 0; ch < k; ++ch) {
      out += w[ch * classes + cls] * a.segment((i * k + ch) * hw, hw);
    }
  }
  Array relu_mask = (raw > 0.0).cast<Scalar>();
  raw = raw.max(0.0);

  std::vector<Scalar> norm(static_cast<std::size_t>(n));
  Array out(n * hw);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar d;
    if (norm_override) {
      d = (*norm_override)[static_cast<std::size_t>(i)];
      if (!(d > 0.0)) throw std::invalid_argument("saliency: norm override must be positive");
    } else {
      const Scalar m = raw.segment(i * hw, hw).maxCoeff();
      d = (m > 0.0) ? m : 1.0;  // identically-zero maps stay zero
    }
    norm[static_cast<std::size_t>(i)] = d;
    out.segment(i * hw, hw) = raw.segment(i * hw, hw) / d;
  }

  const int a_node = activations.node(), w_node = head_weight.node();
  Array w_saved = (a_node >= 0) ? w : Array();
  Array a_saved = (w_node >= 0) ? a : Array();
  if (a_node < 0 && w_node < 0) relu_mask.resize(0);
  std::vector<Scalar> norm_saved = norm;
  std::vector<int> cls_saved = target_class;
  Tensor native = make_op(
      {n, 1, activations.dim(2), activations.dim(3)}, std::move(out),
      {&activations, &head_weight},
      [a_node, w_node, n, k, hw, classes, w_saved = std::move(w_saved),
       a_saved = std::move(a_saved), relu_mask = std::move(relu_mask),
       norm_saved = std::move(norm_saved), cls_saved = std::move(cls_saved)](const Array& up,
                                                                             Tape& t) {
        // d raw / d A[n,ch,p] = w[ch, cls_n]; d raw / d w[ch, cls] sums
        // activations over the samples targeting cls. The divisor stays
        // constant by design.
        Array draw(n * hw);
        for (Eigen::Index i = 0; i < n; ++i) {
          draw.segment(i * hw, hw) = up.segment(i * hw, hw) *
                                     relu_mask.segment(i * hw, hw) /
                                     norm_saved[static_cast<std::size_t>(i)];
        }
        if (a_node >= 0) {
          Array& ga = t.sweep_grad(a_node);
          for (Eigen::Index i = 0; i < n; ++i) {
            const int cls = cls_saved[static_cast<std::size_t>(i)];
            for (Eigen::Index ch = 0; ch < k; ++ch) {
              ga.segment((i * k + ch) * hw, hw) +=
                  w_saved[ch * classes + cls] * draw.segment(i * hw, hw);
            }
          }
        }
        if (w_node >= 0) {
          Array& gw = t.sweep_grad(w_node);
          for (Eigen::Index i = 0; i < n; ++i) {
            const int cls = cls_saved[static_cast<std::size_t>(i)];
            for (Eigen::Index ch = 0; ch < k; ++ch) {
              gw[ch * classes + cls] +=
                  (a_saved.segment((i * k + ch) * hw, hw) * draw.segment(i * hw, hw)).sum();
            }
          }
        }
      });

  Tensor full = upsample_bilinear(native, full_h, full_w);
  return SaliencyMaps{std::move(native), std::move(full), std::move(target_class),
                      std::move(norm)};
}

BinaryMask binarize_plane(const Scalar* values, Eigen::Index h, Eigen::Index w,
                          double threshold) {
  BinaryMask m(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) m(y, x) = values[y * w + x] >= threshold ? 1 : 0;
  return m;
}

std::vector<BinaryMask> binarize(const SaliencyMaps& maps, double threshold) {
  const Eigen::Index n = maps.full.dim(0), h = maps.full.dim(2), w = maps.full.dim(3);
  std::vector<BinaryMask> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.push_back(binarize_plane(maps.full.data().data() + i * h * w, h, w, threshold));
  }
  return out;
}

}  // namespace exsup
