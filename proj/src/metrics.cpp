// SPDX-License-Identifier: Apache-2.0
#include "exsup/metrics.hpp"

#include <stdexcept>

namespace exsup {

double iou(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw std::invalid_argument("iou: mask sizes disagree");
  }
  const auto inter = (pred != 0 && truth != 0).count();
  const auto uni = (pred != 0 || truth != 0).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Prf prf1(const BinaryMask& pred, const BinaryMask& positive, const BinaryMask& negative) {
  if (pred.rows() != positive.rows() || pred.cols() != positive.cols() ||
      pred.rows() != negative.rows() || pred.cols() != negative.cols()) {
    throw std::invalid_argument("prf1: mask sizes disagree");
  }
  Eigen::Index tp = 0, fp = 0, fn = 0;
  for (Eigen::Index y = 0; y < pred.rows(); ++y) {
    for (Eigen::Index x = 0; x < pred.cols(); ++x) {
      if (positive(y, x) != 0) {
        (pred(y, x) != 0 ? tp : fn)++;
      } else if (negative(y, x) != 0) {
        if (pred(y, x) != 0) ++fp;
      }
    }
  }
  Prf out;
  out.precision = (tp + fp > 0) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.recall = (tp + fn > 0) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  out.f1 = (out.precision + out.recall > 0)
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

ExplanationScore evaluate_explanations(const SaliencyMaps& maps,
                                       const std::vector<const AnnotationMask*>& masks,
                                       double threshold) {
  const Eigen::Index n = maps.full.dim(0);
  if (static_cast<Eigen::Index>(masks.size()) != n) {
    throw std::invalid_argument("evaluate_explanations: one mask per map required");
  }
  if (n == 0) return {};
  const std::vector<BinaryMask> preds = binarize(maps, threshold);
  ExplanationScore total;
  for (Eigen::Index i = 0; i < n; ++i) {
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    const BinaryMask& pred = preds[static_cast<std::size_t>(i)];
    total.iou += iou(pred, m.eval_positive());
    const Prf prf = prf1(pred, m.eval_positive(), m.eval_negative());
    total.precision += prf.precision;
    total.recall += prf.recall;
    total.f1 += prf.f1;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return ExplanationScore{total.iou * inv, total.precision * inv, total.recall * inv,
                          total.f1 * inv};
}

}  // namespace exsup
