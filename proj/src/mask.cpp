// SPDX-License-Identifier: Apache-2.0
#include "exsup/mask.hpp"

#include <stdexcept>
#include <vector>

namespace exsup {

namespace {

void check_binary(const BinaryMask& m, const char* which) {
  if ((m > 1).any()) {
    throw std::invalid_argument(std::string("mask: ") + which + " layer has values outside {0,1}");
  }
}

void check_pair(const BinaryMask& pos, const BinaryMask& neg, const char* kind) {
  check_binary(pos, "positive");
  check_binary(neg, "negative");
  if (pos.rows() != neg.rows() || pos.cols() != neg.cols()) {
    throw std::invalid_argument(std::string("mask: ") + kind +
                                " positive/negative layers differ in size");
  }
  if ((pos != 0 && neg != 0).any()) {
    throw std::invalid_argument(std::string("mask: ") + kind +
                                " positive and negative layers overlap");
  }
}

}  // namespace

void validate(const AnnotationMask& mask) {
  check_pair(mask.positive, mask.negative, "noisy");
  if (mask.has_clean()) {
    check_pair(mask.positive_clean, mask.negative_clean, "clean");
    if (mask.positive_clean.rows() != mask.positive.rows() ||
        mask.positive_clean.cols() != mask.positive.cols()) {
      throw std::invalid_argument("mask: clean layers differ in size from noisy layers");
    }
  }
}

namespace {

BinaryMask morph(const BinaryMask& m, int radius, bool dilating) {
  if (radius <= 0) return m;
  const Eigen::Index h = m.rows(), w = m.cols();
  BinaryMask out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index y0 = std::max<Eigen::Index>(0, y - radius);
      const Eigen::Index y1 = std::min<Eigen::Index>(h - 1, y + radius);
      const Eigen::Index x0 = std::max<Eigen::Index>(0, x - radius);
      const Eigen::Index x1 = std::min<Eigen::Index>(w - 1, x + radius);
      const auto window = m.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1);
      // erosion treats pixels beyond the border as background
      if (dilating) {
        out(y, x) = (window != 0).any() ? 1 : 0;
      } else {
        const bool full_window = (y1 - y0 == 2 * radius) && (x1 - x0 == 2 * radius);
        out(y, x) = (full_window && (window != 0).all()) ? 1 : 0;
      }
    }
  }
  return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& m, int radius) { return morph(m, radius, true); }

BinaryMask erode(const BinaryMask& m, int radius) { return morph(m, radius, false); }

BinaryMask downsample_any(const BinaryMask& m, Eigen::Index factor) {
  if (factor < 1 || m.rows() % factor != 0 || m.cols() % factor != 0) {
    throw std::invalid_argument("downsample_any: factor " + std::to_string(factor) +
                                " does not divide " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
  BinaryMask out(m.rows() / factor, m.cols() / factor);
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      out(y, x) = (m.block(y * factor, x * factor, factor, factor) != 0).any() ? 1 : 0;
    }
  }
  return out;
}

int connected_components(const BinaryMask& m, Eigen::ArrayXXi& labels) {
  const Eigen::Index h = m.rows(), w = m.cols();
  labels = Eigen::ArrayXXi::Zero(h, w);
  int next = 0;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (m(y, x) == 0 || labels(y, x) != 0) continue;
      ++next;
      stack.push_back(y * w + x);
      labels(y, x) = next;
      while (!stack.empty()) {
        const Eigen::Index p = stack.back();
        stack.pop_back();
        const Eigen::Index py = p / w, px = p % w;
        for (Eigen::Index dy = -1; dy <= 1; ++dy) {
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (m(ny, nx) != 0 && labels(ny, nx) == 0) {
              labels(ny, nx) = next;
              stack.push_back(ny * w + nx);
            }
          }
        }
      }
    }
  }
  return next;
}

}  // namespace exsup
