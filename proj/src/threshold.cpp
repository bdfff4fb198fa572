// SPDX-License-Identifier: Apache-2.0
#include "exsup/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace exsup {

void ConstraintSet::add_sample(std::span<const double> map, const BinaryMask& positive,
                               const BinaryMask& negative) {
  const Eigen::Index h = positive.rows(), w = positive.cols();
  if (negative.rows() != h || negative.cols() != w ||
      static_cast<Eigen::Index>(map.size()) != h * w) {
    throw std::invalid_argument("constraints: saliency and mask sizes disagree");
  }
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const double v = map[static_cast<std::size_t>(y * w + x)];
      if (positive(y, x) != 0) le_values.push_back(v);
      if (negative(y, x) != 0) ge_values.push_back(v);
    }
  }
}

std::size_t count_satisfied(const ConstraintSet& c, double a) {
  std::size_t n = 0;
  for (double v : c.le_values) n += (a <= v);
  for (double v : c.ge_values) n += (a > v);
  return n;
}

namespace {

// counts against pre-sorted ascending arrays
std::size_t count_sorted(const std::vector<double>& les, const std::vector<double>& ges,
                         double a) {
  const auto le_hit = les.end() - std::lower_bound(les.begin(), les.end(), a);
  const auto ge_hit = std::lower_bound(ges.begin(), ges.end(), a) - ges.begin();
  return static_cast<std::size_t>(le_hit + ge_hit);
}

}  // namespace

double optimal_threshold(const ConstraintSet& c) {
  if (c.size() == 0) return 0.5;
  std::vector<double> les = c.le_values, ges = c.ge_values;
  std::sort(les.begin(), les.end());
  std::sort(ges.begin(), ges.end());

  double best_a = 0.0;
  std::size_t best = 0;
  auto consider = [&](double a) {
    const std::size_t n = count_sorted(les, ges, a);
    if (n > best) {
      best = n;
      best_a = a;
    }
  };
  for (double v : ges) consider(v);
  for (auto it = les.rbegin(); it != les.rend(); ++it) consider(*it);
  double top = -std::numeric_limits<double>::infinity();
  if (!les.empty()) top = les.back();
  if (!ges.empty()) top = std::max(top, ges.back());
  consider(std::nextafter(top, std::numeric_limits<double>::infinity()));
  return best_a;
}

ThresholdSearchResult brute_force_threshold(const ConstraintSet& c) {
  if (c.size() > 10000) {
    throw std::invalid_argument("brute_force_threshold: more than 10^4 constraints");
  }
  std::vector<double> candidates;
  candidates.reserve(2 * c.size() + 1);
  for (const auto* list : {&c.le_values, &c.ge_values}) {
    for (double v : *list) {
      candidates.push_back(v);
      candidates.push_back(std::nextafter(v, std::numeric_limits<double>::infinity()));
    }
  }
  candidates.push_back(0.5);

  ThresholdSearchResult best{0.5, 0};
  bool first = true;
  for (double a : candidates) {
    const std::size_t n = count_satisfied(c, a);
    if (first || n > best.satisfied) {
      best = {a, n};
      first = false;
    }
  }
  return best;
}

}  // namespace exsup
