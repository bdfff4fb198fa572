// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "exsup/mask.hpp"

namespace exsup {

// Binarization constraints harvested from labeled pixels. A positive pixel
// with saliency v wants to binarize to 1, so the threshold must satisfy
// a <= v; a negative pixel wants 0, so a > v. Unlabeled pixels contribute
// nothing.
struct ConstraintSet {
  std::vector<double> ge_values;  // negative pixels: satisfied iff a > v
  std::vector<double> le_values;  // positive pixels: satisfied iff a <= v

  // map is the full-resolution saliency in row-major order, one value per
  // mask pixel
  void add_sample(std::span<const double> map, const BinaryMask& positive,
                  const BinaryMask& negative);
  std::size_t size() const { return ge_values.size() + le_values.size(); }
};

std::size_t count_satisfied(const ConstraintSet& c, double a);

// Threshold maximizing count_satisfied over all reals, O(m log m): the count
// is piecewise constant on intervals (v_k, v_{k+1}] between sorted constraint
// values, so scanning the values themselves plus one candidate just above the
// largest value covers every plateau. Candidates are visited in the sorted
// order (ge ascending, then le descending, then the above-max candidate) and
// the first maximizer wins, which also makes the result independent of pixel
// order. Empty set -> 0.5, the evaluation-time binarization default.
double optimal_threshold(const ConstraintSet& c);

struct ThresholdSearchResult {
  double threshold;
  std::size_t satisfied;
};

// Direct-count oracle over {values} U {values+eps} U {0.5}; refuses more
// than 10^4 constraints.
ThresholdSearchResult brute_force_threshold(const ConstraintSet& c);

}  // namespace exsup
