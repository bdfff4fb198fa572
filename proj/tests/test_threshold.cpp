// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "exsup/rng.hpp"
#include "exsup/threshold.hpp"

using namespace exsup;

namespace {

ConstraintSet random_set(Rng& rng, std::size_t m, bool discrete) {
  ConstraintSet c;
  for (std::size_t i = 0; i < m; ++i) {
    // the discrete grid forces ties, where the candidate conventions matter
    const double v = discrete ? rng.uniform_int(0, 10) / 10.0 : rng.uniform();
    if (rng.bernoulli(0.5))
      c.le_values.push_back(v);
    else
      c.ge_values.push_back(v);
  }
  return c;
}

}  // namespace

TEST_CASE("a single satisfiable constraint is satisfied at its own value") {
  ConstraintSet c;
  c.le_values = {0.9};
  const double a = optimal_threshold(c);
  CHECK(a == 0.9);
  CHECK(count_satisfied(c, a) == 1);
}

TEST_CASE("mixed constraints from one sample are all satisfiable") {
  ConstraintSet c;
  BinaryMask pos(1, 3), neg(1, 3);
  pos << 0, 1, 0;
  neg << 1, 0, 1;
  const std::vector<double> map = {0.2, 0.8, 0.6};
  c.add_sample(map, pos, neg);
  REQUIRE(c.size() == 3);
  const double a = optimal_threshold(c);
  // every threshold in (0.6, 0.8] works; whichever is returned must take all 3
  CHECK(count_satisfied(c, a) == 3);
  CHECK(a > 0.6);
  CHECK(a <= 0.8);
}

TEST_CASE("a contradictory pair satisfies exactly one constraint") {
  ConstraintSet c;
  c.le_values = {0.3};
  c.ge_values = {0.7};
  const double a = optimal_threshold(c);
  CHECK(count_satisfied(c, a) == 1);
}

TEST_CASE("the empty set falls back to the evaluation default") {
  ConstraintSet c;
  CHECK(optimal_threshold(c) == 0.5);
  const auto r = brute_force_threshold(c);
  CHECK(r.threshold == 0.5);
  CHECK(r.satisfied == 0);
}

TEST_CASE("count_satisfied counts both directions") {
  ConstraintSet c;
  c.le_values = {0.9};
  CHECK(count_satisfied(c, 0.9) == 1);
  CHECK(count_satisfied(c, 0.91) == 0);
  c.ge_values = {0.2};
  CHECK(count_satisfied(c, 0.5) == 2);
  CHECK(count_satisfied(c, 0.2) == 1);  // a > v is strict
}

TEST_CASE("sorted search achieves the brute-force count on random instances") {
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    ConstraintSet c = random_set(rng, 64, t % 2 == 0);
    const auto oracle = brute_force_threshold(c);
    CHECK(count_satisfied(c, optimal_threshold(c)) == oracle.satisfied);
  }
}

TEST_CASE("result is invariant to constraint order") {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    ConstraintSet c = random_set(rng, 40, true);
    ConstraintSet shuffled = c;
    rng.shuffle(shuffled.le_values);
    rng.shuffle(shuffled.ge_values);
    CHECK(optimal_threshold(c) == optimal_threshold(shuffled));
  }
}

TEST_CASE("add_sample harvests labeled pixels only and checks sizes") {
  ConstraintSet c;
  BinaryMask pos(2, 2), neg(2, 2);
  pos << 1, 0, 0, 0;
  neg << 0, 0, 0, 1;
  const std::vector<double> map = {0.9, 0.1, 0.2, 0.3};
  c.add_sample(map, pos, neg);
  REQUIRE(c.le_values.size() == 1);
  REQUIRE(c.ge_values.size() == 1);
  CHECK(c.le_values[0] == 0.9);
  CHECK(c.ge_values[0] == 0.3);
  const std::vector<double> short_map = {0.9};
  CHECK_THROWS_AS(c.add_sample(short_map, pos, neg), std::invalid_argument);
}

TEST_CASE("the brute-force oracle refuses oversized instances") {
  ConstraintSet c;
  c.le_values.assign(10001, 0.5);
  CHECK_THROWS_AS(brute_force_threshold(c), std::invalid_argument);
}
