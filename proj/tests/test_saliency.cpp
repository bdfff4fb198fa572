// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "exsup/rng.hpp"
#include "exsup/saliency.hpp"

using namespace exsup;

namespace {

Array rand_array(Rng& rng, Eigen::Index n, double lo, double hi) {
  Array a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

}  // namespace

TEST_CASE("a constant single-channel activation normalizes to all ones") {
  Tensor w = Tensor::constant({1, 2}, 1.0);
  Tensor act = Tensor::constant({1, 1, 3, 3}, 5.0);
  const SaliencyMaps maps = compute_saliency(w, act, {0}, 6, 6);
  CHECK((maps.native.data() == 1.0).all());
  CHECK((maps.full.data() == 1.0).all());
  CHECK(maps.norm[0] == 5.0);
}

TEST_CASE("negative head weights over nonnegative activations give a zero map") {
  Tensor w = Tensor::constant({2, 2}, -1.0);
  Rng rng(51);
  Tensor act({1, 2, 3, 3}, rand_array(rng, 18, 0.0, 1.0));
  const SaliencyMaps maps = compute_saliency(w, act, {0}, 6, 6);
  CHECK((maps.native.data() == 0.0).all());
  CHECK(maps.norm[0] == 1.0);  // zero maps divide by 1, not 0
}

TEST_CASE("two-channel map matches a per-pixel oracle") {
  Rng rng(52);
  const Eigen::Index n = 3, k = 2, h = 4, wdim = 4;
  Tensor w({k, 2}, rand_array(rng, k * 2, -1.0, 1.0));
  Tensor act({n, k, h, wdim}, rand_array(rng, n * k * h * wdim, -1.0, 1.0));
  std::vector<int> cls = {0, 1, 0};
  const SaliencyMaps maps = compute_saliency(w, act, cls, 8, 8);
  for (Eigen::Index i = 0; i < n; ++i) {
    Array raw(h * wdim);
    for (Eigen::Index p = 0; p < h * wdim; ++p) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < k; ++c)
        s += w.data()[c * 2 + cls[std::size_t(i)]] * act.data()[(i * k + c) * h * wdim + p];
      raw[p] = std::max(0.0, s);
    }
    const double mx = raw.maxCoeff();
    const double norm = mx > 0 ? mx : 1.0;
    for (Eigen::Index p = 0; p < h * wdim; ++p) {
      CHECK(maps.native.data()[i * h * wdim + p] ==
            doctest::Approx(raw[p] / norm).epsilon(1e-10));
    }
    CHECK(maps.norm[std::size_t(i)] == norm);
  }
}

TEST_CASE("map values live in [0,1] and the per-sample max is 0 or 1") {
  Rng rng(53);
  for (int t = 0; t < 20; ++t) {
    Tensor w({3, 2}, rand_array(rng, 6, -1.0, 1.0));
    Tensor act({2, 3, 4, 4}, rand_array(rng, 96, -1.0, 1.0));
    const SaliencyMaps maps = compute_saliency(w, act, {0, 1}, 8, 8);
    CHECK(maps.native.data().minCoeff() >= 0.0);
    CHECK(maps.native.data().maxCoeff() <= 1.0);
    CHECK(maps.full.data().minCoeff() >= 0.0);
    CHECK(maps.full.data().maxCoeff() <= 1.0);
    for (Eigen::Index i = 0; i < 2; ++i) {
      const double mx = maps.native.data().segment(i * 16, 16).maxCoeff();
      CHECK((mx == 0.0 || mx == doctest::Approx(1.0).epsilon(1e-12)));
    }
  }
}

TEST_CASE("scaling the target-class head column leaves the map unchanged") {
  Rng rng(54);
  Array wv = rand_array(rng, 6, -1.0, 1.0);
  Tensor act({1, 3, 4, 4}, rand_array(rng, 48, -1.0, 1.0));
  const SaliencyMaps base = compute_saliency(Tensor({3, 2}, wv), act, {1}, 8, 8);
  Array scaled = wv;
  for (int c = 0; c < 3; ++c) scaled[c * 2 + 1] *= 7.5;
  const SaliencyMaps got = compute_saliency(Tensor({3, 2}, scaled), act, {1}, 8, 8);
  for (Eigen::Index p = 0; p < 16; ++p) {
    CHECK(got.native.data()[p] == doctest::Approx(base.native.data()[p]).epsilon(1e-12));
  }
}

TEST_CASE("full map is the bilinear lift of the native map") {
  Rng rng(55);
  Tensor w({2, 2}, rand_array(rng, 4, -1.0, 1.0));
  Tensor act({1, 2, 3, 3}, rand_array(rng, 18, -1.0, 1.0));
  const SaliencyMaps maps = compute_saliency(w, act, {0}, 9, 9);
  CHECK(maps.full.shape() == Dims{1, 1, 9, 9});
  const Tensor lifted = upsample_bilinear(maps.native, 9, 9);
  CHECK((maps.full.data() - lifted.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("binarization contracts") {
  Array zero = Array::Zero(4);
  CHECK((binarize_plane(zero.data(), 2, 2) == 0).all());
  Array vals(3);
  vals << 0.2, 0.5, 0.9;
  const BinaryMask m = binarize_plane(vals.data(), 1, 3);
  CHECK(m(0, 0) == 0);
  CHECK(m(0, 1) == 1);  // threshold itself counts as inside
  CHECK(m(0, 2) == 1);
}

TEST_CASE("gradients flow through the map with the denominator frozen") {
  Rng rng(56);
  const Array act_point = rand_array(rng, 2 * 2 * 3 * 3, -1.0, 1.0);
  const Array w_point = rand_array(rng, 4, -1.0, 1.0);

  // freeze the divisor at the base point so every probe sees the same norm
  std::vector<Scalar> norms;
  {
    const SaliencyMaps base = compute_saliency(Tensor({2, 2}, w_point),
                                               Tensor({2, 2, 3, 3}, act_point), {0, 1}, 6, 6);
    norms = base.norm;
  }
  auto through_act = [&](const Tensor& act) {
    const SaliencyMaps maps =
        compute_saliency(Tensor({2, 2}, w_point), act, {0, 1}, 6, 6, &norms);
    return sum(maps.full);
  };
  CHECK(gradient_check(through_act, {2, 2, 3, 3}, act_point) < 1e-3);

  auto through_w = [&](const Tensor& w) {
    const SaliencyMaps maps =
        compute_saliency(w, Tensor({2, 2, 3, 3}, act_point), {0, 1}, 6, 6, &norms);
    return sum(maps.full);
  };
  CHECK(gradient_check(through_w, {2, 2}, w_point) < 1e-3);
}

TEST_CASE("norm overrides must be positive and sized to the batch") {
  Tensor w = Tensor::constant({1, 2}, 1.0);
  Tensor act = Tensor::constant({1, 1, 2, 2}, 1.0);
  std::vector<Scalar> bad = {0.0};
  CHECK_THROWS_AS(compute_saliency(w, act, {0}, 4, 4, &bad), std::invalid_argument);
  std::vector<Scalar> wrong_size = {1.0, 1.0};
  CHECK_THROWS_AS(compute_saliency(w, act, {0}, 4, 4, &wrong_size), std::invalid_argument);
}
