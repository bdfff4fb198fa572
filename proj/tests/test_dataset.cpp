// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "exsup/dataset.hpp"
#include "exsup/mask.hpp"

using namespace exsup;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.count = 24;
  spec.image_size = 32;
  spec.seed = 7;
  return spec;
}

std::filesystem::path temp_dir(const char* stem) {
  const auto dir = std::filesystem::temp_directory_path() / stem;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("generation is seed-deterministic and seed-sensitive") {
  const Dataset a = generate_synthetic(small_spec());
  const Dataset b = generate_synthetic(small_spec());
  SyntheticSpec other = small_spec();
  other.seed = 8;
  const Dataset c = generate_synthetic(other);
  REQUIRE(a.samples.size() == 24);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].id == b.samples[i].id);
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK((a.samples[i].image - b.samples[i].image).abs().maxCoeff() == 0.0);
    CHECK((a.samples[i].mask.positive == b.samples[i].mask.positive).all());
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size() && !differs; ++i) {
    differs = (a.samples[i].image - c.samples[i].image).abs().maxCoeff() > 0.0;
  }
  CHECK(differs);
}

TEST_CASE("classes are balanced to within one sample") {
  SyntheticSpec spec = small_spec();
  spec.count = 25;
  const Dataset ds = generate_synthetic(spec);
  int c0 = 0, c1 = 0;
  for (const Sample& s : ds.samples) (s.label == 0 ? c0 : c1)++;
  CHECK(std::abs(c0 - c1) <= 1);
}

TEST_CASE("every generated sample has valid, nonempty clean annotations") {
  const Dataset ds = generate_synthetic(small_spec());
  for (const Sample& s : ds.samples) {
    validate(s.mask);
    CHECK(s.mask.has_clean());
    CHECK((s.mask.positive_clean != 0).count() > 0);
    CHECK(s.image.minCoeff() >= 0.0);
    CHECK(s.image.maxCoeff() <= 1.0);
    // freshly generated noisy layers equal the clean ones
    CHECK((s.mask.positive == s.mask.positive_clean).all());
    CHECK((s.mask.negative == s.mask.negative_clean).all());
  }
}

TEST_CASE("zero-strength corruption is the identity") {
  Dataset ds = generate_synthetic(small_spec());
  NoiseSpec noise;
  noise.boundary_radius = 0;
  noise.drop_probability = 0.0;
  corrupt_dataset(ds, noise);
  for (const Sample& s : ds.samples) {
    CHECK((s.mask.positive == s.mask.positive_clean).all());
    CHECK((s.mask.negative == s.mask.negative_clean).all());
  }
}

TEST_CASE("full dropout erases every annotated region") {
  Dataset ds = generate_synthetic(small_spec());
  NoiseSpec noise;
  noise.drop_probability = 1.0;
  noise.seed = 3;
  corrupt_dataset(ds, noise);
  for (const Sample& s : ds.samples) {
    CHECK((s.mask.positive == 0).all());
    CHECK((s.mask.negative == 0).all());
    CHECK((s.mask.positive_clean != 0).count() > 0);  // clean layers untouched
  }
}

TEST_CASE("corruption keeps layers binary and disjoint") {
  Dataset ds = generate_synthetic(small_spec());
  NoiseSpec noise;
  noise.boundary_radius = 2;
  noise.drop_probability = 0.3;
  noise.seed = 5;
  corrupt_dataset(ds, noise);
  for (const Sample& s : ds.samples) validate(s.mask);
}

TEST_CASE("per-sample noise streams do not depend on dataset size or order") {
  Dataset big = generate_synthetic(small_spec());
  Dataset small = big;
  small.samples.resize(6);
  NoiseSpec noise;
  noise.boundary_radius = 1;
  noise.drop_probability = 0.5;
  noise.seed = 11;
  corrupt_dataset(big, noise);
  corrupt_dataset(small, noise);
  for (std::size_t i = 0; i < small.samples.size(); ++i) {
    CHECK((big.samples[i].mask.positive == small.samples[i].mask.positive).all());
    CHECK((big.samples[i].mask.negative == small.samples[i].mask.negative).all());
  }
}

TEST_CASE("boundary morphology matches dilate/erode on the clean layers") {
  Dataset ds = generate_synthetic(small_spec());
  NoiseSpec grow;
  grow.boundary_radius = 2;
  corrupt_dataset(ds, grow);
  // with no dropout, the positive layer is exactly the dilation, minus any
  // overlap handed to it by the (also dilated) negative layer
  for (const Sample& s : ds.samples) {
    const BinaryMask want = dilate(s.mask.positive_clean, 2);
    CHECK((s.mask.positive == want).all());
    CHECK((s.mask.positive != 0 && s.mask.negative != 0).count() == 0);
  }
}

TEST_CASE("splits cover the input exactly once, stratified by class") {
  SyntheticSpec spec = small_spec();
  spec.count = 50;
  const Dataset ds = generate_synthetic(spec);
  const auto parts = split(ds, {20, 16, 14}, 13);
  CHECK(parts[0].samples.size() == 20);
  CHECK(parts[1].samples.size() == 16);
  CHECK(parts[2].samples.size() == 14);
  std::set<std::string> seen;
  for (const Dataset& part : parts)
    for (const Sample& s : part.samples) CHECK(seen.insert(s.id).second);
  CHECK(seen.size() == 50);
  for (const Dataset& part : parts) {
    int c0 = 0, c1 = 0;
    for (const Sample& s : part.samples) (s.label == 0 ? c0 : c1)++;
    CHECK(std::abs(c0 - c1) <= 1);
  }

  const auto again = split(ds, {20, 16, 14}, 13);
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < parts[p].samples.size(); ++i)
      CHECK(parts[p].samples[i].id == again[p].samples[i].id);

  CHECK_THROWS_AS(split(ds, {40, 16, 14}, 13), std::invalid_argument);
}

TEST_CASE("datasets round-trip through the directory layout") {
  const auto dir = temp_dir("exsup_test_ds");
  Dataset ds = generate_synthetic(small_spec());
  NoiseSpec noise;
  noise.boundary_radius = 1;
  noise.drop_probability = 0.3;
  noise.seed = 2;
  corrupt_dataset(ds, noise);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.height == ds.height);
  CHECK(back.num_classes == ds.num_classes);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& a = ds.samples[i];
    const Sample& b = back.samples[i];
    CHECK(a.id == b.id);
    CHECK(a.label == b.label);
    CHECK((a.mask.positive == b.mask.positive).all());
    CHECK((a.mask.negative == b.mask.negative).all());
    CHECK((a.mask.positive_clean == b.mask.positive_clean).all());
    // 8-bit quantization: images agree to half a gray level
    CHECK((a.image - b.image).abs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a missing negative-mask directory means an all-zero layer") {
  const auto dir = temp_dir("exsup_test_ds_noneg");
  Dataset ds = generate_synthetic(small_spec());
  ds.samples.resize(3);
  save_dataset(ds, dir);
  std::filesystem::remove_all(dir / "masks_neg");
  std::filesystem::remove_all(dir / "masks_neg_clean");
  std::filesystem::remove_all(dir / "masks_pos_clean");
  const Dataset back = load_dataset(dir);
  REQUIRE(back.samples.size() == 3);
  for (const Sample& s : back.samples) {
    CHECK((s.mask.negative == 0).all());
    CHECK(!s.mask.has_clean());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a mask sized unlike its image is rejected by name") {
  const auto dir = temp_dir("exsup_test_ds_bad");
  Dataset ds = generate_synthetic(small_spec());
  ds.samples.resize(2);
  save_dataset(ds, dir);
  // shrink one mask on disk
  Dataset tiny;
  tiny.channels = 1;
  tiny.height = tiny.width = 16;
  Sample s = ds.samples[0];
  s.mask.positive = BinaryMask::Zero(16, 16);
  s.mask.negative = BinaryMask::Zero(16, 16);
  s.mask.positive_clean.resize(0, 0);
  s.mask.negative_clean.resize(0, 0);
  s.image = Array::Zero(16 * 16);
  tiny.samples.push_back(s);
  const auto scratch = temp_dir("exsup_test_ds_scratch");
  save_dataset(tiny, scratch);
  std::filesystem::copy_file(scratch / "masks_pos" / (s.id + ".png"),
                             dir / "masks_pos" / (s.id + ".png"),
                             std::filesystem::copy_options::overwrite_existing);
  try {
    load_dataset(dir);
    FAIL("expected a size-mismatch error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(s.id) != std::string::npos);
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(scratch);
}

TEST_CASE("noise specification validates its ranges") {
  NoiseSpec spec;
  spec.drop_probability = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.drop_probability = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("batch_images packs samples in index order") {
  const Dataset ds = generate_synthetic(small_spec());
  const std::size_t idx[] = {3, 0};
  const Tensor batch = ds.batch_images(idx);
  CHECK(batch.shape() == Dims{2, 1, 32, 32});
  CHECK((batch.data().segment(0, 32 * 32) - ds.samples[3].image).abs().maxCoeff() == 0.0);
  CHECK((batch.data().segment(32 * 32, 32 * 32) - ds.samples[0].image).abs().maxCoeff() == 0.0);
}
