// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "exsup/experiment.hpp"

using namespace exsup;

namespace {

Dataset grid_dataset(int count = 20) {
  SyntheticSpec spec;
  spec.count = count;
  spec.image_size = 32;
  spec.seed = 11;
  return generate_synthetic(spec);
}

ExperimentSpec tiny_spec() {
  ExperimentSpec spec;
  spec.variants = {SupervisionVariant::kNone, SupervisionVariant::kResG};
  spec.seeds = {1, 2};
  spec.split_sizes = {8, 4, 4};
  spec.split_seed = 5;
  spec.base.backbone.in_h = spec.base.backbone.in_w = 32;
  spec.base.backbone.widths = {4, 8};
  spec.base.epochs = 1;
  spec.base.batch_size = 8;
  spec.base.learning_rate = 1e-3;
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::filesystem::path temp_dir(const char* stem) {
  const auto dir = std::filesystem::temp_directory_path() / stem;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("sweep axis names round-trip and unknown names are rejected") {
  for (SweepAxis a : {SweepAxis::kNone, SweepAxis::kTrainSize, SweepAxis::kAlpha})
    CHECK(sweep_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(sweep_from_string("epochs"), std::invalid_argument);
}

TEST_CASE("experiment spec validation rejects inconsistent grids") {
  CHECK_NOTHROW(tiny_spec().validate());
  ExperimentSpec spec = tiny_spec();
  spec.variants.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.seeds.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.sweep = SweepAxis::kAlpha;  // axis without values
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.sweep_values = {0.5};  // values without an axis
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.sweep = SweepAxis::kTrainSize;
  spec.sweep_values = {4.5};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.sweep = SweepAxis::kAlpha;
  spec.sweep_values = {2.5};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.jobs = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("a small grid runs every cell in canonical order") {
  const Dataset full = grid_dataset();
  const ExperimentSpec spec = tiny_spec();
  ExperimentOutcome out = run_experiment(spec, full);
  REQUIRE(out.cells.size() == 4);
  CHECK(out.all_ok);
  CHECK(out.wall_seconds > 0.0);

  const SupervisionVariant expect_variant[4] = {
      SupervisionVariant::kNone, SupervisionVariant::kNone, SupervisionVariant::kResG,
      SupervisionVariant::kResG};
  const std::uint64_t expect_seed[4] = {1, 2, 1, 2};
  for (int i = 0; i < 4; ++i) {
    CHECK(out.cells[i].variant == expect_variant[i]);
    CHECK(out.cells[i].seed == expect_seed[i]);
    CHECK(out.cells[i].ok);
    CHECK(out.cells[i].best_epoch == 1);
    CHECK(out.cells[i].error.empty());
  }

  // a cell is exactly the train/eval a caller would run by hand
  auto parts = split(full, spec.split_sizes, spec.split_seed);
  TrainConfig cfg = spec.base;
  cfg.seed = 2;
  cfg.loss.variant = SupervisionVariant::kResG;
  TrainResult tr = train(cfg, parts[0], parts[1]);
  EvalResult ev = evaluate(tr.params, cfg.backbone, parts[2]);
  CHECK(out.cells[3].test.accuracy == ev.accuracy);
  CHECK(out.cells[3].test.explanation.iou == ev.explanation.iou);
  CHECK(out.cells[3].best_epoch == tr.report.best_epoch);

  SUBCASE("results and summary csvs carry the schema and recomputable stats") {
    const auto dir = temp_dir("exp_csv_test");
    write_results_csv(dir / "results.csv", spec, out);
    const std::string text = slurp(dir / "results.csv");
    const auto lines = lines_of(text);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] ==
          "variant,sweep,sweep_value,seed,status,best_epoch,accuracy,iou,precision,recall,f1");
    CHECK(lines[1].rfind("none,none,,1,ok,1,", 0) == 0);
    CHECK(lines[3].rfind("res-g,none,,1,ok,1,", 0) == 0);
    for (std::size_t i = 1; i < lines.size(); ++i)
      CHECK(fields_of(lines[i]).size() == 11);

    // metric cells round-trip the doubles exactly
    const auto row1 = fields_of(lines[1]);
    CHECK(parse(row1[6]) == out.cells[0].test.accuracy);
    CHECK(parse(row1[7]) == out.cells[0].test.explanation.iou);

    write_summary_csv(dir / "summary.csv", spec, out);
    const auto slines = lines_of(slurp(dir / "summary.csv"));
    REQUIRE(slines.size() == 3);
    CHECK(slines[0] ==
          "variant,sweep,sweep_value,runs,accuracy_mean,accuracy_std,iou_mean,iou_std,"
          "precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std");
    const auto srow = fields_of(slines[2]);
    REQUIRE(srow.size() == 14);
    CHECK(srow[0] == "res-g");
    CHECK(srow[3] == "2");
    const double a = out.cells[2].test.accuracy, b = out.cells[3].test.accuracy;
    const double mean = (a + b) / 2.0;
    const double sstd = std::sqrt((a - mean) * (a - mean) + (b - mean) * (b - mean));
    CHECK(parse(srow[4]) == mean);
    CHECK(parse(srow[5]) == doctest::Approx(sstd).epsilon(1e-12));

    // csvs carry no timing, so a rewrite is byte-identical
    write_results_csv(dir / "results2.csv", spec, out);
    CHECK(slurp(dir / "results2.csv") == text);

    write_report(dir / "report.txt", spec, out);
    const std::string report = slurp(dir / "report.txt");
    CHECK(report.find("wall_seconds:") != std::string::npos);
    CHECK(report.find("res-g") != std::string::npos);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("worker count never changes the results") {
  const Dataset full = grid_dataset();
  ExperimentSpec spec = tiny_spec();
  spec.variants = {SupervisionVariant::kNone};  // keep the grid cheap
  ExperimentOutcome serial = run_experiment(spec, full);
  spec.jobs = 3;
  ExperimentOutcome pooled = run_experiment(spec, full);
  REQUIRE(serial.cells.size() == pooled.cells.size());
  for (std::size_t i = 0; i < serial.cells.size(); ++i) {
    CHECK(serial.cells[i].seed == pooled.cells[i].seed);
    CHECK(serial.cells[i].test.accuracy == pooled.cells[i].test.accuracy);
    CHECK(serial.cells[i].test.explanation.iou == pooled.cells[i].test.explanation.iou);
    CHECK(serial.cells[i].test.explanation.f1 == pooled.cells[i].test.explanation.f1);
  }
}

TEST_CASE("a failing cell is recorded and the grid keeps going") {
  const Dataset full = grid_dataset();
  ExperimentSpec spec = tiny_spec();
  spec.variants = {SupervisionVariant::kNone};
  spec.sweep = SweepAxis::kTrainSize;
  spec.sweep_values = {4, 1000};  // 1000 oversubscribes the 8-sample split
  ExperimentOutcome out = run_experiment(spec, full);
  REQUIRE(out.cells.size() == 4);
  CHECK_FALSE(out.all_ok);
  CHECK(out.cells[0].ok);
  CHECK(out.cells[1].ok);
  CHECK_FALSE(out.cells[2].ok);
  CHECK_FALSE(out.cells[3].ok);
  CHECK(out.cells[2].error.find("train_size") != std::string::npos);

  // the prefix really is what a by-hand truncation trains on
  auto parts = split(full, spec.split_sizes, spec.split_seed);
  parts[0].samples.resize(4);
  TrainConfig cfg = spec.base;
  cfg.seed = 1;
  TrainResult tr = train(cfg, parts[0], parts[1]);
  CHECK(out.cells[0].test.accuracy == evaluate(tr.params, cfg.backbone, parts[2]).accuracy);

  const auto dir = temp_dir("exp_fail_test");
  write_results_csv(dir / "results.csv", spec, out);
  const auto lines = lines_of(slurp(dir / "results.csv"));
  REQUIRE(lines.size() == 5);
  CHECK(lines[1].rfind("none,train_size,4,1,ok,", 0) == 0);
  CHECK(lines[3] == "none,train_size,1000,1,failed,,,,,,");

  write_summary_csv(dir / "summary.csv", spec, out);
  const auto slines = lines_of(slurp(dir / "summary.csv"));
  REQUIRE(slines.size() == 3);
  const auto ok_row = fields_of(slines[1]);
  CHECK(ok_row[2] == "4");
  CHECK(ok_row[3] == "2");
  // no successful runs: counts stay, stats go empty
  CHECK(slines[2] == "none,train_size,1000,0,,,,,,,,,,");

  write_report(dir / "report.txt", spec, out);
  CHECK(slurp(dir / "report.txt").find("FAILED:") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("an alpha sweep lands in the loss configuration of each cell") {
  const Dataset full = grid_dataset();
  ExperimentSpec spec = tiny_spec();
  spec.variants = {SupervisionVariant::kResG};
  spec.seeds = {1};
  spec.sweep = SweepAxis::kAlpha;
  spec.sweep_values = {0.0, 2.0};
  ExperimentOutcome out = run_experiment(spec, full);
  REQUIRE(out.cells.size() == 2);
  CHECK(out.all_ok);

  auto parts = split(full, spec.split_sizes, spec.split_seed);
  TrainConfig cfg = spec.base;
  cfg.seed = 1;
  cfg.loss.variant = SupervisionVariant::kResG;
  cfg.loss.alpha = 2.0;
  TrainResult tr = train(cfg, parts[0], parts[1]);
  CHECK(out.cells[1].test.accuracy == evaluate(tr.params, cfg.backbone, parts[2]).accuracy);

  const auto dir = temp_dir("exp_alpha_test");
  write_results_csv(dir / "results.csv", spec, out);
  const auto lines = lines_of(slurp(dir / "results.csv"));
  CHECK(lines[1].rfind("res-g,alpha,0,1,ok,", 0) == 0);
  CHECK(lines[2].rfind("res-g,alpha,2,1,ok,", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("heatmap panels place image, annotation, and saliency side by side") {
  Sample s;
  s.id = "probe";
  const Eigen::Index h = 4, w = 4;
  s.image = Array::Zero(h * w);
  s.image[0] = 1.0;        // (0,0)
  s.image[5] = 0.5;        // (1,1)
  s.mask.positive = BinaryMask::Zero(h, w);
  s.mask.negative = BinaryMask::Zero(h, w);
  s.mask.positive(0, 0) = 1;
  s.mask.negative(1, 1) = 1;
  Array sal = Array::Zero(h * w);
  sal[0] = 1.5;   // clamps to white
  sal[1] = -0.2;  // clamps to black
  sal[5] = 0.5;

  ImageU8 img = render_heatmap(s, 1, sal.data(), h, w);
  CHECK(img.width == 3 * 4 + 4);
  CHECK(img.height == 4);
  CHECK(img.channels == 1);
  REQUIRE(img.pixels.size() == static_cast<std::size_t>(img.width * img.height));

  auto px = [&](int y, int x) { return img.pixels[static_cast<std::size_t>(y * img.width + x)]; };
  // image panel
  CHECK(px(0, 0) == 255);
  CHECK(px(1, 1) == 128);
  CHECK(px(2, 2) == 0);
  // dividers stay white
  for (int y = 0; y < 4; ++y)
    for (int x : {4, 5, 10, 11}) CHECK(px(y, x) == 255);
  // annotation panel: positive 255, negative 128, unlabeled 0
  CHECK(px(0, 6) == 255);
  CHECK(px(1, 7) == 128);
  CHECK(px(2, 8) == 0);
  // saliency panel, clamped to [0,1]
  CHECK(px(0, 12) == 255);
  CHECK(px(0, 13) == 0);
  CHECK(px(1, 13) == 128);
  CHECK(px(3, 15) == 0);
}

TEST_CASE("rgb inputs are averaged into the gray image panel") {
  Sample s;
  const Eigen::Index h = 2, w = 2;
  s.image = Array::Zero(3 * h * w);
  s.image[0] = 1.0;  // r at (0,0); g and b stay 0
  s.mask.positive = BinaryMask::Zero(h, w);
  s.mask.negative = BinaryMask::Zero(h, w);
  const Array sal = Array::Zero(h * w);
  ImageU8 img = render_heatmap(s, 3, sal.data(), h, w);
  CHECK(img.pixels[0] == 85);  // round(255 / 3)
}

TEST_CASE("heatmap files are written per sample and are rerun-stable") {
  const Dataset ds = grid_dataset();
  BackboneConfig bc;
  bc.in_h = bc.in_w = 32;
  bc.widths = {4, 8};
  const ModelParams mp = init_params(bc, 4);

  // 18 indices crosses the internal render chunk
  std::vector<std::size_t> idx(18);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  const auto dir_a = temp_dir("heatmaps_a");
  const auto dir_b = temp_dir("heatmaps_b");
  write_heatmaps(dir_a, mp, bc, ds, idx);
  write_heatmaps(dir_b, mp, bc, ds, idx);

  std::size_t count = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir_a)) {
    ++count;
    CHECK(e.path().extension() == ".png");
  }
  CHECK(count == idx.size());

  const std::string name = ds.samples[2].id + ".png";
  CHECK(slurp(dir_a / name) == slurp(dir_b / name));

  ImageU8 img = read_png(dir_a / name);
  CHECK(img.width == 3 * 32 + 4);
  CHECK(img.height == 32);

  // the annotation panel reproduces the sample's own training-time layers
  const Sample& s = ds.samples[2];
  auto px = [&](int y, int x) {
    return img.pixels[static_cast<std::size_t>((y * img.width + x) * img.channels)];
  };
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const std::uint8_t expect = s.mask.positive(y, x) ? 255 : (s.mask.negative(y, x) ? 128 : 0);
      CHECK(px(y, 34 + x) == expect);
    }
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}
