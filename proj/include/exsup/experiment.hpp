// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exsup/dataset.hpp"
#include "exsup/image_io.hpp"
#include "exsup/trainer.hpp"

namespace exsup {

enum class SweepAxis { kNone, kTrainSize, kAlpha };

std::string_view to_string(SweepAxis axis);
SweepAxis sweep_from_string(std::string_view s);  // throws on unknown names

// A grid of runs: variants x sweep values x seeds over one dataset. Every
// cell re-derives the same train/val/test split from split_seed, so cells
// differ only in what the axis and the seed say they differ in.
struct ExperimentSpec {
  std::vector<SupervisionVariant> variants;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SweepAxis sweep = SweepAxis::kNone;
  std::vector<double> sweep_values;  // train_size takes integral values
  TrainConfig base;
  std::array<Eigen::Index, 3> split_sizes = {100, 200, 200};
  std::uint64_t split_seed = 13;
  int jobs = 1;

  void validate() const;
};

struct CellResult {
  SupervisionVariant variant = SupervisionVariant::kNone;
  double sweep_value = 0.0;  // meaningful only when the spec sweeps
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // populated when !ok
  int best_epoch = 0;
  EvalResult test;
};

struct ExperimentOutcome {
  std::vector<CellResult> cells;  // canonical order: variant, sweep value, seed
  double wall_seconds = 0.0;
  bool all_ok = false;
};

// Runs the grid on a bounded worker pool (spec.jobs threads). A failed cell
// is recorded with its error and the grid keeps going; results are written
// in canonical order regardless of scheduling.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const Dataset& full);

// One row per run. Failed rows keep the schema with empty metric cells; the
// error text goes to the report, not the CSV.
void write_results_csv(const std::filesystem::path& path, const ExperimentSpec& spec,
                       const ExperimentOutcome& outcome);

// One row per (variant, sweep value): mean and sample standard deviation
// (n-1 denominator, 0 when a single run) over the cell's successful seeds.
void write_summary_csv(const std::filesystem::path& path, const ExperimentSpec& spec,
                       const ExperimentOutcome& outcome);

// Human-readable run log: configuration echo, per-cell status, wall time.
// This is the only output that carries timing, so the CSVs stay rerun-stable.
void write_report(const std::filesystem::path& path, const ExperimentSpec& spec,
                  const ExperimentOutcome& outcome);

// Side-by-side gray panels [input | annotation | explanation] with a 2px
// white divider. The annotation panel shows the training-time layers:
// positive 255, negative 128, unlabeled 0.
ImageU8 render_heatmap(const Sample& sample, Eigen::Index channels, const Scalar* saliency,
                       Eigen::Index h, Eigen::Index w);

// Renders <id>.png for the given samples using the model's explanation of
// the true class.
void write_heatmaps(const std::filesystem::path& dir, const ModelParams& params,
                    const BackboneConfig& cfg, const Dataset& ds,
                    std::span<const std::size_t> indices);

}  // namespace exsup
