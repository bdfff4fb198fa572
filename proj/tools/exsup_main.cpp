// SPDX-License-Identifier: Apache-2.0
//
// Workbench around the library: synthesize datasets, train the small conv
// classifier under the different explanation-supervision variants, evaluate,
// sweep grids, and export heatmap panels. Exit codes: 0 success, 1 runtime
// failure (including any failed sweep cell), 2 usage error.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "exsup/backbone.hpp"
#include "exsup/csv.hpp"
#include "exsup/dataset.hpp"
#include "exsup/experiment.hpp"
#include "exsup/loss.hpp"
#include "exsup/trainer.hpp"

namespace fs = std::filesystem;
using namespace exsup;

namespace {

// Flags shared by `train` and `experiment`.
struct FitFlags {
  int epochs = 50;
  double lr = 1e-4;
  double impute_lr_scale = 0.1;
  long long batch = 16;
  double alpha = 0.01;
  double gamma = 50.0;
  double lambda = 0.3;
  std::string imputation = "shallow";
  int gaussian_kernel = 5;
  double gaussian_sigma = 1.5;
  long long deep_hidden = 8;
  bool per_sample_threshold = false;
  std::vector<long long> widths = {16, 32, 64};
  long long kernel = 3;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--impute-lr-scale", f.impute_lr_scale,
                  "Learning-rate multiplier for the imputation head")
      ->capture_default_str();
  cmd->add_option("--batch", f.batch, "Mini-batch size")->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "Hinge slack of the robust explanation loss")
      ->capture_default_str();
  cmd->add_option("--gamma", f.gamma, "Soft-binarization slope")->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "Explanation loss weight")->capture_default_str();
  cmd->add_option("--imputation", f.imputation, "Learnable imputation head: shallow or deep")
      ->check(CLI::IsMember({"shallow", "deep"}))
      ->capture_default_str();
  cmd->add_option("--gaussian-kernel", f.gaussian_kernel,
                  "Kernel size of the fixed Gaussian imputation target (odd)")
      ->capture_default_str();
  cmd->add_option("--gaussian-sigma", f.gaussian_sigma, "Sigma of the fixed Gaussian target")
      ->capture_default_str();
  cmd->add_option("--deep-hidden", f.deep_hidden, "Hidden channels of the deep imputation head")
      ->capture_default_str();
  cmd->add_flag("--per-sample-threshold", f.per_sample_threshold,
                "Solve one adaptive threshold per sample instead of per batch");
  cmd->add_option("--widths", f.widths, "Channel widths of the conv blocks")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--kernel", f.kernel, "Conv kernel size")->capture_default_str();
}

struct SplitFlags {
  long long train = 100;
  long long val = 200;
  long long test = 200;
  std::uint64_t seed = 13;
};

void add_split_flags(CLI::App* cmd, SplitFlags& s) {
  cmd->add_option("--train-size", s.train, "Training split size")->capture_default_str();
  cmd->add_option("--val-size", s.val, "Validation split size")->capture_default_str();
  cmd->add_option("--test-size", s.test, "Test split size")->capture_default_str();
  cmd->add_option("--split-seed", s.seed, "Seed of the stratified split")->capture_default_str();
}

TrainConfig make_train_config(const FitFlags& f, const Dataset& ds, SupervisionVariant variant,
                              std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.learning_rate = f.lr;
  cfg.impute_lr_scale = f.impute_lr_scale;
  cfg.batch_size = static_cast<Eigen::Index>(f.batch);
  cfg.seed = seed;
  cfg.loss.alpha = f.alpha;
  cfg.loss.gamma = f.gamma;
  cfg.loss.lambda_exp = f.lambda;
  cfg.loss.variant = variant;
  cfg.loss.per_sample_threshold = f.per_sample_threshold;
  cfg.loss.imputation.kind = f.imputation == "deep" ? ImputationKind::kLearnableDeep
                                                    : ImputationKind::kLearnableShallow;
  cfg.loss.imputation.gaussian_kernel = f.gaussian_kernel;
  cfg.loss.imputation.gaussian_sigma = f.gaussian_sigma;
  cfg.loss.imputation.deep_hidden = static_cast<Eigen::Index>(f.deep_hidden);
  cfg.backbone.in_channels = ds.channels;
  cfg.backbone.in_h = ds.height;
  cfg.backbone.in_w = ds.width;
  cfg.backbone.widths.assign(f.widths.begin(), f.widths.end());
  cfg.backbone.kernel = static_cast<Eigen::Index>(f.kernel);
  cfg.backbone.num_classes = ds.num_classes;
  cfg.validate();
  return cfg;
}

void print_eval_row(const EvalResult& r) {
  std::cout << "accuracy,iou,precision,recall,f1\n"
            << csv_double(r.accuracy) << ',' << csv_double(r.explanation.iou) << ','
            << csv_double(r.explanation.precision) << ',' << csv_double(r.explanation.recall)
            << ',' << csv_double(r.explanation.f1) << "\n";
}

BackboneConfig load_model_for(const Dataset& ds, const ModelParams& params) {
  BackboneConfig cfg = infer_backbone(params, ds.height, ds.width);
  if (cfg.in_channels != ds.channels)
    throw std::runtime_error("checkpoint expects " + std::to_string(cfg.in_channels) +
                             " input channels but the dataset has " + std::to_string(ds.channels));
  if (ds.num_classes > static_cast<int>(cfg.num_classes))
    throw std::runtime_error("dataset has more classes than the checkpoint head");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic workbench for explanation-supervised training"};
  app.require_subcommand(1);
  // One config option at the root; a subcommand's keys live in its [section].
  // Fallthrough lets `--config` be written after the subcommand name.
  app.set_config("--config", "",
                 "key = value config file; subcommand options go in [subcommand] "
                 "sections; command-line flags override");
  app.allow_config_extras(false);  // misspelled keys are errors, not silence

  // gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic annotated dataset");
  gen->fallthrough();
  int gen_n = 500;
  long long gen_size = 64;
  int gen_distractors = 2;
  int gen_boundary = 0;
  double gen_drop = 0.0;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Sample count")->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  gen->add_option("--size", gen_size, "Square image extent")->check(CLI::Range(32LL, 4096LL))
      ->capture_default_str();
  gen->add_option("--distractors", gen_distractors, "Distractor shapes per image")
      ->check(CLI::Range(0, 16))->capture_default_str();
  gen->add_option("--boundary", gen_boundary,
                  "Annotation boundary noise: dilate by r (>0) or erode by -r (<0)")
      ->check(CLI::Range(-16, 16))->capture_default_str();
  gen->add_option("--drop", gen_drop, "Probability of dropping each annotation region")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train one model and save a checkpoint");
  tr->fallthrough();
  std::string tr_data, tr_out, tr_variant = "none";
  std::uint64_t tr_seed = 1;
  FitFlags tr_fit;
  SplitFlags tr_split;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--variant", tr_variant,
                 "Explanation supervision: none, gradia, haics, res-g, res-l")
      ->capture_default_str();
  tr->add_option("--seed", tr_seed, "Training seed")->capture_default_str();
  tr->add_option("--out", tr_out, "Output directory for checkpoint.bin and train_report.csv");
  add_fit_flags(tr, tr_fit);
  add_split_flags(tr, tr_split);

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->fallthrough();
  std::string ev_data, ev_ckpt, ev_part = "all";
  double ev_threshold = 0.5;
  SplitFlags ev_split;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--part", ev_part, "Evaluate on: all, train, val, test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}))
      ->capture_default_str();
  ev->add_option("--threshold", ev_threshold, "Binarization threshold for explanation scores")
      ->capture_default_str();
  add_split_flags(ev, ev_split);

  // experiment ---------------------------------------------------------------
  auto* ex = app.add_subcommand("experiment", "Run a variants x seeds (x sweep) grid");
  ex->fallthrough();
  std::string ex_data, ex_out, ex_sweep = "none";
  std::vector<std::string> ex_variants = {"none", "gradia", "haics", "res-g", "res-l"};
  std::vector<std::uint64_t> ex_seeds = {1, 2, 3, 4, 5};
  std::vector<double> ex_values;
  int ex_jobs = 1;
  FitFlags ex_fit;
  SplitFlags ex_split;
  ex->add_option("--data", ex_data, "Dataset directory")->required();
  ex->add_option("--out", ex_out, "Output directory for results.csv, summary.csv, report.txt")
      ->required();
  ex->add_option("--variants", ex_variants, "Variants to run")->delimiter(',')
      ->capture_default_str();
  ex->add_option("--seeds", ex_seeds, "Seeds to run")->delimiter(',')->capture_default_str();
  ex->add_option("--sweep", ex_sweep, "Sweep axis: none, train_size, alpha")
      ->check(CLI::IsMember({"none", "train_size", "alpha"}))
      ->capture_default_str();
  ex->add_option("--sweep-values", ex_values, "Sweep values")->delimiter(',');
  ex->add_option("--jobs", ex_jobs, "Worker threads")->check(CLI::Range(1, 256))
      ->capture_default_str();
  add_fit_flags(ex, ex_fit);
  add_split_flags(ex, ex_split);

  // heatmaps -----------------------------------------------------------------
  auto* hm = app.add_subcommand("heatmaps", "Export [input | annotation | explanation] panels");
  hm->fallthrough();
  std::string hm_data, hm_ckpt, hm_out;
  std::vector<std::string> hm_ids;
  int hm_count = 4;
  hm->add_option("--data", hm_data, "Dataset directory")->required();
  hm->add_option("--checkpoint", hm_ckpt, "Checkpoint file")->required();
  hm->add_option("--out", hm_out, "Output directory")->required();
  hm->add_option("--ids", hm_ids, "Sample ids to render (default: the first --count samples)")
      ->delimiter(',');
  hm->add_option("--count", hm_count, "Number of leading samples when --ids is absent")
      ->check(CLI::Range(1, 100000))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      SyntheticSpec spec;
      spec.count = gen_n;
      spec.image_size = static_cast<Eigen::Index>(gen_size);
      spec.seed = gen_seed;
      spec.distractors = gen_distractors;
      Dataset ds = generate_synthetic(spec);
      NoiseSpec noise;
      noise.boundary_radius = gen_boundary;
      noise.drop_probability = gen_drop;
      noise.seed = gen_seed;
      corrupt_dataset(ds, noise);
      save_dataset(ds, gen_out);
      std::cout << "wrote " << ds.samples.size() << " samples (" << ds.height << "x" << ds.width
                << ", " << ds.num_classes << " classes) to " << gen_out << "\n"
                << "noise: boundary=" << gen_boundary << " drop=" << csv_double(gen_drop)
                << " seed=" << gen_seed << "\n";
      return 0;
    }

    if (app.got_subcommand(tr)) {
      Dataset full = load_dataset(tr_data);
      std::array<Dataset, 3> parts =
          split(full, {static_cast<Eigen::Index>(tr_split.train),
                       static_cast<Eigen::Index>(tr_split.val),
                       static_cast<Eigen::Index>(tr_split.test)},
                tr_split.seed);
      TrainConfig cfg = make_train_config(tr_fit, full, variant_from_string(tr_variant), tr_seed);
      TrainResult res = train(cfg, parts[0], parts[1]);
      EvalResult test = evaluate(res.params, cfg.backbone, parts[2]);
      if (!tr_out.empty()) {
        fs::create_directories(tr_out);
        save_checkpoint(fs::path(tr_out) / "checkpoint.bin", res.params);
        write_train_report_csv(fs::path(tr_out) / "train_report.csv", res.report);
      }
      std::cout << "best_epoch=" << res.report.best_epoch
                << " val_accuracy=" << csv_double(res.report.best_val_accuracy)
                << " wall_seconds=" << csv_double(res.report.wall_seconds) << "\n";
      print_eval_row(test);
      return 0;
    }

    if (app.got_subcommand(ev)) {
      Dataset ds = load_dataset(ev_data);
      ModelParams params = load_checkpoint(ev_ckpt);
      BackboneConfig cfg = load_model_for(ds, params);
      EvalResult r;
      if (ev_part == "all") {
        r = evaluate(params, cfg, ds, ev_threshold);
      } else {
        std::array<Dataset, 3> parts =
            split(ds, {static_cast<Eigen::Index>(ev_split.train),
                       static_cast<Eigen::Index>(ev_split.val),
                       static_cast<Eigen::Index>(ev_split.test)},
                  ev_split.seed);
        const int index = ev_part == "train" ? 0 : ev_part == "val" ? 1 : 2;
        r = evaluate(params, cfg, parts[static_cast<std::size_t>(index)], ev_threshold);
      }
      print_eval_row(r);
      return 0;
    }

    if (app.got_subcommand(ex)) {
      Dataset full = load_dataset(ex_data);
      ExperimentSpec spec;
      spec.variants.clear();
      for (const std::string& v : ex_variants) spec.variants.push_back(variant_from_string(v));
      spec.seeds = ex_seeds;
      spec.sweep = sweep_from_string(ex_sweep);
      spec.sweep_values = ex_values;
      spec.base = make_train_config(ex_fit, full, SupervisionVariant::kNone, 0);
      spec.split_sizes = {static_cast<Eigen::Index>(ex_split.train),
                          static_cast<Eigen::Index>(ex_split.val),
                          static_cast<Eigen::Index>(ex_split.test)};
      spec.split_seed = ex_split.seed;
      spec.jobs = ex_jobs;
      spec.validate();

      ExperimentOutcome outcome = run_experiment(spec, full);
      fs::create_directories(ex_out);
      write_results_csv(fs::path(ex_out) / "results.csv", spec, outcome);
      write_summary_csv(fs::path(ex_out) / "summary.csv", spec, outcome);
      write_report(fs::path(ex_out) / "report.txt", spec, outcome);
      std::size_t failed = 0;
      for (const CellResult& c : outcome.cells)
        if (!c.ok) ++failed;
      std::cout << outcome.cells.size() << " cells, " << failed << " failed; wall_seconds="
                << csv_double(outcome.wall_seconds) << "\nwrote results.csv summary.csv report.txt to "
                << ex_out << "\n";
      return outcome.all_ok ? 0 : 1;
    }

    if (app.got_subcommand(hm)) {
      Dataset ds = load_dataset(hm_data);
      ModelParams params = load_checkpoint(hm_ckpt);
      BackboneConfig cfg = load_model_for(ds, params);
      std::vector<std::size_t> indices;
      if (!hm_ids.empty()) {
        for (const std::string& id : hm_ids) {
          bool found = false;
          for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            if (ds.samples[i].id == id) {
              indices.push_back(i);
              found = true;
              break;
            }
          }
          if (!found) throw std::runtime_error("sample id '" + id + "' not in the dataset");
        }
      } else {
        const std::size_t count = std::min<std::size_t>(ds.samples.size(),
                                                        static_cast<std::size_t>(hm_count));
        for (std::size_t i = 0; i < count; ++i) indices.push_back(i);
      }
      write_heatmaps(hm_out, params, cfg, ds, indices);
      std::cout << "wrote " << indices.size() << " heatmaps to " << hm_out << "\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
