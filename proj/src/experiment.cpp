// SPDX-License-Identifier: Apache-2.0
#include "exsup/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "exsup/csv.hpp"
#include "exsup/saliency.hpp"

namespace exsup {

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kTrainSize: return "train_size";
    case SweepAxis::kAlpha: return "alpha";
  }
  return "none";
}

SweepAxis sweep_from_string(std::string_view s) {
  if (s == "none") return SweepAxis::kNone;
  if (s == "train_size") return SweepAxis::kTrainSize;
  if (s == "alpha") return SweepAxis::kAlpha;
  throw std::invalid_argument("unknown sweep axis: " + std::string(s));
}

void ExperimentSpec::validate() const {
  if (variants.empty()) throw std::invalid_argument("experiment: no variants given");
  if (seeds.empty()) throw std::invalid_argument("experiment: no seeds given");
  if (sweep != SweepAxis::kNone && sweep_values.empty())
    throw std::invalid_argument("experiment: sweep axis set but no sweep values given");
  if (sweep == SweepAxis::kNone && !sweep_values.empty())
    throw std::invalid_argument("experiment: sweep values given without a sweep axis");
  if (sweep == SweepAxis::kTrainSize) {
    for (double v : sweep_values) {
      if (!(v >= 1.0) || v != std::floor(v))
        throw std::invalid_argument("experiment: train_size sweep values must be integers >= 1");
    }
  }
  if (sweep == SweepAxis::kAlpha) {
    for (double v : sweep_values) {
      if (!(v >= 0.0 && v <= 2.0))
        throw std::invalid_argument("experiment: alpha sweep values must lie in [0, 2]");
    }
  }
  if (jobs < 1) throw std::invalid_argument("experiment: jobs must be >= 1");
  base.validate();
}

namespace {

struct CellKey {
  SupervisionVariant variant;
  double sweep_value;
  std::uint64_t seed;
};

std::vector<CellKey> enumerate_cells(const ExperimentSpec& spec) {
  std::vector<double> values =
      spec.sweep == SweepAxis::kNone ? std::vector<double>{0.0} : spec.sweep_values;
  std::vector<CellKey> keys;
  keys.reserve(spec.variants.size() * values.size() * spec.seeds.size());
  for (SupervisionVariant v : spec.variants)
    for (double value : values)
      for (std::uint64_t seed : spec.seeds) keys.push_back({v, value, seed});
  return keys;
}

CellResult run_cell(const ExperimentSpec& spec, const Dataset& full, const CellKey& key) {
  CellResult r;
  r.variant = key.variant;
  r.sweep_value = key.sweep_value;
  r.seed = key.seed;
  try {
    std::array<Dataset, 3> parts = split(full, spec.split_sizes, spec.split_seed);
    Dataset& train_set = parts[0];
    if (spec.sweep == SweepAxis::kTrainSize) {
      const auto k = static_cast<std::size_t>(std::llround(key.sweep_value));
      if (k < 1 || k > train_set.samples.size())
        throw std::invalid_argument("train_size value exceeds the training split");
      // The split interleaves classes, so any prefix stays stratified; the
      // same prefix is used for every seed of this cell.
      train_set.samples.resize(k);
    }
    TrainConfig cfg = spec.base;
    cfg.seed = key.seed;
    cfg.loss.variant = key.variant;
    if (spec.sweep == SweepAxis::kAlpha) cfg.loss.alpha = key.sweep_value;
    cfg.validate();

    TrainResult tr = train(cfg, train_set, parts[1]);
    r.best_epoch = tr.report.best_epoch;
    r.test = evaluate(tr.params, cfg.backbone, parts[2]);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

std::string sweep_value_cell(const ExperimentSpec& spec, double value) {
  if (spec.sweep == SweepAxis::kNone) return "";
  if (spec.sweep == SweepAxis::kTrainSize)
    return std::to_string(static_cast<long long>(std::llround(value)));
  return csv_double(value);
}

struct Moments {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.n = static_cast<int>(xs.size());
  if (m.n == 0) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentSpec& spec, const Dataset& full) {
  spec.validate();
  const std::vector<CellKey> keys = enumerate_cells(spec);

  ExperimentOutcome out;
  out.cells.resize(keys.size());

  const auto t0 = std::chrono::steady_clock::now();
  const int workers = std::min<int>(spec.jobs, static_cast<int>(keys.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < keys.size(); ++i) out.cells[i] = run_cell(spec, full, keys[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= keys.size()) return;
          out.cells[i] = run_cell(spec, full, keys[i]);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }
  const auto t1 = std::chrono::steady_clock::now();

  out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.all_ok = std::all_of(out.cells.begin(), out.cells.end(),
                           [](const CellResult& c) { return c.ok; });
  return out;
}

void write_results_csv(const std::filesystem::path& path, const ExperimentSpec& spec,
                       const ExperimentOutcome& outcome) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "variant,sweep,sweep_value,seed,status,best_epoch,accuracy,iou,precision,recall,f1\n";
  for (const CellResult& c : outcome.cells) {
    out << to_string(c.variant) << ',' << to_string(spec.sweep) << ','
        << sweep_value_cell(spec, c.sweep_value) << ',' << c.seed << ','
        << (c.ok ? "ok" : "failed") << ',';
    if (c.ok) {
      out << c.best_epoch << ',' << csv_double(c.test.accuracy) << ','
          << csv_double(c.test.explanation.iou) << ',' << csv_double(c.test.explanation.precision)
          << ',' << csv_double(c.test.explanation.recall) << ','
          << csv_double(c.test.explanation.f1);
    } else {
      out << ",,,,,";
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const ExperimentSpec& spec,
                       const ExperimentOutcome& outcome) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "variant,sweep,sweep_value,runs,accuracy_mean,accuracy_std,iou_mean,iou_std,"
         "precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n";

  const std::vector<double> values =
      spec.sweep == SweepAxis::kNone ? std::vector<double>{0.0} : spec.sweep_values;
  for (SupervisionVariant v : spec.variants) {
    for (double value : values) {
      std::vector<double> acc, iou_v, prec, rec, f1v;
      for (const CellResult& c : outcome.cells) {
        if (c.variant != v || c.sweep_value != value || !c.ok) continue;
        acc.push_back(c.test.accuracy);
        iou_v.push_back(c.test.explanation.iou);
        prec.push_back(c.test.explanation.precision);
        rec.push_back(c.test.explanation.recall);
        f1v.push_back(c.test.explanation.f1);
      }
      out << to_string(v) << ',' << to_string(spec.sweep) << ',' << sweep_value_cell(spec, value)
          << ',' << acc.size();
      if (acc.empty()) {
        out << ",,,,,,,,,,";
      } else {
        for (const std::vector<double>* xs : {&acc, &iou_v, &prec, &rec, &f1v}) {
          const Moments m = moments(*xs);
          out << ',' << csv_double(m.mean) << ',' << csv_double(m.std);
        }
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

void write_report(const std::filesystem::path& path, const ExperimentSpec& spec,
                  const ExperimentOutcome& outcome) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "experiment report\n";
  out << "variants:";
  for (SupervisionVariant v : spec.variants) out << ' ' << to_string(v);
  out << "\nseeds:";
  for (std::uint64_t s : spec.seeds) out << ' ' << s;
  out << "\nsweep: " << to_string(spec.sweep);
  if (spec.sweep != SweepAxis::kNone) {
    out << " values:";
    for (double v : spec.sweep_values) out << ' ' << csv_double(v);
  }
  out << "\nsplit: " << spec.split_sizes[0] << '/' << spec.split_sizes[1] << '/'
      << spec.split_sizes[2] << " (seed " << spec.split_seed << ")\n";
  out << "epochs: " << spec.base.epochs << "  lr: " << csv_double(spec.base.learning_rate)
      << "  batch: " << spec.base.batch_size << "  lambda: "
      << csv_double(spec.base.loss.lambda_exp) << "  alpha: " << csv_double(spec.base.loss.alpha)
      << "  gamma: " << csv_double(spec.base.loss.gamma) << "\njobs: " << spec.jobs << "\n\n";

  for (const CellResult& c : outcome.cells) {
    out << to_string(c.variant);
    if (spec.sweep != SweepAxis::kNone)
      out << ' ' << to_string(spec.sweep) << '=' << sweep_value_cell(spec, c.sweep_value);
    out << " seed=" << c.seed << ": ";
    if (c.ok) {
      out << "ok acc=" << csv_double(c.test.accuracy)
          << " iou=" << csv_double(c.test.explanation.iou)
          << " f1=" << csv_double(c.test.explanation.f1) << " best_epoch=" << c.best_epoch;
    } else {
      out << "FAILED: " << c.error;
    }
    out << '\n';
  }
  out << "\nwall_seconds: " << csv_double(outcome.wall_seconds) << '\n';
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

namespace {

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

}  // namespace

ImageU8 render_heatmap(const Sample& sample, Eigen::Index channels, const Scalar* saliency,
                       Eigen::Index h, Eigen::Index w) {
  constexpr Eigen::Index kGap = 2;
  ImageU8 img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(3 * w + 2 * kGap);
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height),
                    255);
  const Eigen::Index plane = h * w;
  for (Eigen::Index y = 0; y < h; ++y) {
    std::uint8_t* row = img.pixels.data() + y * img.width;
    for (Eigen::Index x = 0; x < w; ++x) {
      double v = 0.0;  // channel mean keeps rgb inputs legible in one panel
      for (Eigen::Index c = 0; c < channels; ++c) v += sample.image[c * plane + y * w + x];
      row[x] = to_byte(v / static_cast<double>(channels));

      std::uint8_t ann = 0;
      if (sample.mask.positive(y, x)) ann = 255;
      else if (sample.mask.negative(y, x)) ann = 128;
      row[w + kGap + x] = ann;

      row[2 * (w + kGap) + x] = to_byte(saliency[y * w + x]);
    }
  }
  return img;
}

void write_heatmaps(const std::filesystem::path& dir, const ModelParams& params,
                    const BackboneConfig& cfg, const Dataset& ds,
                    std::span<const std::size_t> indices) {
  std::filesystem::create_directories(dir);
  BoundParams bound(nullptr, params);
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, indices.size() - start);
    std::span<const std::size_t> idx = indices.subspan(start, count);
    BatchView batch = make_batch(ds, idx);
    Forward fw = forward(bound, cfg, batch.images);
    SaliencyMaps maps =
        compute_saliency(bound.at("head.weight"), fw.activations, batch.labels, cfg.in_h, cfg.in_w);
    const Array& full = maps.full.data();
    const Eigen::Index plane = cfg.in_h * cfg.in_w;
    for (std::size_t i = 0; i < count; ++i) {
      const Sample& s = ds.samples[idx[i]];
      ImageU8 img = render_heatmap(s, ds.channels, full.data() + static_cast<Eigen::Index>(i) * plane,
                                   cfg.in_h, cfg.in_w);
      write_png_gray(dir / (s.id + ".png"), img.width, img.height, img.pixels.data());
    }
  }
}

}  // namespace exsup
