// SPDX-License-Identifier: Apache-2.0
#include "exsup/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "exsup/image_io.hpp"
#include "exsup/rng.hpp"

namespace exsup {

Tensor Dataset::batch_images(std::span<const std::size_t> indices) const {
  const Eigen::Index chw = channels * height * width;
  Array data(static_cast<Eigen::Index>(indices.size()) * chw);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    data.segment(static_cast<Eigen::Index>(i) * chw, chw) = samples[indices[i]].image;
  }
  return Tensor({static_cast<Eigen::Index>(indices.size()), channels, height, width},
                std::move(data));
}

void NoiseSpec::validate() const {
  if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) {
    throw std::invalid_argument("noise: drop_probability must lie in [0,1]");
  }
}

// ---------------------------------------------------------------------------
// synthetic generation

namespace {

struct Painter {
  Eigen::Index s;
  BinaryMask shape;

  explicit Painter(Eigen::Index size) : s(size), shape(BinaryMask::Zero(size, size)) {}

  void disk(Eigen::Index cy, Eigen::Index cx, double r) {
    for (Eigen::Index y = 0; y < s; ++y)
      for (Eigen::Index x = 0; x < s; ++x)
        if (double(y - cy) * (y - cy) + double(x - cx) * (x - cx) <= r * r) shape(y, x) = 1;
  }

  void cross(Eigen::Index cy, Eigen::Index cx, Eigen::Index arm, Eigen::Index thick) {
    const Eigen::Index t = thick / 2;
    for (Eigen::Index y = cy - t; y <= cy + t; ++y)
      for (Eigen::Index x = cx - arm; x <= cx + arm; ++x)
        if (y >= 0 && y < s && x >= 0 && x < s) shape(y, x) = 1;
    for (Eigen::Index y = cy - arm; y <= cy + arm; ++y)
      for (Eigen::Index x = cx - t; x <= cx + t; ++x)
        if (y >= 0 && y < s && x >= 0 && x < s) shape(y, x) = 1;
  }

  void frame(Eigen::Index cy, Eigen::Index cx, Eigen::Index half, Eigen::Index thick) {
    for (Eigen::Index y = cy - half; y <= cy + half; ++y) {
      for (Eigen::Index x = cx - half; x <= cx + half; ++x) {
        if (y < 0 || y >= s || x < 0 || x >= s) continue;
        const Eigen::Index border =
            std::min(std::min(y - (cy - half), (cy + half) - y),
                     std::min(x - (cx - half), (cx + half) - x));
        if (border < thick) shape(y, x) = 1;
      }
    }
  }

  void stripe(Eigen::Index cy, Eigen::Index cx, Eigen::Index half, bool anti) {
    for (Eigen::Index d = -half; d <= half; ++d) {
      const Eigen::Index y = cy + d, x = anti ? cx - d : cx + d;
      for (Eigen::Index t = -1; t <= 1; ++t) {
        const Eigen::Index xt = x + t;
        if (y >= 0 && y < s && xt >= 0 && xt < s) shape(y, xt) = 1;
      }
    }
  }
};

// shapes stay clear of each other by a 2px guard band
bool placeable(const BinaryMask& candidate, const BinaryMask& occupied) {
  return !(dilate(candidate, 2) != 0 && occupied != 0).any();
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.image_size < 32) {
    throw std::invalid_argument("synthetic: image_size must be at least 32");
  }
  if (spec.class_count != 2) {
    throw std::invalid_argument("synthetic: only the two-class recipe (disk vs cross) exists");
  }
  if (spec.count < 1) throw std::invalid_argument("synthetic: count must be positive");

  const Eigen::Index s = spec.image_size;
  Dataset ds;
  ds.channels = 1;
  ds.height = s;
  ds.width = s;
  ds.num_classes = 2;
  ds.samples.reserve(static_cast<std::size_t>(spec.count));

  const Rng root(Rng::mix(spec.seed ^ 0x9d2c5680ca358743ull));
  for (int i = 0; i < spec.count; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    Sample sample;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "s%05d", i);
    sample.id = idbuf;
    sample.label = i % 2;

    Array img(s * s);
    for (Eigen::Index p = 0; p < s * s; ++p) img[p] = 0.08 + 0.06 * rng.uniform();

    // class shape first; margins keep it fully inside
    Painter cls(s);
    if (sample.label == 0) {
      const double r = rng.uniform(0.12 * double(s), 0.20 * double(s));
      const auto m = static_cast<Eigen::Index>(std::ceil(r)) + 2;
      cls.disk(rng.uniform_int(m, s - 1 - m), rng.uniform_int(m, s - 1 - m), r);
    } else {
      const auto arm = static_cast<Eigen::Index>(rng.uniform(0.14 * double(s), 0.22 * double(s)));
      const Eigen::Index thick = 2 * rng.uniform_int(1, 2) + 1;  // 3 or 5
      const Eigen::Index m = arm + 2;
      cls.cross(rng.uniform_int(m, s - 1 - m), rng.uniform_int(m, s - 1 - m), arm, thick);
    }
    BinaryMask occupied = cls.shape;

    BinaryMask distract = BinaryMask::Zero(s, s);
    for (int d = 0; d < spec.distractors; ++d) {
      for (int attempt = 0; attempt < 40; ++attempt) {
        Painter p(s);
        if (rng.bernoulli(0.5)) {
          const Eigen::Index half = rng.uniform_int(5, 8);
          const Eigen::Index m = half + 1;
          p.frame(rng.uniform_int(m, s - 1 - m), rng.uniform_int(m, s - 1 - m), half, 2);
        } else {
          const Eigen::Index half = rng.uniform_int(5, 8);
          const Eigen::Index m = half + 2;
          p.stripe(rng.uniform_int(m, s - 1 - m), rng.uniform_int(m, s - 1 - m), half,
                   rng.bernoulli(0.5));
        }
        if (!placeable(p.shape, occupied)) continue;
        occupied = (occupied != 0 || p.shape != 0).cast<std::uint8_t>();
        distract = (distract != 0 || p.shape != 0).cast<std::uint8_t>();
        break;
      }
    }

    // paint class shape and distractors with the same intensity family so
    // brightness alone cannot separate the classes
    auto paint = [&](const BinaryMask& m) {
      const double base = rng.uniform(0.72, 0.92);
      for (Eigen::Index y = 0; y < s; ++y)
        for (Eigen::Index x = 0; x < s; ++x)
          if (m(y, x) != 0) img[y * s + x] = base + rng.uniform(-0.03, 0.03);
    };
    paint(cls.shape);
    paint(distract);
    for (Eigen::Index p = 0; p < s * s; ++p) img[p] = std::min(1.0, std::max(0.0, img[p]));

    sample.image = std::move(img);
    sample.mask.positive = cls.shape;
    sample.mask.negative = distract;
    sample.mask.positive_clean = cls.shape;
    sample.mask.negative_clean = distract;
    validate(sample.mask);
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// corruption

namespace {

BinaryMask drop_regions(const BinaryMask& m, double p, Rng& rng) {
  if (p <= 0.0) return m;
  Eigen::ArrayXXi labels;
  const int count = connected_components(m, labels);
  std::vector<bool> keep(static_cast<std::size_t>(count) + 1, true);
  for (int c = 1; c <= count; ++c) keep[static_cast<std::size_t>(c)] = !rng.bernoulli(p);
  BinaryMask out = m;
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      if (out(y, x) != 0 && !keep[static_cast<std::size_t>(labels(y, x))]) out(y, x) = 0;
  return out;
}

}  // namespace

AnnotationMask corrupt_annotations(const AnnotationMask& clean, const NoiseSpec& spec) {
  spec.validate();
  const BinaryMask& f = clean.has_clean() ? clean.positive_clean : clean.positive;
  const BinaryMask& c = clean.has_clean() ? clean.negative_clean : clean.negative;
  Rng rng(Rng::mix(spec.seed ^ 0x7b11a5ed2f09c4d3ull));

  auto morphed = [&](const BinaryMask& m) {
    return spec.boundary_radius >= 0 ? dilate(m, spec.boundary_radius)
                                     : erode(m, -spec.boundary_radius);
  };
  BinaryMask noisy_f = drop_regions(morphed(f), spec.drop_probability, rng);
  BinaryMask noisy_c = drop_regions(morphed(c), spec.drop_probability, rng);
  // dilation can push the layers into each other; the positive layer wins
  noisy_c = (noisy_c != 0 && noisy_f == 0).cast<std::uint8_t>();

  AnnotationMask out;
  out.positive = std::move(noisy_f);
  out.negative = std::move(noisy_c);
  out.positive_clean = f;
  out.negative_clean = c;
  validate(out);
  return out;
}

void corrupt_dataset(Dataset& ds, const NoiseSpec& spec) {
  spec.validate();
  for (Sample& sample : ds.samples) {
    NoiseSpec per = spec;
    per.seed = Rng::mix(spec.seed ^ hash64(sample.id));
    sample.mask = corrupt_annotations(sample.mask, per);
  }
}

// ---------------------------------------------------------------------------
// splits

std::array<Dataset, 3> split(const Dataset& ds, std::array<Eigen::Index, 3> sizes,
                             std::uint64_t seed) {
  const Eigen::Index total = sizes[0] + sizes[1] + sizes[2];
  if (total > static_cast<Eigen::Index>(ds.samples.size())) {
    throw std::invalid_argument("split: sizes sum to " + std::to_string(total) + " but only " +
                                std::to_string(ds.samples.size()) + " samples exist");
  }
  // shuffle within each class, then interleave classes round-robin so every
  // prefix is stratified
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    per_class[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
  }
  Rng rng(Rng::mix(seed ^ 0x51ab3e6cd90f2748ull));
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    Rng child = rng.fork(c);
    child.shuffle(per_class[c]);
  }
  std::vector<std::size_t> order;
  order.reserve(ds.samples.size());
  std::vector<std::size_t> cursor(per_class.size(), 0);
  bool progressing = true;
  while (progressing) {
    progressing = false;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      if (cursor[c] < per_class[c].size()) {
        order.push_back(per_class[c][cursor[c]++]);
        progressing = true;
      }
    }
  }

  std::array<Dataset, 3> out;
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    out[static_cast<std::size_t>(s)].channels = ds.channels;
    out[static_cast<std::size_t>(s)].height = ds.height;
    out[static_cast<std::size_t>(s)].width = ds.width;
    out[static_cast<std::size_t>(s)].num_classes = ds.num_classes;
    for (Eigen::Index i = 0; i < sizes[static_cast<std::size_t>(s)]; ++i) {
      out[static_cast<std::size_t>(s)].samples.push_back(ds.samples[order[pos++]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// directory I/O

namespace {

BinaryMask mask_from_png(const std::filesystem::path& path, Eigen::Index h, Eigen::Index w) {
  const ImageU8 img = read_png(path);
  if (img.channels != 1) {
    throw std::runtime_error("dataset: " + path.string() + ": masks must be single-channel");
  }
  if (img.height != h || img.width != w) {
    throw std::runtime_error("dataset: " + path.string() + ": mask size " +
                             std::to_string(img.width) + "x" + std::to_string(img.height) +
                             " does not match the image " + std::to_string(w) + "x" +
                             std::to_string(h));
  }
  BinaryMask m(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      m(y, x) = img.pixels[static_cast<std::size_t>(y * w + x)] >= 128 ? 1 : 0;
  return m;
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      bytes[static_cast<std::size_t>(y * m.cols() + x)] = m(y, x) ? 255 : 0;
  write_png_gray(path, static_cast<int>(m.cols()), static_cast<int>(m.rows()), bytes.data());
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto labels_path = dir / "labels.csv";
  std::ifstream labels(labels_path);
  if (!labels) {
    throw std::runtime_error("dataset: cannot open " + labels_path.string());
  }
  std::string line;
  if (!std::getline(labels, line) || line != "id,label") {
    throw std::runtime_error("dataset: " + labels_path.string() +
                             ": first line must be exactly 'id,label'");
  }
  std::vector<std::pair<std::string, int>> entries;
  int max_label = 0;
  std::size_t lineno = 1;
  while (std::getline(labels, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("dataset: " + labels_path.string() + ": line " +
                               std::to_string(lineno) + " is not 'id,label'");
    }
    const std::string id = line.substr(0, comma);
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw std::runtime_error("dataset: " + labels_path.string() + ": line " +
                               std::to_string(lineno) + " has a non-numeric label");
    }
    if (label < 0) {
      throw std::runtime_error("dataset: " + labels_path.string() + ": line " +
                               std::to_string(lineno) + " has a negative label");
    }
    max_label = std::max(max_label, label);
    entries.emplace_back(id, label);
  }
  if (entries.empty()) throw std::runtime_error("dataset: " + labels_path.string() + " lists no samples");
  std::sort(entries.begin(), entries.end());

  Dataset ds;
  ds.num_classes = max_label + 1;
  const bool has_clean = std::filesystem::is_directory(dir / "masks_pos_clean");
  for (const auto& [id, label] : entries) {
    const auto img_path = dir / "images" / (id + ".png");
    if (!std::filesystem::exists(img_path)) {
      throw std::runtime_error("dataset: missing image " + img_path.string());
    }
    const ImageU8 img = read_png(img_path);
    if (ds.samples.empty()) {
      ds.channels = img.channels;
      ds.height = img.height;
      ds.width = img.width;
    } else if (img.channels != ds.channels || img.height != ds.height || img.width != ds.width) {
      throw std::runtime_error("dataset: " + img_path.string() +
                               " differs in size or channels from the first image");
    }
    Sample sample;
    sample.id = id;
    sample.label = label;
    sample.image.resize(ds.channels * ds.height * ds.width);
    for (Eigen::Index c = 0; c < ds.channels; ++c)
      for (Eigen::Index y = 0; y < ds.height; ++y)
        for (Eigen::Index x = 0; x < ds.width; ++x)
          sample.image[(c * ds.height + y) * ds.width + x] =
              img.pixels[static_cast<std::size_t>((y * ds.width + x) * ds.channels + c)] / 255.0;

    const auto pos_path = dir / "masks_pos" / (id + ".png");
    if (!std::filesystem::exists(pos_path)) {
      throw std::runtime_error("dataset: missing positive mask " + pos_path.string());
    }
    sample.mask.positive = mask_from_png(pos_path, ds.height, ds.width);
    const auto neg_path = dir / "masks_neg" / (id + ".png");
    sample.mask.negative = std::filesystem::exists(neg_path)
                               ? mask_from_png(neg_path, ds.height, ds.width)
                               : BinaryMask::Zero(ds.height, ds.width);
    if (has_clean) {
      const auto posc = dir / "masks_pos_clean" / (id + ".png");
      if (!std::filesystem::exists(posc)) {
        throw std::runtime_error("dataset: missing clean mask " + posc.string());
      }
      sample.mask.positive_clean = mask_from_png(posc, ds.height, ds.width);
      const auto negc = dir / "masks_neg_clean" / (id + ".png");
      sample.mask.negative_clean = std::filesystem::exists(negc)
                                       ? mask_from_png(negc, ds.height, ds.width)
                                       : BinaryMask::Zero(ds.height, ds.width);
    }
    validate(sample.mask);
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks_pos");
  fs::create_directories(dir / "masks_neg");
  const bool has_clean = !ds.samples.empty() && ds.samples.front().mask.has_clean();
  if (has_clean) {
    fs::create_directories(dir / "masks_pos_clean");
    fs::create_directories(dir / "masks_neg_clean");
  }
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  if (!labels) throw std::runtime_error("dataset: cannot write " + (dir / "labels.csv").string());
  labels << "id,label\n";
  std::vector<std::uint8_t> bytes;
  for (const Sample& sample : ds.samples) {
    labels << sample.id << ',' << sample.label << '\n';
    bytes.resize(static_cast<std::size_t>(ds.channels * ds.height * ds.width));
    for (Eigen::Index y = 0; y < ds.height; ++y)
      for (Eigen::Index x = 0; x < ds.width; ++x)
        for (Eigen::Index c = 0; c < ds.channels; ++c)
          bytes[static_cast<std::size_t>((y * ds.width + x) * ds.channels + c)] =
              static_cast<std::uint8_t>(std::lround(
                  255.0 * std::min(1.0, std::max(0.0, sample.image[(c * ds.height + y) * ds.width + x]))));
    if (ds.channels == 1) {
      write_png_gray(dir / "images" / (sample.id + ".png"), static_cast<int>(ds.width),
                     static_cast<int>(ds.height), bytes.data());
    } else if (ds.channels == 3) {
      write_png_rgb(dir / "images" / (sample.id + ".png"), static_cast<int>(ds.width),
                    static_cast<int>(ds.height), bytes.data());
    } else {
      throw std::runtime_error("dataset: only 1- or 3-channel images can be saved");
    }
    write_mask_png(dir / "masks_pos" / (sample.id + ".png"), sample.mask.positive);
    write_mask_png(dir / "masks_neg" / (sample.id + ".png"), sample.mask.negative);
    if (has_clean) {
      write_mask_png(dir / "masks_pos_clean" / (sample.id + ".png"), sample.mask.positive_clean);
      write_mask_png(dir / "masks_neg_clean" / (sample.id + ".png"), sample.mask.negative_clean);
    }
  }
  if (!labels) throw std::runtime_error("dataset: failed writing labels.csv");
}

}  // namespace exsup
