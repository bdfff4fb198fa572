// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed binary end to end through std::system, asserting on
// exit codes and on the files it leaves behind.
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "exsup/backbone.hpp"
#include "exsup/dataset.hpp"

using namespace exsup;
namespace fs = std::filesystem;

namespace {

std::string cli() { return EXSUP_CLI_PATH; }

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = cli() + " " + args;
  if (stdout_file.empty())
    cmd += " > /dev/null 2>&1";
  else
    cmd += " > " + stdout_file.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path fresh_dir(const char* stem) {
  const fs::path dir = fs::temp_directory_path() / stem;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
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

// identical relative file sets with identical bytes
void check_trees_equal(const fs::path& a, const fs::path& b) {
  std::size_t count = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++count;
    const fs::path rel = fs::relative(e.path(), a);
    REQUIRE(fs::exists(b / rel));
    CHECK(slurp(e.path()) == slurp(b / rel));
  }
  CHECK(count > 0);
}

// one shared tiny dataset for the train/eval/heatmap cases
const fs::path& clean_data_dir() {
  static fs::path dir = [] {
    const fs::path d = fresh_dir("cli_data_clean");
    REQUIRE(run("gen-data --n 16 --size 32 --seed 3 --out " + d.string()) == 0);
    return d;
  }();
  return dir;
}

const std::string kTinyFit = " --epochs 2 --batch 8 --lr 1e-3 --widths 4,8"
                             " --train-size 10 --val-size 3 --test-size 3";

}  // namespace

TEST_CASE("usage errors exit with the usage code") {
  CHECK(run("") == 2);
  CHECK(run("gen-data") == 2);  // --out is required
  CHECK(run("gen-data --out /tmp/cli_never --drop 1.5") == 2);
  CHECK(run("gen-data --out /tmp/cli_never --size 16") == 2);
  CHECK(run("train --data /tmp/nowhere --no-such-flag") == 2);
  CHECK(run("experiment --data x --out y --sweep bogus") == 2);
  CHECK_FALSE(fs::exists("/tmp/cli_never"));
}

TEST_CASE("gen-data writes a loadable dataset and reruns byte-identically") {
  const fs::path a = fresh_dir("cli_gen_a");
  const fs::path b = fresh_dir("cli_gen_b");
  const std::string flags = "gen-data --n 12 --size 32 --boundary 1 --drop 0.25 --seed 5 --out ";
  CHECK(run(flags + a.string()) == 0);
  CHECK(run(flags + b.string()) == 0);
  check_trees_equal(a, b);

  Dataset ds = load_dataset(a);
  CHECK(ds.samples.size() == 12);
  CHECK(ds.height == 32);
  CHECK(ds.width == 32);
  REQUIRE(ds.samples[0].mask.has_clean());
  // the corruption pass ran: some layer differs from its clean counterpart
  bool corrupted = false;
  for (const Sample& s : ds.samples)
    corrupted = corrupted || !(s.mask.positive == s.mask.positive_clean).all() ||
                !(s.mask.negative == s.mask.negative_clean).all();
  CHECK(corrupted);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train writes a checkpoint and a report, both rerun-stable") {
  const fs::path out1 = fresh_dir("cli_train_1");
  const fs::path out2 = fresh_dir("cli_train_2");
  const std::string cmd = "train --data " + clean_data_dir().string() +
                          " --variant res-g --seed 2" + kTinyFit + " --out ";
  CHECK(run(cmd + out1.string()) == 0);
  CHECK(run(cmd + out2.string()) == 0);
  REQUIRE(fs::exists(out1 / "checkpoint.bin"));
  REQUIRE(fs::exists(out1 / "train_report.csv"));
  CHECK(slurp(out1 / "checkpoint.bin") == slurp(out2 / "checkpoint.bin"));
  CHECK(slurp(out1 / "train_report.csv") == slurp(out2 / "train_report.csv"));

  ModelParams params = load_checkpoint(out1 / "checkpoint.bin");
  BackboneConfig bc = infer_backbone(params, 32, 32);
  CHECK(bc.widths == std::vector<Eigen::Index>{4, 8});
  CHECK(lines_of(slurp(out1 / "train_report.csv")).size() == 4);  // header + 2 epochs + final
  fs::remove_all(out2);
  fs::remove_all(out1);
}

TEST_CASE("config files feed flag values and the command line wins") {
  const fs::path dir = fresh_dir("cli_config");
  const fs::path cfg = dir / "train.ini";
  {
    std::ofstream out(cfg);
    out << "[train]\nepochs = 1\nbatch = 8\nlr = 0.001\n"
           "train-size = 10\nval-size = 3\ntest-size = 3\n";
  }
  const std::string base = "train --data " + clean_data_dir().string() +
                           " --widths 4,8 --config " + cfg.string() + " --out ";

  const fs::path from_cfg = dir / "from_cfg";
  CHECK(run(base + from_cfg.string()) == 0);
  CHECK(lines_of(slurp(from_cfg / "train_report.csv")).size() == 3);  // 1 epoch

  const fs::path overridden = dir / "overridden";
  CHECK(run(base + overridden.string() + " --epochs 2") == 0);
  CHECK(lines_of(slurp(overridden / "train_report.csv")).size() == 4);  // flag beat the file

  // unknown keys must not be ignored silently
  const fs::path bad = dir / "bad.ini";
  {
    std::ofstream out(bad);
    out << "[train]\nepochz = 1\n";
  }
  CHECK(run("train --data " + clean_data_dir().string() + " --widths 4,8 --config " +
            bad.string() + " --out " + (dir / "never").string()) == 2);
  CHECK_FALSE(fs::exists(dir / "never"));
  fs::remove_all(dir);
}

TEST_CASE("eval reproduces the test metrics the training run printed") {
  const fs::path out = fresh_dir("cli_eval");
  const std::string train_cmd = "train --data " + clean_data_dir().string() +
                                " --variant none --seed 4" + kTinyFit + " --out " + out.string();
  const fs::path train_log = out / "train.log";
  CHECK(run(train_cmd, train_log) == 0);
  const auto train_lines = lines_of(slurp(train_log));
  REQUIRE(train_lines.size() == 3);  // status, header, metrics
  CHECK(train_lines[1] == "accuracy,iou,precision,recall,f1");

  const fs::path eval_log = out / "eval.log";
  const std::string eval_cmd = "eval --data " + clean_data_dir().string() + " --checkpoint " +
                               (out / "checkpoint.bin").string() +
                               " --part test --train-size 10 --val-size 3 --test-size 3";
  CHECK(run(eval_cmd, eval_log) == 0);
  const auto eval_lines = lines_of(slurp(eval_log));
  REQUIRE(eval_lines.size() == 2);
  CHECK(eval_lines[1] == train_lines[2]);

  CHECK(run("eval --data " + clean_data_dir().string() + " --checkpoint " +
            (out / "checkpoint.bin").string()) == 0);  // whole-set evaluation
  CHECK(run("eval --data " + clean_data_dir().string() + " --checkpoint /tmp/no_such.bin") == 1);
  fs::remove_all(out);
}

TEST_CASE("heatmaps renders the requested panels") {
  const fs::path out = fresh_dir("cli_heat_model");
  const std::string train_cmd = "train --data " + clean_data_dir().string() +
                                " --variant none --seed 4 --epochs 1 --batch 8 --lr 1e-3"
                                " --widths 4,8 --train-size 10 --val-size 3 --test-size 3 --out " +
                                out.string();
  REQUIRE(run(train_cmd) == 0);
  const std::string ckpt = (out / "checkpoint.bin").string();

  const fs::path panels = fresh_dir("cli_heat_out");
  CHECK(run("heatmaps --data " + clean_data_dir().string() + " --checkpoint " + ckpt +
            " --count 3 --out " + panels.string()) == 0);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(panels))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 3);

  const Dataset ds = load_dataset(clean_data_dir());
  const std::string id = ds.samples[5].id;
  const fs::path one = fresh_dir("cli_heat_one");
  CHECK(run("heatmaps --data " + clean_data_dir().string() + " --checkpoint " + ckpt +
            " --ids " + id + " --out " + one.string()) == 0);
  CHECK(fs::exists(one / (id + ".png")));

  CHECK(run("heatmaps --data " + clean_data_dir().string() + " --checkpoint " + ckpt +
            " --ids not_a_sample --out " + one.string()) == 1);
  fs::remove_all(panels);
  fs::remove_all(one);
  fs::remove_all(out);
}

TEST_CASE("experiment grids write their three outputs and flag failures") {
  const fs::path out = fresh_dir("cli_exp");
  const std::string base = "experiment --data " + clean_data_dir().string() +
                           " --variants none --seeds 1 --epochs 1 --batch 8 --lr 1e-3"
                           " --widths 4,8 --train-size 8 --val-size 4 --test-size 4 --out ";
  CHECK(run(base + out.string()) == 0);
  REQUIRE(fs::exists(out / "results.csv"));
  REQUIRE(fs::exists(out / "summary.csv"));
  REQUIRE(fs::exists(out / "report.txt"));
  CHECK(lines_of(slurp(out / "results.csv")).size() == 2);
  CHECK(lines_of(slurp(out / "summary.csv")).size() == 2);

  // an oversubscribed sweep cell fails the run without killing the grid
  const fs::path bad = fresh_dir("cli_exp_bad");
  CHECK(run(base + bad.string() + " --sweep train_size --sweep-values 4,1000") == 1);
  const auto lines = lines_of(slurp(bad / "results.csv"));
  REQUIRE(lines.size() == 3);
  CHECK(lines[1].find(",ok,") != std::string::npos);
  CHECK(lines[2].find(",failed,") != std::string::npos);
  fs::remove_all(bad);
  fs::remove_all(out);
}
