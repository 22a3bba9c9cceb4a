#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "kneeatt/cli.hpp"
#include "kneeatt/config.hpp"
#include "kneeatt/dataset_io.hpp"
#include "kneeatt/metrics.hpp"
#include "kneeatt/params.hpp"

using namespace kneeatt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "kneeatt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const char* kTinyConfig = R"({
  "model": {"input_size": [32, 24, 1], "width_multiplier": 0.0625, "attention_widths": [4]},
  "train": {"max_epochs": 1, "batch_size": 8, "lr0": 0.001, "probe_samples": 1},
  "data": {"counts_per_grade": [8, 8, 8, 8, 8], "image_size": [32, 24]},
  "grid": {"w0_values": [0.9, 1.0], "w1_values": [0.8], "max_epochs": 1}
})";

fs::path write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("config parsing lists every problem at once") {
  const RunConfig defaults;
  CHECK(defaults.problems().empty());
  CHECK(defaults.model.input_h == defaults.data.image_h);

  try {
    parse_run_config(R"({"model": {"backbone": "vgg16", "widht": 1, "classes": "five"},
                         "train": {"lr0": -1, "betas": [1, 2]}, "extra": 3})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string all = e.what();
    CHECK(all.find("widht") != std::string::npos);
    CHECK(all.find("classes") != std::string::npos);
    CHECK(all.find("betas") != std::string::npos);
    CHECK(all.find("extra") != std::string::npos);
    CHECK(all.find("lr0") != std::string::npos);
    CHECK(e.problems().size() >= 5);
  }
  CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);

  const RunConfig tiny = parse_run_config(kTinyConfig);
  CHECK(tiny.model.width_multiplier == 0.0625);
  CHECK(tiny.train.beta2 == 0.999);
  const RunConfig again = parse_run_config(run_config_to_text(tiny));
  CHECK(run_config_to_text(again) == run_config_to_text(tiny));

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"input_size": [64, 64, 1]}})"),
                       doctest::Contains("does not match data.image_size"), ConfigError);
}

TEST_CASE("shipped configs are valid") {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(KNEEATT_CONFIG_DIR)) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_run_config(entry.path()));
    ++n;
  }
  CHECK(n >= 3);
}

TEST_CASE("gendata is deterministic and matches its manifest") {
  const auto root = testing::scratch_dir("cli_gendata");
  const auto cfg = write_text(root / "tiny.json", kTinyConfig);
  REQUIRE(run({"gendata", "--config", cfg.string(), "--out", (root / "a").string()}).code == kExitOk);
  REQUIRE(run({"gendata", "--config", cfg.string(), "--out", (root / "b").string()}).code == kExitOk);
  REQUIRE(run({"gendata", "--config", cfg.string(), "--seed", "99", "--out", (root / "c").string()}).code == kExitOk);
  CHECK(file_checksum(root / "a/index.csv") == file_checksum(root / "b/index.csv"));
  CHECK(file_checksum(root / "a/samples/00000.bin") == file_checksum(root / "b/samples/00000.bin"));
  CHECK(file_checksum(root / "a/samples/00000.bin") != file_checksum(root / "c/samples/00000.bin"));
  CHECK(fs::exists(root / "a/run_config.json"));

  std::ifstream index(root / "a/index.csv");
  std::string line;
  std::getline(index, line);
  std::vector<int> per_grade(5, 0);
  while (std::getline(index, line)) ++per_grade[static_cast<std::size_t>(std::stoi(line.substr(line.find(',') + 1)))];
  CHECK(per_grade == std::vector<int>{8, 8, 8, 8, 8});
  CHECK(load_dataset(root / "c").manifest.seed == 99);
}

TEST_CASE("usage errors exit with code 2") {
  const auto root = testing::scratch_dir("cli_usage");
  const auto missing = (root / "nowhere").string();
  const Result r = run({"train", "--data", missing, "--out", (root / "o").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find(missing) != std::string::npos);

  CHECK(run({}).code == kExitUsage);
  CHECK(run({"train"}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);

  const auto bad = write_text(root / "bad.json", R"({"model": {"fusoin": "multi-loss"}, "train": {"lr0": 0}})");
  const Result c = run({"gendata", "--config", bad.string(), "--out", (root / "d").string()});
  CHECK(c.code == kExitUsage);
  CHECK(c.err.find("fusoin") != std::string::npos);
  CHECK(c.err.find("lr0") != std::string::npos);
}

TEST_CASE("train, eval and gridsearch end to end") {
  const auto root = testing::scratch_dir("cli_e2e");
  const auto cfg = write_text(root / "tiny.json", kTinyConfig);
  const auto data = (root / "data").string();
  REQUIRE(run({"gendata", "--config", cfg.string(), "--out", data}).code == kExitOk);
  const std::string before = std::to_string(file_checksum(fs::path(data) / "index.csv"));

  const Result t = run({"train", "--config", cfg.string(), "--data", data, "--out", (root / "run").string()});
  REQUIRE(t.code == kExitOk);
  CHECK(fs::exists(root / "run/best.ckpt"));
  CHECK(fs::exists(root / "run/metrics.csv"));
  CHECK(fs::exists(root / "run/summary.json"));
  CHECK(fs::exists(root / "run/run_config.json"));
  CHECK_FALSE(fs::is_empty(root / "run/masks"));

  // Config defaults to the checkpoint's sibling run_config.json.
  const Result e = run({"eval", "--checkpoint", (root / "run/best.ckpt").string(), "--data", data, "--out",
                        (root / "eval").string()});
  REQUIRE(e.code == kExitOk);
  CHECK(e.out.find("kappa") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(root / "eval/report.json"));
  const auto rows = read_predictions(root / "eval/predictions.csv");
  const KappaResult k = cohens_kappa(confusion_from(rows, 5));
  CHECK(report["kappa"].get<double>() == doctest::Approx(k.kappa).epsilon(1e-12));
  CHECK(report["parameters"].get<std::size_t>() > 0);
  CHECK(report["localization"].contains("att0"));
  CHECK(report.contains("ensemble"));

  const Result g = run({"gridsearch", "--config", cfg.string(), "--data", data, "--out", (root / "grid").string()});
  REQUIRE(g.code == kExitOk);
  std::ifstream grid(root / "grid/grid.csv");
  std::string line;
  int lines = 0, selected = 0;
  std::getline(grid, line);
  while (std::getline(grid, line)) {
    ++lines;
    selected += line.back() == '1';
  }
  CHECK(lines == 2);
  CHECK(selected == 1);
  CHECK(fs::exists(root / "grid/best_cell.json"));

  const auto ef = write_text(root / "ef.json", std::string(kTinyConfig).replace(
                                                   std::string(kTinyConfig).find("\"attention_widths\""), 0,
                                                   "\"fusion\": \"early-fusion\", "));
  const Result bad_grid = run({"gridsearch", "--config", ef.string(), "--data", data, "--out", (root / "g2").string()});
  CHECK(bad_grid.code == kExitUsage);

  CHECK(std::to_string(file_checksum(fs::path(data) / "index.csv")) == before);
}

TEST_CASE("eval of an untrained zero-initialised head predicts the prior") {
  const auto root = testing::scratch_dir("cli_prior");
  const auto cfg_text = std::string(R"({
    "model": {"input_size": [32, 24, 1], "width_multiplier": 0.0625, "attention_widths": [4], "head_init": "zero"},
    "data": {"counts_per_grade": [8, 8, 8, 8, 8], "image_size": [32, 24]}
  })");
  const auto cfg = write_text(root / "zero.json", cfg_text);
  const auto data = (root / "data").string();
  REQUIRE(run({"gendata", "--config", cfg.string(), "--out", data}).code == kExitOk);
  const RunConfig rc = parse_run_config(cfg_text);
  Model model(rc.model);
  save_checkpoint(model.params(), root / "zero.ckpt");
  const Result e = run({"eval", "--config", cfg.string(), "--checkpoint", (root / "zero.ckpt").string(), "--data",
                        data, "--out", (root / "eval").string()});
  REQUIRE(e.code == kExitOk);
  const auto report = nlohmann::json::parse(slurp(root / "eval/report.json"));
  CHECK(report["test_accuracy"].get<double>() == doctest::Approx(0.2));
  for (const auto& row : read_predictions(root / "eval/predictions.csv"))
    for (double p : row.probs) CHECK(p == doctest::Approx(0.2));

  // A checkpoint from a different architecture is rejected with both shapes.
  ModelSpec other = rc.model;
  other.attention_widths = {6};
  Model wrong(other);
  save_checkpoint(wrong.params(), root / "wrong.ckpt");
  const Result m = run({"eval", "--config", cfg.string(), "--checkpoint", (root / "wrong.ckpt").string(), "--data",
                        data, "--out", (root / "eval2").string()});
  CHECK(m.code == kExitUsage);
  CHECK(m.err.find("att0/conv0/w: checkpoint (1,1,16,6) vs model (1,1,16,4)") != std::string::npos);
}

TEST_CASE("the installed binary reports exit codes") {
  const char* exe = std::getenv("KNEEATT_CLI");
  if (!exe) return;
  const auto root = testing::scratch_dir("cli_binary");
  const std::string cmd = std::string(exe) + " train --data " + (root / "missing").string() + " --out " +
                          (root / "o").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == kExitUsage);
  CHECK(WEXITSTATUS(std::system((std::string(exe) + " --help > /dev/null").c_str())) == kExitOk);
}

TEST_CASE("output root override") {
  ::setenv("KNEEATT_OUTPUT_ROOT", "/tmp/kroot", 1);
  CHECK(resolve_output_path("runs/a") == fs::path("/tmp/kroot/runs/a"));
  CHECK(resolve_output_path("/abs/b") == fs::path("/abs/b"));
  ::unsetenv("KNEEATT_OUTPUT_ROOT");
  CHECK(resolve_output_path("runs/a") == fs::path("runs/a"));
}
