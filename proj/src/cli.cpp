#include "kneeatt/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kneeatt/config.hpp"
#include "kneeatt/dataset_io.hpp"
#include "kneeatt/metrics.hpp"
#include "kneeatt/train.hpp"

namespace kneeatt {

namespace fs = std::filesystem;

fs::path resolve_output_path(const fs::path& path) {
  const char* root = std::getenv("KNEEATT_OUTPUT_ROOT");
  if (root && *root && path.is_relative()) return fs::path(root) / path;
  return path;
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
  std::string checkpoint;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  return load_run_config(path);
}

fs::path output_dir(const Options& opt, const RunConfig& cfg) {
  return resolve_output_path(opt.out.empty() ? fs::path(cfg.output_dir) : fs::path(opt.out));
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  save_run_config(cfg, dir / "run_config.json");
}

Dataset open_dataset(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) throw UsageError("--data is required");
  Dataset ds = load_dataset(path);
  const auto& m = ds.manifest;
  if (m.image_h != cfg.model.input_h || m.image_w != cfg.model.input_w) {
    throw UsageError("dataset " + path + " holds " + std::to_string(m.image_h) + "x" + std::to_string(m.image_w) +
                     " images but the model expects " + std::to_string(cfg.model.input_h) + "x" +
                     std::to_string(cfg.model.input_w));
  }
  return ds;
}

int cmd_gendata(const Options& opt, std::ostream& out) {
  RunConfig cfg = load_config(opt.config);
  if (opt.seed) cfg.data.seed = *opt.seed;
  if (const auto p = cfg.problems(); !p.empty()) throw ConfigError(p);
  const fs::path dir = output_dir(opt, cfg);
  echo_config(cfg, dir);

  const auto samples = generate_synthetic(cfg.data);
  save_dataset(dir, cfg.data, samples);

  std::map<Split, std::vector<std::size_t>> table;
  for (Split s : {Split::Train, Split::Val, Split::Test}) table[s].assign(kGrades, 0);
  for (const auto& s : samples) ++table[s.split][static_cast<std::size_t>(s.label)];
  out << "wrote " << samples.size() << " samples to " << dir.string() << "\n";
  out << "split  grade0 grade1 grade2 grade3 grade4\n";
  for (const auto& [split, counts] : table) {
    out << std::left << std::setw(6) << to_string(split) << std::right;
    for (auto c : counts) out << ' ' << std::setw(6) << c;
    out << '\n';
  }
  return kExitOk;
}

void apply_train_seed(RunConfig& cfg, const Options& opt) {
  if (!opt.seed) return;
  cfg.train.seed = *opt.seed;
  cfg.model.seed = *opt.seed;
}

int cmd_train(const Options& opt, std::ostream& out) {
  RunConfig cfg = load_config(opt.config);
  apply_train_seed(cfg, opt);
  if (const auto p = cfg.problems(); !p.empty()) throw ConfigError(p);
  const fs::path dir = output_dir(opt, cfg);
  const Dataset ds = open_dataset(opt.data, cfg);
  echo_config(cfg, dir);

  Model model(cfg.model);
  out << "model: " << to_string(cfg.model.backbone) << " / " << to_string(cfg.model.fusion) << ", "
      << model.parameter_count() << " parameters\n";
  FitOptions fo;
  fo.output_dir = dir;
  fo.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << "  lr " << e.lr << "  train " << e.train_loss << "  val " << e.val_loss;
    for (const auto& [h, acc] : e.val_head_accuracy) out << "  " << h << " val acc " << acc;
    out << "  (" << std::fixed << std::setprecision(1) << e.seconds << "s)" << std::defaultfloat
        << std::setprecision(6) << '\n';
  };
  const RunMetrics m = fit(model, ds.samples, cfg.train, fo);
  save_checkpoint(model.params(), dir / "best.ckpt");

  nlohmann::json summary = {{"stop_epoch", m.stop_epoch},
                            {"best_epoch", m.best_epoch},
                            {"best_val_loss", m.best_val_loss},
                            {"early_stopped", m.early_stopped},
                            {"parameters", model.parameter_count()},
                            {"heads", m.heads}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  out << "best epoch " << m.best_epoch << " of " << m.stop_epoch << ", val loss " << m.best_val_loss << "\n";
  out << "checkpoint: " << (dir / "best.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_gridsearch(const Options& opt, std::ostream& out) {
  RunConfig cfg = load_config(opt.config);
  apply_train_seed(cfg, opt);
  auto problems = cfg.problems();
  if (cfg.model.fusion != Fusion::MultiLoss) problems.push_back("gridsearch needs model.fusion = multi-loss");
  if (cfg.model.branches.size() < 2) problems.push_back("gridsearch needs at least two branches");
  if (!problems.empty()) throw ConfigError(problems);
  const fs::path dir = output_dir(opt, cfg);
  const Dataset ds = open_dataset(opt.data, cfg);
  echo_config(cfg, dir);

  TrainConfig tc = cfg.train;
  tc.max_epochs = cfg.grid.max_epochs;
  const GridResult r = grid_search_weights(cfg.model, ds.samples, tc, cfg.grid.w0_values, cfg.grid.w1_values);
  write_grid_table(r, dir / "grid.csv");
  const GridCell& b = r.best_cell();
  nlohmann::json best = {{"w0", b.w0}, {"w1", b.w1}, {"val_loss", b.val_loss}, {"val_acc", b.val_accuracy}};
  std::ofstream(dir / "best_cell.json") << best.dump(2) << '\n';
  out << r.cells.size() << " cells written to " << (dir / "grid.csv").string() << "\n";
  out << "best: w0 " << b.w0 << ", w1 " << b.w1 << ", val loss " << b.val_loss << ", val acc " << b.val_accuracy << "\n";
  return kExitOk;
}

int cmd_eval(const Options& opt, std::ostream& out) {
  if (opt.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(opt.checkpoint)) throw UsageError("checkpoint not found: " + opt.checkpoint);
  std::string config_path = opt.config;
  if (config_path.empty()) {
    const fs::path sibling = fs::path(opt.checkpoint).parent_path() / "run_config.json";
    if (!fs::exists(sibling)) throw UsageError("no --config given and " + sibling.string() + " does not exist");
    config_path = sibling.string();
  }
  RunConfig cfg = load_config(config_path);
  if (const auto p = cfg.problems(); !p.empty()) throw ConfigError(p);
  const Dataset ds = open_dataset(opt.data, cfg);
  const fs::path dir = output_dir(opt, cfg);
  echo_config(cfg, dir);

  Model model(cfg.model);
  load_checkpoint(model.params(), opt.checkpoint);

  const auto val = select_split(ds.samples, Split::Val);
  const auto test = select_split(ds.samples, Split::Test);
  if (val.empty() || test.empty()) throw std::runtime_error("dataset needs non-empty val and test splits");
  const std::size_t bs = cfg.train.batch_size;
  const Evaluation ev_val = evaluate(model, val, bs);
  const Evaluation ev_test = evaluate(model, test, bs, nullptr, true);

  std::vector<BranchScore> scores;
  for (const auto& h : ev_val.heads) {
    std::size_t depth = 0;
    for (const auto& b : model.branches())
      if (b.name == h.name || h.name == "fused") depth = std::max(depth, b.depth);
    scores.push_back({h.name, h.accuracy, h.loss, depth});
  }
  const std::string best = select_best_branch(scores);
  const auto rows = prediction_rows(test, ev_test.head(best).probs);
  write_predictions(rows, dir / "predictions.csv");
  const ConfusionMatrix cm = confusion_from(rows, cfg.model.classes);
  const KappaResult kappa = cohens_kappa(cm);

  nlohmann::json report;
  report["parameters"] = model.parameter_count();
  report["selected_head"] = best;
  std::ostringstream txt;
  txt << "parameters: " << model.parameter_count() << "\n";
  txt << "head        val acc   val loss  test acc  test loss\n";
  for (const auto& h : ev_test.heads) {
    const auto& v = ev_val.head(h.name);
    txt << std::left << std::setw(10) << h.name << std::right << std::fixed << std::setprecision(4) << std::setw(9)
        << v.accuracy << std::setw(11) << v.loss << std::setw(10) << h.accuracy << std::setw(11) << h.loss << "\n";
    report["heads"][h.name] = {{"val_accuracy", v.accuracy}, {"val_loss", v.loss}, {"test_accuracy", h.accuracy},
                               {"test_loss", h.loss}};
  }
  txt << "selected head (best val accuracy): " << best << "\n";
  txt << "test accuracy: " << accuracy(cm) << "\n";
  txt << "kappa: " << kappa.kappa << " (" << to_string(kappa.band) << ")" << (kappa.degenerate ? " [degenerate]" : "")
      << "\n";
  report["test_accuracy"] = accuracy(cm);
  report["kappa"] = kappa.kappa;
  report["kappa_band"] = to_string(kappa.band);

  txt << "confusion (rows truth, cols predicted):\n";
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    std::vector<std::size_t> row;
    for (std::size_t p = 0; p < cm.classes(); ++p) {
      txt << std::setw(6) << cm.at(t, p);
      row.push_back(cm.at(t, p));
    }
    txt << "\n";
    report["confusion"].push_back(row);
  }

  if (ev_test.heads.size() > 1) {
    std::vector<Tensor> logits;
    for (const auto& h : ev_test.heads) logits.push_back(h.logits);
    const auto erows = prediction_rows(test, ensemble_preactivation(logits));
    const ConfusionMatrix ecm = confusion_from(erows, cfg.model.classes);
    const KappaResult ek = cohens_kappa(ecm);
    txt << "ensemble (mean logits): accuracy " << accuracy(ecm) << ", kappa " << ek.kappa << " (" << to_string(ek.band)
        << ")\n";
    report["ensemble"] = {{"test_accuracy", accuracy(ecm)}, {"kappa", ek.kappa}};
  }

  const std::size_t ih = cfg.model.input_h, iw = cfg.model.input_w;
  for (const auto& [branch, masks] : ev_test.masks) {
    double score = 0.0, baseline = 0.0;
    std::size_t degenerate = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto r = localization_score(mask_item(masks, i), test[i]->roi, ih, iw);
      score += r.score;
      degenerate += r.degenerate;
      baseline += uniform_localization_baseline(test[i]->roi, ih, iw);
    }
    score /= static_cast<double>(test.size());
    baseline /= static_cast<double>(test.size());
    txt << "localization " << branch << ": " << score << " vs uniform " << baseline << " (x" << score / baseline << ")"
        << (degenerate ? " degenerate masks: " + std::to_string(degenerate) : "") << "\n";
    report["localization"][branch] = {{"score", score}, {"uniform_baseline", baseline}, {"ratio", score / baseline}};
  }

  std::ofstream(dir / "report.txt") << txt.str();
  std::ofstream(dir / "report.json") << report.dump(2) << '\n';
  out << txt.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-branch CNN toolkit: synthetic data, training, weight search, evaluation"};
  app.require_subcommand(1);
  Options opt;

  auto* gendata = app.add_subcommand("gendata", "generate a synthetic knee dataset");
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  auto* grid = app.add_subcommand("gridsearch", "search the two leading branch loss weights");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  for (auto* sub : {gendata, train, grid, eval}) {
    sub->add_option("--config", opt.config, "JSON run config");
    sub->add_option("--out", opt.out, "output directory");
  }
  for (auto* sub : {gendata, train, grid}) sub->add_option("--seed", opt.seed, "seed override");
  for (auto* sub : {train, grid, eval}) sub->add_option("--data", opt.data, "dataset directory")->required();
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gendata) return cmd_gendata(opt, out);
    if (*train) return cmd_train(opt, out);
    if (*grid) return cmd_gridsearch(opt, out);
    if (*eval) return cmd_eval(opt, out);
  } catch (const ConfigError& e) {
    err << "config error:\n";
    for (const auto& p : e.problems()) err << "  " << p << "\n";
    return kExitUsage;
  } catch (const DatasetNotFound& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint does not fit the model:\n" << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace kneeatt
