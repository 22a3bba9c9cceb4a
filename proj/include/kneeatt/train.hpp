#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kneeatt/data.hpp"
#include "kneeatt/model_zoo.hpp"

namespace kneeatt {

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr0 = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 2;
  std::size_t early_stop_patience = 3;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 1;
  std::vector<double> loss_weights;  ///< per-branch override; empty keeps the model's
  double min_improvement = 1e-6;     ///< val-loss decrease that counts as improvement
  bool augment = true;               ///< mirror training images before fitting
  bool early_stopping = true;
  double stop_at_train_accuracy = 0.0;  ///< stop once an epoch reaches it; 0 disables
  std::size_t probe_samples = 4;        ///< val samples whose masks are exported each epoch

  std::vector<std::string> problems() const;
  void validate() const;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1, double beta2,
               double eps);

/// Adam over every parameter of a store.
class Adam {
 public:
  Adam(const ParameterStore& params, double beta1, double beta2, double eps);
  void step(ParameterStore& params, double lr);
  const AdamState& state(std::size_t i) const { return states_.at(i); }

 private:
  std::vector<AdamState> states_;
  double beta1_, beta2_, eps_;
};

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without improving on the best loss; the counter resets on
/// improvement and on every reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double min_improvement = 1e-6);
  double update(double val_loss);
  double lr() const { return lr_; }
  std::size_t bad_epochs() const { return bad_; }

 private:
  double lr_, factor_;
  std::size_t patience_;
  double min_improvement_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_ = 0;
};

/// Learning rate after replaying a whole validation-loss history.
double lr_on_plateau(std::span<const double> history, double lr, double factor, std::size_t patience,
                     double min_improvement = 1e-6);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience, double min_improvement = 1e-6);
  /// Feeds the next epoch's loss; true when training should stop.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }  ///< 1-based
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  double best_ = 0.0;
  std::size_t epoch_ = 0, best_epoch_ = 0, bad_ = 0;
  bool improved_ = false;
};

struct EarlyStopDecision {
  bool stop = false;
  std::size_t stop_epoch = 0;  ///< epoch at which training stops (1-based), or the history length
  std::size_t best_epoch = 0;  ///< 1-based argmin
};
EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience, double min_improvement = 1e-6);

/// Classification heads that produce predictions: the branch heads, or
/// "fused" under early fusion.
std::vector<std::string> head_names(const Model& model);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<std::string, double> train_head_loss;
  std::map<std::string, double> train_head_accuracy;
  std::map<std::string, double> val_head_loss;
  std::map<std::string, double> val_head_accuracy;
  double seconds = 0.0;

  double train_accuracy() const;  ///< best head
};

struct RunMetrics {
  std::vector<std::string> heads;
  std::vector<EpochRecord> epochs;
  std::size_t stop_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;

  std::vector<double> lr_trace() const;
  std::vector<double> val_loss_trace() const;
  std::vector<double> train_loss_trace() const;
};

void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);

struct FitOptions {
  std::optional<std::filesystem::path> output_dir;  ///< checkpoint, metrics and masks go here
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains on the Train split, monitors the Val split, restores the best
/// epoch's parameters before returning.
RunMetrics fit(Model& model, const std::vector<Sample>& samples, const TrainConfig& config,
               const FitOptions& options = {});

struct HeadEvaluation {
  std::string name;
  double loss = 0.0;
  double accuracy = 0.0;
  Tensor logits;  ///< (N, classes)
  Tensor probs;
};

struct Evaluation {
  double objective = 0.0;  ///< training objective averaged over samples
  std::vector<HeadEvaluation> heads;
  std::map<std::string, Tensor> masks;  ///< branch -> (N, h, w, 1), when requested
  const HeadEvaluation& head(const std::string& name) const;
};

Evaluation evaluate(const Model& model, const std::vector<const Sample*>& samples, std::size_t batch_size,
                    const std::vector<double>* weights = nullptr, bool keep_masks = false);

struct GridCell {
  double w0 = 0.0, w1 = 0.0;
  double val_loss = 0.0;      ///< unweighted sum of branch losses at the best epoch
  double val_accuracy = 0.0;  ///< best branch at the best epoch
  std::size_t epochs = 0;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  const GridCell& best_cell() const { return cells.at(best); }
};

/// {0.5, 0.6, ..., 1.0}
std::vector<double> default_grid_axis();

/// One short run per (w0, w1) pair for the first two branches, all from the
/// same initialization. Cells may run in parallel; the table is ordered by
/// (w0, w1) as given. Picks the lowest summed branch validation loss, so the
/// weights themselves do not scale the criterion; ties go to larger weights.
GridResult grid_search_weights(const ModelSpec& spec, const std::vector<Sample>& samples, const TrainConfig& config,
                               std::span<const double> w0_values, std::span<const double> w1_values);

void write_grid_table(const GridResult& result, const std::filesystem::path& path);

}  // namespace kneeatt
