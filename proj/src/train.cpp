#include "kneeatt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "kneeatt/ops.hpp"

namespace kneeatt {

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (batch_size == 0) out.push_back("train: batch_size must be at least 1");
  if (!(lr0 > 0.0)) out.push_back("train: lr0 must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("train: beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("train: beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) out.push_back("train: eps must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) out.push_back("train: plateau_factor must lie in (0, 1)");
  if (plateau_patience == 0) out.push_back("train: plateau_patience must be at least 1");
  if (early_stop_patience == 0) out.push_back("train: early_stop_patience must be at least 1");
  if (max_epochs == 0) out.push_back("train: max_epochs must be at least 1");
  if (min_improvement < 0.0) out.push_back("train: min_improvement must not be negative");
  if (stop_at_train_accuracy < 0.0 || stop_at_train_accuracy > 1.0) {
    out.push_back("train: stop_at_train_accuracy must lie in [0, 1]");
  }
  for (double w : loss_weights)
    if (!(w >= 0.0 && w <= 1.0)) out.push_back("train: loss weight " + std::to_string(w) + " outside [0, 1]");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::ostringstream os;
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "\n" : "") << p[i];
  throw std::invalid_argument(os.str());
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("adam_step: gradient " + shape_str(grad.shape()) + " vs parameter " + shape_str(param.shape()));
  }
  if (state.m.empty()) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  if (state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw ShapeError("adam_step: state " + shape_str(state.m.shape()) + " vs parameter " + shape_str(param.shape()));
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  double* p = param.data();
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

Adam::Adam(const ParameterStore& params, double beta1, double beta2, double eps)
    : states_(params.size()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& params, double lr) {
  if (params.size() != states_.size()) throw std::logic_error("Adam: parameter store changed size");
  for (std::size_t i = 0; i < params.size(); ++i) adam_step(params[i].value, params[i].grad, states_[i], lr, beta1_, beta2_, eps_);
}

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double min_improvement)
    : lr_(lr), factor_(factor), patience_(patience), min_improvement_(min_improvement) {}

double PlateauScheduler::update(double val_loss) {
  if (!has_best_ || val_loss < best_ - min_improvement_) {
    best_ = val_loss;
    has_best_ = true;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return lr_;
}

double lr_on_plateau(std::span<const double> history, double lr, double factor, std::size_t patience,
                     double min_improvement) {
  PlateauScheduler s(lr, factor, patience, min_improvement);
  for (double v : history) s.update(v);
  return s.lr();
}

EarlyStopping::EarlyStopping(std::size_t patience, double min_improvement)
    : patience_(patience), min_improvement_(min_improvement) {}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  improved_ = epoch_ == 1 || val_loss < best_ - min_improvement_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= patience_;
}

EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience, double min_improvement) {
  EarlyStopping es(patience, min_improvement);
  EarlyStopDecision d;
  for (double v : history) {
    ++d.stop_epoch;
    if (es.update(v)) {
      d.stop = true;
      break;
    }
  }
  d.best_epoch = es.best_epoch();
  return d;
}

std::vector<std::string> head_names(const Model& model) {
  if (model.spec().fusion == Fusion::EarlyFusion) return {"fused"};
  std::vector<std::string> out;
  for (const auto& b : model.branches()) out.push_back(b.name);
  return out;
}

double EpochRecord::train_accuracy() const {
  double best = 0.0;
  for (const auto& [name, acc] : train_head_accuracy) best = std::max(best, acc);
  return best;
}

std::vector<double> RunMetrics::lr_trace() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.lr);
  return out;
}

std::vector<double> RunMetrics::val_loss_trace() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.val_loss);
  return out;
}

std::vector<double> RunMetrics::train_loss_trace() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.train_loss);
  return out;
}

void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << std::setprecision(10);
  f << "epoch,lr,train_loss,val_loss";
  for (const auto& h : metrics.heads) f << ",train_loss_" << h << ",train_acc_" << h << ",val_loss_" << h << ",val_acc_" << h;
  f << ",seconds\n";
  for (const auto& e : metrics.epochs) {
    f << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_loss;
    for (const auto& h : metrics.heads) {
      f << ',' << e.train_head_loss.at(h) << ',' << e.train_head_accuracy.at(h) << ',' << e.val_head_loss.at(h) << ','
        << e.val_head_accuracy.at(h);
    }
    f << ',' << e.seconds << '\n';
  }
}

namespace {

struct HeadVars {
  std::string name;
  const BranchHeadOutput* head;
};

std::vector<HeadVars> heads_of(const ModelOutput& out) {
  std::vector<HeadVars> h;
  if (out.fused) {
    h.push_back({"fused", &*out.fused});
  } else {
    for (const auto& b : out.branches) h.push_back({b.name, &*b.head});
  }
  return h;
}

// Summed (not averaged) cross-entropy and correct count of a probability batch.
std::pair<double, std::size_t> score_batch(const Tensor& probs, std::span<const int> labels) {
  const std::size_t classes = probs.dim(1);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double* row = probs.data() + b * classes;
    loss -= std::log(std::max(row[labels[b]], kLogClamp));
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    correct += pred == static_cast<std::size_t>(labels[b]);
  }
  return {loss, correct};
}

std::vector<double> resolve_weights(const Model& model, const TrainConfig& config) {
  if (config.loss_weights.empty()) return model.spec().loss_weights;
  if (model.spec().fusion == Fusion::MultiLoss && config.loss_weights.size() != model.branches().size()) {
    throw std::invalid_argument("train: " + std::to_string(config.loss_weights.size()) + " loss weights for " +
                                std::to_string(model.branches().size()) + " branches");
  }
  return config.loss_weights;
}

std::vector<int> labels_of(const std::vector<const Sample*>& batch) {
  std::vector<int> out;
  for (const Sample* s : batch) out.push_back(s->label);
  return out;
}

}  // namespace

const HeadEvaluation& Evaluation::head(const std::string& name) const {
  for (const auto& h : heads)
    if (h.name == name) return h;
  throw std::out_of_range("no head named " + name);
}

Evaluation evaluate(const Model& model, const std::vector<const Sample*>& samples, std::size_t batch_size,
                    const std::vector<double>* weights, bool keep_masks) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be at least 1");
  const std::size_t n = samples.size(), classes = model.spec().classes;
  Evaluation ev;
  for (const auto& name : head_names(model)) ev.heads.push_back({name, 0.0, 0.0, Tensor({n, classes}), Tensor({n, classes})});
  std::vector<std::size_t> correct(ev.heads.size(), 0);

  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::vector<const Sample*> batch(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                           samples.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    const auto labels = labels_of(batch);
    Graph g;
    const ModelOutput out = model.forward(g, stack_images(batch));
    const Var objective = model.loss(out, one_hot(labels, classes), weights);
    ev.objective += objective.value()[0] * static_cast<double>(batch.size());
    const auto hv = heads_of(out);
    for (std::size_t h = 0; h < hv.size(); ++h) {
      const Tensor& probs = hv[h].head->probs.value();
      const Tensor& logits = hv[h].head->logits.value();
      const auto [loss, ok] = score_batch(probs, labels);
      ev.heads[h].loss += loss;
      correct[h] += ok;
      std::copy_n(probs.data(), probs.size(), ev.heads[h].probs.data() + start * classes);
      std::copy_n(logits.data(), logits.size(), ev.heads[h].logits.data() + start * classes);
    }
    if (keep_masks) {
      for (const auto& b : out.branches) {
        const Tensor& m = b.attention.mask.value();
        auto it = ev.masks.find(b.name);
        if (it == ev.masks.end()) it = ev.masks.emplace(b.name, Tensor({n, m.dim(1), m.dim(2), 1})).first;
        std::copy_n(m.data(), m.size(), it->second.data() + start * m.dim(1) * m.dim(2));
      }
    }
  }
  ev.objective /= static_cast<double>(n);
  for (std::size_t h = 0; h < ev.heads.size(); ++h) {
    ev.heads[h].loss /= static_cast<double>(n);
    ev.heads[h].accuracy = static_cast<double>(correct[h]) / static_cast<double>(n);
  }
  return ev;
}

RunMetrics fit(Model& model, const std::vector<Sample>& samples, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  const std::vector<Sample> pool = config.augment ? hflip_augment(samples) : samples;
  std::vector<const Sample*> train = select_split(pool, Split::Train);
  const std::vector<const Sample*> val = select_split(pool, Split::Val);
  if (train.empty()) throw std::invalid_argument("fit: the train split is empty");
  if (val.empty()) throw std::invalid_argument("fit: the val split is empty");
  const Shape expected{model.spec().input_h, model.spec().input_w, model.spec().input_c};
  if (train[0]->image.shape() != expected) {
    throw ShapeError("fit: images are " + shape_str(train[0]->image.shape()) + " but the model expects " +
                     shape_str(expected));
  }

  const std::vector<double> weights = resolve_weights(model, config);
  const std::size_t classes = model.spec().classes;
  ParameterStore& params = model.params();
  Adam adam(params, config.beta1, config.beta2, config.eps);
  PlateauScheduler plateau(config.lr0, config.plateau_factor, config.plateau_patience, config.min_improvement);
  EarlyStopping stopper(config.early_stop_patience, config.min_improvement);
  auto rng = derived_rng(config.seed, 0x7a11);

  std::vector<const Sample*> probes(val.begin(), val.begin() + static_cast<std::ptrdiff_t>(std::min(config.probe_samples, val.size())));
  if (options.output_dir) std::filesystem::create_directories(*options.output_dir);

  RunMetrics metrics;
  metrics.heads = head_names(model);
  std::vector<Tensor> best_values = params.snapshot();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = plateau.lr();
    std::shuffle(train.begin(), train.end(), rng);

    std::vector<double> head_loss(metrics.heads.size(), 0.0);
    std::vector<std::size_t> head_correct(metrics.heads.size(), 0);
    double objective = 0.0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::vector<const Sample*> batch(
          train.begin() + static_cast<std::ptrdiff_t>(start),
          train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), start + config.batch_size)));
      const auto labels = labels_of(batch);
      Graph g;
      const ModelOutput out = model.forward(g, stack_images(batch));
      const Var loss = model.loss(out, one_hot(labels, classes), &weights);
      params.zero_grad();
      g.backward(loss);
      adam.step(params, plateau.lr());

      objective += loss.value()[0] * static_cast<double>(batch.size());
      const auto hv = heads_of(out);
      for (std::size_t h = 0; h < hv.size(); ++h) {
        const auto [l, ok] = score_batch(hv[h].head->probs.value(), labels);
        head_loss[h] += l;
        head_correct[h] += ok;
      }
    }
    const double n_train = static_cast<double>(train.size());
    rec.train_loss = objective / n_train;
    for (std::size_t h = 0; h < metrics.heads.size(); ++h) {
      rec.train_head_loss[metrics.heads[h]] = head_loss[h] / n_train;
      rec.train_head_accuracy[metrics.heads[h]] = static_cast<double>(head_correct[h]) / n_train;
    }

    const Evaluation ev = evaluate(model, val, config.batch_size, &weights);
    rec.val_loss = ev.objective;
    for (const auto& h : ev.heads) {
      rec.val_head_loss[h.name] = h.loss;
      rec.val_head_accuracy[h.name] = h.accuracy;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.epochs.push_back(rec);
    metrics.stop_epoch = epoch;

    const bool stop = stopper.update(rec.val_loss);
    if (stopper.improved()) {
      best_values = params.snapshot();
      if (options.output_dir) save_checkpoint(params, *options.output_dir / "best.ckpt");
    }
    plateau.update(rec.val_loss);

    if (options.output_dir && !probes.empty()) {
      const Evaluation pe = evaluate(model, probes, config.batch_size, &weights, true);
      const auto dir = *options.output_dir / "masks";
      for (const auto& [branch, masks] : pe.masks)
        for (std::size_t i = 0; i < probes.size(); ++i)
          export_mask(masks, i, dir, mask_file_stem(branch, epoch, probes[i]->id), expected[0], expected[1]);
    }
    if (options.on_epoch) options.on_epoch(rec);

    if (config.early_stopping && stop) {
      metrics.early_stopped = true;
      break;
    }
    if (config.stop_at_train_accuracy > 0.0 && rec.train_accuracy() >= config.stop_at_train_accuracy) break;
  }

  params.restore(best_values);
  metrics.best_epoch = stopper.best_epoch();
  metrics.best_val_loss = stopper.best_loss();
  if (options.output_dir) write_metrics_csv(metrics, *options.output_dir / "metrics.csv");
  return metrics;
}

std::vector<double> default_grid_axis() {
  std::vector<double> out;
  for (int i = 5; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

GridResult grid_search_weights(const ModelSpec& spec, const std::vector<Sample>& samples, const TrainConfig& config,
                               std::span<const double> w0_values, std::span<const double> w1_values) {
  if (w0_values.empty() || w1_values.empty()) throw std::invalid_argument("grid search: empty grid");
  if (spec.fusion != Fusion::MultiLoss || spec.branches.size() < 2) {
    throw std::invalid_argument("grid search: needs a multi-loss model with at least two branches");
  }
  spec.validate();
  config.validate();

  GridResult result;
  for (double w0 : w0_values)
    for (double w1 : w1_values) result.cells.push_back({w0, w1, 0.0, 0.0, 0});

  const auto ncells = static_cast<std::ptrdiff_t>(result.cells.size());
  std::vector<std::string> errors(result.cells.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < ncells; ++i) {
    GridCell& cell = result.cells[static_cast<std::size_t>(i)];
    try {
      Model model(spec);
      TrainConfig cfg = config;
      cfg.loss_weights = spec.loss_weights;
      cfg.loss_weights[0] = cell.w0;
      cfg.loss_weights[1] = cell.w1;
      const RunMetrics m = fit(model, samples, cfg);
      const EpochRecord& best = m.epochs.at(m.best_epoch - 1);
      cell.val_loss = 0.0;
      for (const auto& [name, loss] : best.val_head_loss) cell.val_loss += loss;
      for (const auto& [name, acc] : best.val_head_accuracy) cell.val_accuracy = std::max(cell.val_accuracy, acc);
      cell.epochs = m.stop_epoch;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("grid search cell failed: " + e);

  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    const GridCell& c = result.cells[i];
    const GridCell& b = result.cells[result.best];
    const bool better = c.val_loss < b.val_loss ||
                        (c.val_loss == b.val_loss && std::pair(c.w0 + c.w1, c.w0) > std::pair(b.w0 + b.w1, b.w0));
    if (better) result.best = i;
  }
  return result;
}

void write_grid_table(const GridResult& result, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << std::setprecision(10) << "w0,w1,val_loss,val_acc,epochs,selected\n";
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const GridCell& c = result.cells[i];
    f << c.w0 << ',' << c.w1 << ',' << c.val_loss << ',' << c.val_accuracy << ',' << c.epochs << ','
      << (i == result.best ? 1 : 0) << '\n';
  }
}

}  // namespace kneeatt
