#include "kneeatt/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kneeatt/attention.hpp"
#include "kneeatt/ops.hpp"

namespace kneeatt {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(t, p, rows[t][p]);
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t count) {
  if (truth >= classes_ || predicted >= classes_) {
    throw std::out_of_range("confusion matrix: class index outside 0.." + std::to_string(classes_ - 1));
  }
  counts_[truth * classes_ + predicted] += count;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, i);
  return s;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  if (n == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

std::string to_string(AgreementBand band) {
  switch (band) {
    case AgreementBand::Slight: return "slight";
    case AgreementBand::Fair: return "fair";
    case AgreementBand::Moderate: return "moderate";
    case AgreementBand::Substantial: return "substantial";
    case AgreementBand::AlmostPerfect: return "almost perfect";
  }
  return "?";
}

AgreementBand agreement_band(double kappa) {
  if (kappa < 0.20) return AgreementBand::Slight;
  if (kappa <= 0.40) return AgreementBand::Fair;
  if (kappa <= 0.60) return AgreementBand::Moderate;
  if (kappa <= 0.80) return AgreementBand::Substantial;
  return AgreementBand::AlmostPerfect;
}

KappaResult cohens_kappa(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  if (n == 0) throw std::invalid_argument("kappa of an empty confusion matrix");
  const double nn = static_cast<double>(n);
  const double po = static_cast<double>(cm.trace()) / nn;
  double pe = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  pe /= nn * nn;
  KappaResult r;
  if (pe >= 1.0) {
    std::cerr << "warning: chance agreement is 1 (single class in truth and predictions); kappa set to 0\n";
    r.degenerate = true;
    r.kappa = 0.0;
  } else {
    r.kappa = (po - pe) / (1.0 - pe);
  }
  r.band = agreement_band(r.kappa);
  return r;
}

std::string select_best_branch(std::span<const BranchScore> scores) {
  if (scores.empty()) throw std::invalid_argument("select_best_branch: no branches");
  const BranchScore* best = &scores[0];
  for (const BranchScore& s : scores.subspan(1)) {
    if (s.val_accuracy != best->val_accuracy) {
      if (s.val_accuracy > best->val_accuracy) best = &s;
    } else if (s.val_loss != best->val_loss) {
      if (s.val_loss < best->val_loss) best = &s;
    } else if (s.depth < best->depth) {
      best = &s;
    }
  }
  return best->name;
}

Tensor ensemble_preactivation(std::span<const Tensor> branch_logits) {
  if (branch_logits.empty()) throw std::invalid_argument("ensemble: no branches");
  const Shape& shape = branch_logits[0].shape();
  if (shape.size() != 2) throw ShapeError("ensemble: logits must be (B, C), got " + shape_str(shape));
  Tensor mean(shape);
  for (const Tensor& t : branch_logits) {
    if (t.shape() != shape) throw ShapeError("ensemble: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    for (std::size_t i = 0; i < t.size(); ++i) mean[i] += t[i];
  }
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] /= static_cast<double>(branch_logits.size());
  return softmax_rows(mean);
}

LocalizationResult localization_score(const Tensor& mask, const Roi& roi, std::size_t input_h, std::size_t input_w) {
  if (mask.rank() == 3 && mask.dim(2) != 1) throw ShapeError("localization: mask must have one channel");
  if (mask.rank() != 2 && mask.rank() != 3) throw ShapeError("localization: mask must be (h, w) or (h, w, 1)");
  if (roi.height == 0 || roi.width == 0 || roi.top + roi.height > input_h || roi.left + roi.width > input_w) {
    throw std::invalid_argument("localization: roi does not lie inside the input");
  }
  const Tensor grid = mask.reshaped({mask.dim(0), mask.dim(1)});
  const Tensor up = upsample_nearest(grid, input_h, input_w);
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < input_h; ++y)
    for (std::size_t x = 0; x < input_w; ++x) {
      const double v = up[y * input_w + x];
      total += v;
      if (y >= roi.top && y < roi.top + roi.height && x >= roi.left && x < roi.left + roi.width) inside += v;
    }
  if (total <= 0.0) return {0.0, true};
  return {inside / total, false};
}

double uniform_localization_baseline(const Roi& roi, std::size_t input_h, std::size_t input_w) {
  return static_cast<double>(roi.area()) / static_cast<double>(input_h * input_w);
}

void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const std::size_t classes = rows.empty() ? 0 : rows[0].probs.size();
  f << "id,truth,predicted";
  for (std::size_t c = 0; c < classes; ++c) f << ",p" << c;
  f << '\n';
  char buf[32];
  for (const auto& r : rows) {
    f << r.id << ',' << r.truth << ',' << r.predicted;
    for (double p : r.probs) {
      auto res = std::to_chars(buf, buf + sizeof(buf), p);
      f << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    f << '\n';
  }
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<PredictionRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 3) throw std::runtime_error("malformed prediction row: " + line);
    PredictionRow r;
    r.id = cells[0];
    r.truth = std::stoi(cells[1]);
    r.predicted = std::stoi(cells[2]);
    for (std::size_t i = 3; i < cells.size(); ++i) {
      double v = 0.0;
      std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
      r.probs.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

ConfusionMatrix confusion_from(const std::vector<PredictionRow>& rows, std::size_t classes) {
  ConfusionMatrix cm(classes);
  for (const auto& r : rows) cm.add(static_cast<std::size_t>(r.truth), static_cast<std::size_t>(r.predicted));
  return cm;
}

std::vector<PredictionRow> prediction_rows(const std::vector<const Sample*>& samples, const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) != samples.size()) {
    throw ShapeError("prediction_rows: probabilities " + shape_str(probs.shape()) + " for " +
                     std::to_string(samples.size()) + " samples");
  }
  const std::size_t classes = probs.dim(1);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double* row = probs.data() + i * classes;
    PredictionRow r{samples[i]->id, samples[i]->label,
                    static_cast<int>(std::max_element(row, row + classes) - row), std::vector<double>(row, row + classes)};
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace kneeatt
