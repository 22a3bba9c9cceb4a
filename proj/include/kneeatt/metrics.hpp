#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kneeatt/data.hpp"
#include "kneeatt/tensor.hpp"

namespace kneeatt {

/// Counts with rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows);

  void add(std::size_t truth, std::size_t predicted, std::size_t count = 1);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }
  std::size_t classes() const { return classes_; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t predicted) const;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

double accuracy(const ConfusionMatrix& cm);

enum class AgreementBand { Slight, Fair, Moderate, Substantial, AlmostPerfect };
std::string to_string(AgreementBand band);

/// <0.20 slight, [0.20, 0.40] fair, (0.40, 0.60] moderate,
/// (0.60, 0.80] substantial, above 0.80 almost perfect.
AgreementBand agreement_band(double kappa);

struct KappaResult {
  double kappa = 0.0;
  AgreementBand band = AgreementBand::Slight;
  bool degenerate = false;  ///< chance agreement of 1; kappa reported as 0
};

KappaResult cohens_kappa(const ConfusionMatrix& cm);

struct BranchScore {
  std::string name;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  std::size_t depth = 0;  ///< smaller is shallower
};

/// Highest validation accuracy, then lower validation loss, then shallower.
std::string select_best_branch(std::span<const BranchScore> scores);

/// softmax(mean of (B, C) logits over branches).
Tensor ensemble_preactivation(std::span<const Tensor> branch_logits);

struct LocalizationResult {
  double score = 0.0;
  bool degenerate = false;  ///< mask carries no mass
};

/// Share of mask mass inside the roi after nearest-neighbour upsampling of
/// the (h, w) or (h, w, 1) mask to (input_h, input_w).
LocalizationResult localization_score(const Tensor& mask, const Roi& roi, std::size_t input_h, std::size_t input_w);

/// Score of a constant mask: roi area over image area.
double uniform_localization_baseline(const Roi& roi, std::size_t input_h, std::size_t input_w);

struct PredictionRow {
  std::string id;
  int truth = 0;
  int predicted = 0;
  std::vector<double> probs;
};

void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path);
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);
ConfusionMatrix confusion_from(const std::vector<PredictionRow>& rows, std::size_t classes);

/// Rows for a (N, C) probability matrix, predicted = argmax.
std::vector<PredictionRow> prediction_rows(const std::vector<const Sample*>& samples, const Tensor& probs);

}  // namespace kneeatt
