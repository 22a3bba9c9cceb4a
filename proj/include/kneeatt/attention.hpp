#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "kneeatt/graph.hpp"
#include "kneeatt/params.hpp"

namespace kneeatt {

struct AttentionConfig {
  /// Widths of the stacked 1x1 conv + relu layers ahead of the mask layer.
  std::vector<std::size_t> hidden_widths{32, 16};
  /// Name of the backbone layer that feeds the module.
  std::string attach_point;

  void validate() const;
};

/// Values produced by one attention module on a (B, H, W, N) volume.
struct AttentionOutput {
  Var mask;        ///< (B, H, W, 1), sigmoid output
  Var masked;      ///< (B, H, W, N), volume * mask
  Var mask_mean;   ///< (B, 1)
  Var features;    ///< (B, N), GAP(masked) / mask_mean
};

inline constexpr double kMaskMeanFloor = 1e-8;

/// Trainable spatial attention over a convolutional volume:
///   1x1 convs (relu) -> unshared 1x1 layer -> sigmoid mask A
///   D~ = D * A,  F = GAP(D~) / mean(A)
/// The mask layer starts at zero, so the initial mask is 0.5 everywhere and
/// F equals plain GAP of the volume.
class AttentionModule {
 public:
  /// volume_shape is (H, W, N).
  AttentionModule(const std::string& prefix, const Shape& volume_shape, const AttentionConfig& config,
                  ParameterStore& params, std::mt19937_64& rng);

  AttentionOutput forward(Var volume) const;

  const Shape& volume_shape() const { return volume_shape_; }
  std::size_t feature_width() const { return volume_shape_[2]; }
  std::size_t parameter_count() const;

  /// Closed form: sum over hidden layers (in*out + out) + H*W*last + H*W.
  static std::size_t expected_parameter_count(const Shape& volume_shape, const std::vector<std::size_t>& widths);

 private:
  Shape volume_shape_;
  std::vector<Parameter*> conv_weights_;
  std::vector<Parameter*> conv_biases_;
  Parameter* mask_weights_ = nullptr;
  Parameter* mask_bias_ = nullptr;
};

/// Dense N -> C followed by softmax.
struct BranchHeadOutput {
  Var logits;
  Var probs;
};

BranchHeadOutput branch_head(Var features, Parameter& weights, Parameter& bias);

/// File naming for exported masks: mask_<branch>_e<epoch>_s<sample>.
std::string mask_file_stem(const std::string& branch, std::size_t epoch, const std::string& sample_id);

struct MaskExportPaths {
  std::filesystem::path pgm;
  std::filesystem::path csv;
  std::filesystem::path upsampled_pgm;
};

/// Writes item `batch_index` of a (B, H, W, 1) mask as an 8-bit PGM
/// (value * 255), a CSV of the raw values, and a nearest-neighbour
/// upsampled PGM at (out_h, out_w).
MaskExportPaths export_mask(const Tensor& mask, std::size_t batch_index, const std::filesystem::path& dir,
                            const std::string& stem, std::size_t out_h, std::size_t out_w);

/// Nearest-neighbour resize of an (H, W) grid: src = floor(dst * H / out_h).
Tensor upsample_nearest(const Tensor& grid, std::size_t out_h, std::size_t out_w);

/// (H, W) grid of item b from a (B, H, W, 1) tensor.
Tensor mask_item(const Tensor& mask, std::size_t b);

void write_pgm(const Tensor& grid, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);
void write_grid_csv(const Tensor& grid, const std::filesystem::path& path);
Tensor read_grid_csv(const std::filesystem::path& path);

}  // namespace kneeatt
