#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kneeatt/tensor.hpp"

namespace kneeatt {

/// Rectangle in pixel coordinates.
struct Roi {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  std::size_t area() const { return height * width; }
  bool operator==(const Roi&) const = default;
};

enum class Side { Left, Right };
enum class Split { Unassigned, Train, Val, Test };

std::string to_string(Side s);
std::string to_string(Split s);
Side parse_side(const std::string& s);
Split parse_split(const std::string& s);

struct Sample {
  std::string id;
  Tensor image;  ///< (H, W, 1), values in [0, 1]
  int label = 0; ///< KL grade 0..4
  Roi roi;       ///< region that carries the grade signal
  Side side = Side::Left;
  Split split = Split::Unassigned;
};

inline constexpr std::size_t kGrades = 5;

struct SplitFractions {
  double train = 0.63;
  double val = 0.07;
  double test = 0.30;
};

struct DatasetManifest {
  std::uint64_t seed = 7;
  std::vector<std::size_t> counts_per_grade{40, 40, 40, 40, 40};
  std::size_t image_h = 64;  ///< final size after preprocessing
  std::size_t image_w = 48;
  std::size_t raw_h = 96;    ///< rendered size of one knee before resizing
  std::size_t raw_w = 72;
  SplitFractions fractions;
  bool flip_right = true;    ///< mirror right knees into the left-knee orientation

  std::size_t total() const;
  std::vector<std::string> problems() const;
  void validate() const;
};

/// Renders, pairs into bilateral radiographs, splits, resizes and equalizes
/// the whole dataset, then assigns stratified splits. Per-pair RNG streams
/// are derived from the manifest seed, so the result is independent of the
/// thread count.
std::vector<Sample> generate_synthetic(const DatasetManifest& manifest);

/// One knee in canonical (left) orientation at (h, w) with the given grade.
struct RenderedKnee {
  Tensor image;
  Roi roi;
};
RenderedKnee render_knee(int grade, std::size_t h, std::size_t w, std::mt19937_64& rng);

/// Nominal joint-space height in pixels for a grade at raw height h.
double nominal_gap_height(int grade, std::size_t h);

/// Joint-space height measured on an image: longest run of dark rows in the
/// roi's centre column band. Independent of the renderer's parameters.
double measure_gap_height(const Tensor& image, const Roi& roi);

// ---- preprocessing ----

/// Halves of an (H, W, 1) image: left = [0, W/2), right = [ceil(W/2), W),
/// right mirrored when flip_right. Odd widths drop the centre column.
std::pair<Tensor, Tensor> split_bilateral(const Tensor& image, bool flip_right = true);

/// Bilinear resample with half-pixel centres.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
/// Resize to the dataset's fixed target size (which encodes its mean aspect ratio).
inline Tensor resize_keep_aspect(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  return resize_bilinear(image, out_h, out_w);
}
Roi scale_roi(const Roi& roi, std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w);

/// 256-level equalization h(v) = (cdf(v) - cdf_min) / (N - cdf_min).
/// Constant images come back unchanged.
Tensor hist_equalize(const Tensor& image);

/// Variance of the normalized histogram over `bins` equal-width bins of [0, 1].
double histogram_variance(const Tensor& image, std::size_t bins = 16);

Tensor hflip(const Tensor& image);
Roi hflip_roi(const Roi& roi, std::size_t width);

/// Appends a mirrored copy of every training sample (ids suffixed "f").
std::vector<Sample> hflip_augment(const std::vector<Sample>& samples);

/// Per-grade shuffled assignment; test and val counts are round(n * fraction).
void stratified_split(std::vector<Sample>& samples, const SplitFractions& fractions, std::uint64_t seed);

std::vector<const Sample*> select_split(const std::vector<Sample>& samples, Split split);

/// Stacks (H, W, 1) images into a (B, H, W, 1) batch.
Tensor stack_images(const std::vector<const Sample*>& samples);

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace kneeatt
