#include "kneeatt/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kneeatt/ops.hpp"

namespace kneeatt {

void AttentionConfig::validate() const {
  if (hidden_widths.empty()) throw std::invalid_argument("attention: at least one 1x1 conv width is required");
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw std::invalid_argument("attention: 1x1 conv widths must be positive");
  }
}

AttentionModule::AttentionModule(const std::string& prefix, const Shape& volume_shape, const AttentionConfig& config,
                                 ParameterStore& params, std::mt19937_64& rng)
    : volume_shape_(volume_shape) {
  config.validate();
  if (volume_shape.size() != 3) throw ShapeError("attention: volume shape must be (H, W, N)");
  if (volume_shape[2] == 0) throw ShapeError("attention: input volume has zero channels");
  std::size_t in = volume_shape[2];
  for (std::size_t i = 0; i < config.hidden_widths.size(); ++i) {
    const std::size_t out = config.hidden_widths[i];
    const std::string base = prefix + "/conv" + std::to_string(i);
    conv_weights_.push_back(&params.add(base + "/w", he_normal({1, 1, in, out}, in, rng)));
    conv_biases_.push_back(&params.add(base + "/b", Tensor::zeros({out})));
    in = out;
  }
  const std::size_t h = volume_shape[0], w = volume_shape[1];
  mask_weights_ = &params.add(prefix + "/mask/w", Tensor::zeros({h, w, in}));
  mask_bias_ = &params.add(prefix + "/mask/b", Tensor::zeros({h, w}));
}

AttentionOutput AttentionModule::forward(Var volume) const {
  const Shape& s = volume.shape();
  if (s.size() != 4 || s[1] != volume_shape_[0] || s[2] != volume_shape_[1] || s[3] != volume_shape_[2]) {
    throw ShapeError("attention: module built for (B," + std::to_string(volume_shape_[0]) + "," +
                     std::to_string(volume_shape_[1]) + "," + std::to_string(volume_shape_[2]) + "), got " +
                     shape_str(s));
  }
  Graph& g = volume.graph();
  Var h = volume;
  for (std::size_t i = 0; i < conv_weights_.size(); ++i) {
    h = relu(conv2d(h, g.param(*conv_weights_[i]), g.param(*conv_biases_[i]), 1, Padding::Same));
  }
  AttentionOutput out;
  out.mask = sigmoid(locally_connected_1x1(h, g.param(*mask_weights_), g.param(*mask_bias_)));
  out.masked = mask_multiply(volume, out.mask);
  out.mask_mean = gap(out.mask);
  out.features = divide_rows(gap(out.masked), out.mask_mean, kMaskMeanFloor);
  return out;
}

std::size_t AttentionModule::parameter_count() const {
  std::size_t n = mask_weights_->value.size() + mask_bias_->value.size();
  for (std::size_t i = 0; i < conv_weights_.size(); ++i) n += conv_weights_[i]->value.size() + conv_biases_[i]->value.size();
  return n;
}

std::size_t AttentionModule::expected_parameter_count(const Shape& volume_shape,
                                                      const std::vector<std::size_t>& widths) {
  std::size_t n = 0, in = volume_shape[2];
  for (std::size_t w : widths) {
    n += in * w + w;
    in = w;
  }
  const std::size_t hw = volume_shape[0] * volume_shape[1];
  return n + hw * in + hw;
}

BranchHeadOutput branch_head(Var features, Parameter& weights, Parameter& bias) {
  Graph& g = features.graph();
  BranchHeadOutput out;
  out.logits = dense(features, g.param(weights), g.param(bias));
  out.probs = softmax(out.logits);
  return out;
}

std::string mask_file_stem(const std::string& branch, std::size_t epoch, const std::string& sample_id) {
  return "mask_" + branch + "_e" + std::to_string(epoch) + "_s" + sample_id;
}

Tensor mask_item(const Tensor& mask, std::size_t b) {
  require_rank(mask, 4, "mask");
  if (mask.dim(3) != 1) throw ShapeError("mask must have one channel, got " + shape_str(mask.shape()));
  if (b >= mask.dim(0)) {
    throw std::out_of_range("mask batch index " + std::to_string(b) + " outside batch of " + std::to_string(mask.dim(0)));
  }
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  std::vector<double> data(mask.data() + b * h * w, mask.data() + (b + 1) * h * w);
  return Tensor({h, w}, std::move(data));
}

Tensor upsample_nearest(const Tensor& grid, std::size_t out_h, std::size_t out_w) {
  require_rank(grid, 2, "upsample_nearest");
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * h / out_h;
    for (std::size_t x = 0; x < out_w; ++x) out.at(y, x) = grid.at(sy, x * w / out_w);
  }
  return out;
}

void write_pgm(const Tensor& grid, const std::filesystem::path& path) {
  require_rank(grid, 2, "write_pgm");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << grid.dim(1) << ' ' << grid.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = std::clamp(grid[i], 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!os) throw std::runtime_error("I/O error writing " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0) throw std::runtime_error(path.string() + ": not an 8-bit PGM");
  Tensor out({h, w});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error(path.string() + ": truncated PGM");
    out[i] = static_cast<double>(c) / 255.0;
  }
  return out;
}

void write_grid_csv(const Tensor& grid, const std::filesystem::path& path) {
  require_rank(grid, 2, "write_grid_csv");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (std::size_t y = 0; y < grid.dim(0); ++y) {
    for (std::size_t x = 0; x < grid.dim(1); ++x) {
      // Shortest round-trip representation.
      auto res = std::to_chars(buf, buf + sizeof(buf), grid.at(y, x));
      if (x) os << ',';
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("I/O error writing " + path.string());
}

Tensor read_grid_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t n = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      double v;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw std::runtime_error(path.string() + ": bad number on row " + std::to_string(rows));
      data.push_back(v);
      ++n;
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw std::runtime_error(path.string() + ": ragged row " + std::to_string(rows));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path.string() + ": empty CSV");
  return Tensor({rows, cols}, std::move(data));
}

MaskExportPaths export_mask(const Tensor& mask, std::size_t batch_index, const std::filesystem::path& dir,
                            const std::string& stem, std::size_t out_h, std::size_t out_w) {
  const Tensor grid = mask_item(mask, batch_index);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  MaskExportPaths paths{dir / (stem + ".pgm"), dir / (stem + ".csv"), dir / (stem + "_up.pgm")};
  write_pgm(grid, paths.pgm);
  write_grid_csv(grid, paths.csv);
  write_pgm(upsample_nearest(grid, out_h, out_w), paths.upsampled_pgm);
  return paths;
}

}  // namespace kneeatt
