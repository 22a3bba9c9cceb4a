// Serial reference kernels: direct transcriptions of the defining sums, kept
// simple on purpose so the parallel versions can be checked against them.

#include <limits>
#include <string>

#include "kneeatt/kernels.hpp"
#include "kneeatt/tensor.hpp"

namespace kneeatt {

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (kernel == 0) throw ShapeError("kernel size must be >= 1");
  if (stride == 0) throw ShapeError("stride must be >= 1");
  AxisGeometry g;
  if (padding == Padding::Same) {
    g.out = (in + stride - 1) / stride;
    const std::size_t needed = (g.out - 1) * stride + kernel;
    g.pad_before = needed > in ? (needed - in) / 2 : 0;
  } else {
    if (kernel > in) {
      throw ShapeError("window " + std::to_string(kernel) + " larger than input extent " + std::to_string(in));
    }
    g.out = (in - kernel) / stride + 1;
  }
  return g;
}

ConvGeometry ConvGeometry::make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t in_c,
                                std::size_t kernel, std::size_t stride, std::size_t out_c, Padding padding) {
  ConvGeometry g;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.kernel = kernel;
  g.stride = stride;
  g.out_c = out_c;
  const auto gh = axis_geometry(in_h, kernel, stride, padding);
  const auto gw = axis_geometry(in_w, kernel, stride, padding);
  g.out_h = gh.out;
  g.out_w = gw.out;
  g.pad_top = gh.pad_before;
  g.pad_left = gw.pad_before;
  return g;
}

PoolGeometry PoolGeometry::make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t channels,
                                std::size_t kernel, std::size_t stride, Padding padding) {
  PoolGeometry g;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.channels = channels;
  g.kernel = kernel;
  g.stride = stride;
  const auto gh = axis_geometry(in_h, kernel, stride, padding);
  const auto gw = axis_geometry(in_w, kernel, stride, padding);
  g.out_h = gh.out;
  g.out_w = gw.out;
  g.pad_top = gh.pad_before;
  g.pad_left = gw.pad_before;
  return g;
}

namespace kernels::ref {

namespace {
// Input coordinate for output position o and tap k; false when it lands in padding.
bool source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent,
                  std::size_t& out) {
  const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(extent)) return false;
  out = static_cast<std::size_t>(i);
  return true;
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          double acc = bias[co];
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            std::size_t iy;
            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              std::size_t ix;
              if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                acc += in[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] *
                       w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co];
              }
            }
          }
          out[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_in) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          const double go = grad_out[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            std::size_t iy;
            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              std::size_t ix;
              if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                grad_in[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] +=
                    go * w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co];
              }
            }
          }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          const double go = grad_out[((b * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
          grad_b[co] += go;
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            std::size_t iy;
            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              std::size_t ix;
              if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                grad_w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co] +=
                    go * in[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
              }
            }
          }
        }
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t c = 0; c < g.channels; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            std::size_t iy;
            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              std::size_t ix;
              if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
              const std::size_t idx = ((b * g.in_h + iy) * g.in_w + ix) * g.channels + c;
              if (in[idx] > best) {
                best = in[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t o = ((b * g.out_h + oy) * g.out_w + ox) * g.channels + c;
          out[o] = best;
          argmax[o] = best_idx;
        }
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> grad_out, std::span<const std::size_t> argmax,
                      std::span<double> grad_in) {
  for (std::size_t o = 0; o < g.out_size(); ++o) grad_in[argmax[o]] += grad_out[o];
}

void dense_forward(std::size_t batch, std::size_t in_f, std::size_t out_f, std::span<const double> in,
                   std::span<const double> w, std::span<const double> bias, std::span<double> out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t u = 0; u < out_f; ++u) {
      double acc = bias[u];
      for (std::size_t f = 0; f < in_f; ++f) acc += in[b * in_f + f] * w[f * out_f + u];
      out[b * out_f + u] = acc;
    }
}

void dense_backward(std::size_t batch, std::size_t in_f, std::size_t out_f, std::span<const double> in,
                    std::span<const double> w, std::span<const double> grad_out, std::span<double> grad_in,
                    std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t u = 0; u < out_f; ++u) {
      const double go = grad_out[b * out_f + u];
      grad_b[u] += go;
      for (std::size_t f = 0; f < in_f; ++f) {
        grad_in[b * in_f + f] += go * w[f * out_f + u];
        grad_w[f * out_f + u] += go * in[b * in_f + f];
      }
    }
}

void local1x1_forward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::span<const double> in,
                      std::span<const double> weights, std::span<const double> bias, std::span<double> out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < h * w; ++p) {
      double acc = bias[p];
      for (std::size_t k = 0; k < c; ++k) acc += in[(b * h * w + p) * c + k] * weights[p * c + k];
      out[b * h * w + p] = acc;
    }
}

void local1x1_backward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::span<const double> in,
                       std::span<const double> weights, std::span<const double> grad_out,
                       std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < h * w; ++p) {
      const double go = grad_out[b * h * w + p];
      grad_b[p] += go;
      for (std::size_t k = 0; k < c; ++k) {
        grad_in[(b * h * w + p) * c + k] += go * weights[p * c + k];
        grad_w[p * c + k] += go * in[(b * h * w + p) * c + k];
      }
    }
}

}  // namespace kernels::ref
}  // namespace kneeatt
