#include <algorithm>
#include <array>
#include <limits>
#include <vector>

#include "kneeatt/kernels.hpp"

namespace kneeatt::kernels {

namespace {

constexpr std::size_t kPixelBlock = 8;

inline bool source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent,
                         std::size_t& out) {
  const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(extent)) return false;
  out = static_cast<std::size_t>(i);
  return true;
}

inline void axpy(std::size_t n, double a, const double* __restrict x, double* __restrict y) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(std::size_t n, const double* __restrict x, const double* __restrict y) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const auto rows = static_cast<std::ptrdiff_t>(g.batch * g.out_h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t b = static_cast<std::size_t>(row) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(row) % g.out_h;
    double* out_row = out.data() + (b * g.out_h + oy) * g.out_w * g.out_c;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) std::copy_n(bias.data(), g.out_c, out_row + ox * g.out_c);

    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      std::size_t iy;
      if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
      const double* in_row = in.data() + (b * g.in_h + iy) * g.in_w * g.in_c;
      for (std::size_t ox0 = 0; ox0 < g.out_w; ox0 += kPixelBlock) {
        const std::size_t ox1 = std::min(ox0 + kPixelBlock, g.out_w);
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          std::array<const double*, kPixelBlock> src{};
          std::array<double*, kPixelBlock> dst{};
          std::size_t n = 0;
          for (std::size_t ox = ox0; ox < ox1; ++ox) {
            std::size_t ix;
            if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
            src[n] = in_row + ix * g.in_c;
            dst[n] = out_row + ox * g.out_c;
            ++n;
          }
          if (n == 0) continue;
          const double* w_tap = w.data() + (ky * g.kernel + kx) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double* w_row = w_tap + ci * g.out_c;
            for (std::size_t p = 0; p < n; ++p) axpy(g.out_c, src[p][ci], w_row, dst[p]);
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_in) {
  // Weights transposed to (k, k, Cout, Cin) so the inner loop runs over Cin.
  std::vector<double> wt(w.size());
  for (std::size_t tap = 0; tap < g.kernel * g.kernel; ++tap)
    for (std::size_t ci = 0; ci < g.in_c; ++ci)
      for (std::size_t co = 0; co < g.out_c; ++co)
        wt[(tap * g.out_c + co) * g.in_c + ci] = w[(tap * g.in_c + ci) * g.out_c + co];

  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < batch; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const double* go_row = grad_out.data() + (b * g.out_h + oy) * g.out_w * g.out_c;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        std::size_t iy;
        if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
        double* gi_row = grad_in.data() + (b * g.in_h + iy) * g.in_w * g.in_c;
        for (std::size_t ox0 = 0; ox0 < g.out_w; ox0 += kPixelBlock) {
          const std::size_t ox1 = std::min(ox0 + kPixelBlock, g.out_w);
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            std::array<const double*, kPixelBlock> src{};
            std::array<double*, kPixelBlock> dst{};
            std::size_t n = 0;
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              std::size_t ix;
              if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
              src[n] = go_row + ox * g.out_c;
              dst[n] = gi_row + ix * g.in_c;
              ++n;
            }
            if (n == 0) continue;
            const double* wt_tap = wt.data() + (ky * g.kernel + kx) * g.out_c * g.in_c;
            for (std::size_t co = 0; co < g.out_c; ++co) {
              const double* w_row = wt_tap + co * g.in_c;
              for (std::size_t p = 0; p < n; ++p) axpy(g.in_c, src[p][co], w_row, dst[p]);
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in, std::span<const double> grad_out,
                            std::span<double> grad_w, std::span<double> grad_b) {
  const std::size_t pixels = g.batch * g.out_h * g.out_w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* go = grad_out.data() + p * g.out_c;
    for (std::size_t co = 0; co < g.out_c; ++co) grad_b[co] += go[co];
  }

  // One task per kernel tap; each owns a disjoint (Cin, Cout) slab of grad_w.
  const auto taps = static_cast<std::ptrdiff_t>(g.kernel * g.kernel);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t tap = 0; tap < taps; ++tap) {
    const std::size_t ky = static_cast<std::size_t>(tap) / g.kernel;
    const std::size_t kx = static_cast<std::size_t>(tap) % g.kernel;
    double* gw_tap = grad_w.data() + static_cast<std::size_t>(tap) * g.in_c * g.out_c;
    std::array<const double*, kPixelBlock> src{};
    std::array<const double*, kPixelBlock> gos{};
    std::size_t n = 0;
    auto flush = [&] {
      for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        double* gw_row = gw_tap + ci * g.out_c;
        for (std::size_t q = 0; q < n; ++q) axpy(g.out_c, src[q][ci], gos[q], gw_row);
      }
      n = 0;
    };
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        std::size_t iy;
        if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          std::size_t ix;
          if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
          src[n] = in.data() + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
          gos[n] = grad_out.data() + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
          if (++n == kPixelBlock) flush();
        }
      }
    if (n) flush();
  }
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax) {
  const auto rows = static_cast<std::ptrdiff_t>(g.batch * g.out_h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t b = static_cast<std::size_t>(row) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(row) % g.out_h;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const std::size_t o = ((b * g.out_h + oy) * g.out_w + ox) * g.channels;
      double* best = out.data() + o;
      std::size_t* arg = argmax.data() + o;
      std::fill_n(best, g.channels, -std::numeric_limits<double>::infinity());
      // Row-major window scan with strict '>' keeps the first maximal element.
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        std::size_t iy;
        if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          std::size_t ix;
          if (!source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix)) continue;
          const std::size_t base = ((b * g.in_h + iy) * g.in_w + ix) * g.channels;
          for (std::size_t c = 0; c < g.channels; ++c) {
            if (in[base + c] > best[c]) {
              best[c] = in[base + c];
              arg[c] = base + c;
            }
          }
        }
      }
    }
  }
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> grad_out, std::span<const std::size_t> argmax,
                      std::span<double> grad_in) {
  // Windows overlap within an image, never across images.
  const std::size_t per_image = g.out_h * g.out_w * g.channels;
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < batch; ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * per_image;
    for (std::size_t o = begin; o < begin + per_image; ++o) grad_in[argmax[o]] += grad_out[o];
  }
}

void dense_forward(std::size_t batch, std::size_t in_f, std::size_t out_f, std::span<const double> in,
                   std::span<const double> w, std::span<const double> bias, std::span<double> out) {
  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < rows; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    double* o = out.data() + b * out_f;
    std::copy_n(bias.data(), out_f, o);
    for (std::size_t f = 0; f < in_f; ++f) axpy(out_f, in[b * in_f + f], w.data() + f * out_f, o);
  }
}

void dense_backward(std::size_t batch, std::size_t in_f, std::size_t out_f, std::span<const double> in,
                    std::span<const double> w, std::span<const double> grad_out, std::span<double> grad_in,
                    std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t u = 0; u < out_f; ++u) grad_b[u] += grad_out[b * out_f + u];

  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < rows; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t f = 0; f < in_f; ++f)
      grad_in[b * in_f + f] += dot(out_f, grad_out.data() + b * out_f, w.data() + f * out_f);
  }

  const auto features = static_cast<std::ptrdiff_t>(in_f);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t fi = 0; fi < features; ++fi) {
    const auto f = static_cast<std::size_t>(fi);
    for (std::size_t b = 0; b < batch; ++b)
      axpy(out_f, in[b * in_f + f], grad_out.data() + b * out_f, grad_w.data() + f * out_f);
  }
}

void local1x1_forward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::span<const double> in,
                      std::span<const double> weights, std::span<const double> bias, std::span<double> out) {
  const std::size_t positions = h * w;
  const auto total = static_cast<std::ptrdiff_t>(batch * positions);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    const auto bp = static_cast<std::size_t>(i);
    const std::size_t p = bp % positions;
    out[bp] = bias[p] + dot(c, in.data() + bp * c, weights.data() + p * c);
  }
}

void local1x1_backward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::span<const double> in,
                       std::span<const double> weights, std::span<const double> grad_out,
                       std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b) {
  const std::size_t positions = h * w;
  const auto npos = static_cast<std::ptrdiff_t>(positions);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < npos; ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t bp = b * positions + p;
      const double go = grad_out[bp];
      grad_b[p] += go;
      axpy(c, go, weights.data() + p * c, grad_in.data() + bp * c);
      axpy(c, go, in.data() + bp * c, grad_w.data() + p * c);
    }
  }
}

}  // namespace kneeatt::kernels
