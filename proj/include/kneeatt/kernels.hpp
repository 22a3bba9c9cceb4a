#pragma once

// Raw compute kernels over contiguous (B, H, W, C) buffers.
//
// Two implementations share every signature: kneeatt::kernels holds the
// OpenMP-parallel versions the graph uses, kneeatt::kernels::ref holds plain
// serial loops that the tests treat as ground truth. Every parallel kernel
// partitions its output so each element is accumulated by exactly one thread
// in a fixed order, which keeps results bit-identical across thread counts.

#include <cstddef>
#include <cstdint>
#include <span>

namespace kneeatt {

enum class Padding { Same, Valid };

/// Output extent and leading pad for one spatial axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

struct ConvGeometry {
  std::size_t batch = 0, in_h = 0, in_w = 0, in_c = 0;
  std::size_t kernel = 1, stride = 1;
  std::size_t out_h = 0, out_w = 0, out_c = 0;
  std::size_t pad_top = 0, pad_left = 0;

  static ConvGeometry make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t in_c,
                           std::size_t kernel, std::size_t stride, std::size_t out_c, Padding padding);
  std::size_t in_size() const { return batch * in_h * in_w * in_c; }
  std::size_t out_size() const { return batch * out_h * out_w * out_c; }
  std::size_t weight_size() const { return kernel * kernel * in_c * out_c; }
};

struct PoolGeometry {
  std::size_t batch = 0, in_h = 0, in_w = 0, channels = 0;
  std::size_t kernel = 1, stride = 1;
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;

  static PoolGeometry make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t channels,
                           std::size_t kernel, std::size_t stride, Padding padding);
  std::size_t in_size() const { return batch * in_h * in_w * channels; }
  std::size_t out_size() const { return batch * out_h * out_w * channels; }
};

#define KNEEATT_KERNEL_DECLS                                                                              \
  /* out = conv(in, w) + bias; w laid out (k, k, Cin, Cout). */                                           \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,      \
                      std::span<const double> bias, std::span<double> out);                              \
  /* grad_in += conv^T(grad_out, w). */                                                                   \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,                    \
                             std::span<const double> w, std::span<double> grad_in);                      \
  /* grad_w += in^T * grad_out, grad_b += column sums of grad_out. */                                     \
  void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,                         \
                              std::span<const double> grad_out, std::span<double> grad_w,                \
                              std::span<double> grad_b);                                                 \
  /* Max over each window; argmax holds the flat input index of the first maximal element. */            \
  void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out,         \
                       std::span<std::size_t> argmax);                                                   \
  void maxpool_backward(const PoolGeometry& g, std::span<const double> grad_out,                         \
                        std::span<const std::size_t> argmax, std::span<double> grad_in);                 \
  /* out[b, u] = bias[u] + sum_f in[b, f] * w[f, u]. */                                                   \
  void dense_forward(std::size_t batch, std::size_t in_f, std::size_t out_f, std::span<const double> in, \
                     std::span<const double> w, std::span<const double> bias, std::span<double> out);    \
  void dense_backward(std::size_t batch, std::size_t in_f, std::size_t out_f,                            \
                      std::span<const double> in, std::span<const double> w,                             \
                      std::span<const double> grad_out, std::span<double> grad_in,                       \
                      std::span<double> grad_w, std::span<double> grad_b);                               \
  /* Unshared 1x1 weights: out[b, h, w] = bias[h, w] + sum_c in[b, h, w, c] * w[h, w, c]. */              \
  void local1x1_forward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c,                  \
                        std::span<const double> in, std::span<const double> weights,                     \
                        std::span<const double> bias, std::span<double> out);                            \
  void local1x1_backward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c,                 \
                         std::span<const double> in, std::span<const double> weights,                    \
                         std::span<const double> grad_out, std::span<double> grad_in,                    \
                         std::span<double> grad_w, std::span<double> grad_b);

namespace kernels {
KNEEATT_KERNEL_DECLS
namespace ref {
KNEEATT_KERNEL_DECLS
}  // namespace ref
}  // namespace kernels

#undef KNEEATT_KERNEL_DECLS

}  // namespace kneeatt
