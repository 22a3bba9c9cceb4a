#include "kneeatt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace kneeatt {

namespace {

std::size_t in_id(Graph& g, std::size_t self, std::size_t slot) { return g.input_id(self, slot); }

bool wants_grad(Graph& g, std::size_t self, std::size_t slot) { return g.requires_grad(g.input_id(self, slot)); }

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
}

std::string dim_msg(const char* op, const char* what, std::size_t got, std::size_t want) {
  return std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " + std::to_string(want);
}

// Hash of a bit pattern, packed 64 bits per mixing step.
class BitHash {
 public:
  void push(bool bit) {
    word_ |= static_cast<std::uint64_t>(bit) << fill_;
    if (++fill_ == 64) flush();
  }
  std::uint64_t value() {
    flush();
    return h_;
  }

 private:
  void flush() {
    h_ = (h_ ^ word_ ^ (count_++ << 7)) * 1099511628211ULL;
    word_ = 0;
    fill_ = 0;
  }
  std::uint64_t h_ = 1469598103934665603ULL, word_ = 0, count_ = 0;
  unsigned fill_ = 0;
};

std::uint64_t hash_bits(const std::vector<bool>& bits) {
  BitHash h;
  for (bool b : bits) h.push(b);
  return h.value();
}

}  // namespace

Var conv2d(Var input, Var weights, Var bias, std::size_t stride, Padding padding) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weights");
  if (w.dim(0) != w.dim(1)) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (w.dim(2) != x.dim(3)) throw ShapeError(dim_msg("conv2d", "input channels (Cin)", x.dim(3), w.dim(2)));
  if (b.size() != w.dim(3)) throw ShapeError(dim_msg("conv2d", "bias length (Cout)", b.size(), w.dim(3)));

  const auto geo = ConvGeometry::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), stride, w.dim(3), padding);
  Tensor out({geo.batch, geo.out_h, geo.out_w, geo.out_c});
  kernels::conv2d_forward(geo, x.span(), w.span(), b.span(), out.span());

  return input.graph().add_node(
      OpKind::Conv2d, {input, weights, bias}, std::move(out), [geo](Graph& g, std::size_t self) {
        const Tensor& go = g.grad(self);
        if (wants_grad(g, self, 0)) {
          kernels::conv2d_backward_input(geo, go.span(), g.value(in_id(g, self, 1)).span(),
                                         g.grad_buffer(in_id(g, self, 0)).span());
        }
        if (wants_grad(g, self, 1) || wants_grad(g, self, 2)) {
          kernels::conv2d_backward_params(geo, g.value(in_id(g, self, 0)).span(), go.span(),
                                          g.grad_buffer(in_id(g, self, 1)).span(),
                                          g.grad_buffer(in_id(g, self, 2)).span());
        }
      });
}

Var maxpool2d(Var input, std::size_t kernel, std::size_t stride, Padding padding) {
  const Tensor& x = input.value();
  require_rank(x, 4, "maxpool2d input");
  if (padding == Padding::Valid && (kernel > x.dim(1) || kernel > x.dim(2))) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " larger than input " + shape_str(x.shape()));
  }
  const auto geo = PoolGeometry::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel, stride, padding);
  Tensor out({geo.batch, geo.out_h, geo.out_w, geo.channels});
  auto argmax = std::make_shared<std::vector<std::size_t>>(geo.out_size());
  kernels::maxpool_forward(geo, x.span(), out.span(), *argmax);

  Graph& graph = input.graph();
  // A window whose top two values coincide is a non-differentiable point.
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t a : *argmax) h = (h ^ a) * 1099511628211ULL;
  graph.mix_signature(h);

  return graph.add_node(OpKind::MaxPool, {input}, std::move(out), [geo, argmax](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    kernels::maxpool_backward(geo, g.grad(self).span(), *argmax, g.grad_buffer(in_id(g, self, 0)).span());
  });
}

Var dense(Var input, Var weights, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weights");
  if (w.dim(0) != x.dim(1)) throw ShapeError(dim_msg("dense", "input features (F)", x.dim(1), w.dim(0)));
  if (b.size() != w.dim(1)) throw ShapeError(dim_msg("dense", "bias length (U)", b.size(), w.dim(1)));
  const std::size_t batch = x.dim(0), in_f = x.dim(1), out_f = w.dim(1);
  Tensor out({batch, out_f});
  kernels::dense_forward(batch, in_f, out_f, x.span(), w.span(), b.span(), out.span());
  return input.graph().add_node(
      OpKind::Dense, {input, weights, bias}, std::move(out), [batch, in_f, out_f](Graph& g, std::size_t self) {
        // Buffers are allocated unconditionally; dense layers are small.
        kernels::dense_backward(batch, in_f, out_f, g.value(in_id(g, self, 0)).span(),
                                g.value(in_id(g, self, 1)).span(), g.grad(self).span(),
                                g.grad_buffer(in_id(g, self, 0)).span(), g.grad_buffer(in_id(g, self, 1)).span(),
                                g.grad_buffer(in_id(g, self, 2)).span());
      });
}

Var locally_connected_1x1(Var input, Var weights, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "locally_connected_1x1 input");
  require_rank(w, 3, "locally_connected_1x1 weights");
  const std::size_t batch = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  if (w.dim(0) != h) throw ShapeError(dim_msg("locally_connected_1x1", "weight grid height", w.dim(0), h));
  if (w.dim(1) != wd) throw ShapeError(dim_msg("locally_connected_1x1", "weight grid width", w.dim(1), wd));
  if (w.dim(2) != c) throw ShapeError(dim_msg("locally_connected_1x1", "weight channels", w.dim(2), c));
  if (b.size() != h * wd) throw ShapeError(dim_msg("locally_connected_1x1", "bias size", b.size(), h * wd));
  Tensor out({batch, h, wd, 1});
  kernels::local1x1_forward(batch, h, wd, c, x.span(), w.span(), b.span(), out.span());
  return input.graph().add_node(
      OpKind::LocallyConnected, {input, weights, bias}, std::move(out),
      [batch, h, wd, c](Graph& g, std::size_t self) {
        kernels::local1x1_backward(batch, h, wd, c, g.value(in_id(g, self, 0)).span(),
                                   g.value(in_id(g, self, 1)).span(), g.grad(self).span(),
                                   g.grad_buffer(in_id(g, self, 0)).span(), g.grad_buffer(in_id(g, self, 1)).span(),
                                   g.grad_buffer(in_id(g, self, 2)).span());
      });
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  BitHash active;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const bool on = in[i] > 0.0;
    active.push(on);
    out[i] = on ? in[i] : 0.0;
  }
  x.graph().mix_signature(active.value());
  return x.graph().add_node(OpKind::Relu, {x}, std::move(out), [](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const Tensor& in = g.value(in_id(g, self, 0));
    const Tensor& go = g.grad(self);
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    for (std::size_t i = 0; i < go.size(); ++i)
      if (in[i] > 0.0) gi[i] += go[i];
  });
}

Var sigmoid(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    // Evaluate on the side that cannot overflow.
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return x.graph().add_node(OpKind::Sigmoid, {x}, std::move(out), [](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const Tensor& y = g.value(self);
    const Tensor& go = g.grad(self);
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = logits.size() / cols;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * cols;
    double* p = out.data() + r * cols;
    const double m = *std::max_element(z, z + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (p[c] = std::exp(z[c] - m));
    for (std::size_t c = 0; c < cols; ++c) p[c] /= total;
  }
  return out;
}

Var softmax(Var x) {
  return x.graph().add_node(OpKind::Softmax, {x}, softmax_rows(x.value()), [](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const Tensor& y = g.value(self);
    const Tensor& go = g.grad(self);
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    const std::size_t cols = y.shape().back();
    for (std::size_t r = 0; r < y.size() / cols; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += go[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - inner);
    }
  });
}

Var gap(Var x) {
  const Tensor& in = x.value();
  require_rank(in, 4, "gap input");
  const std::size_t batch = in.dim(0), hw = in.dim(1) * in.dim(2), c = in.dim(3);
  Tensor out({batch, c});
  for (std::size_t b = 0; b < batch; ++b) {
    double* o = out.data() + b * c;
    for (std::size_t p = 0; p < hw; ++p) {
      const double* v = in.data() + (b * hw + p) * c;
      for (std::size_t k = 0; k < c; ++k) o[k] += v[k];
    }
    for (std::size_t k = 0; k < c; ++k) o[k] /= static_cast<double>(hw);
  }
  return x.graph().add_node(OpKind::Gap, {x}, std::move(out), [batch, hw, c](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const Tensor& go = g.grad(self);
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) gi[(b * hw + p) * c + k] += go[b * c + k] * inv;
  });
}

Var mask_multiply(Var volume, Var mask) {
  require_same_graph(volume, mask, "mask_multiply");
  const Tensor& v = volume.value();
  const Tensor& m = mask.value();
  require_rank(v, 4, "mask_multiply volume");
  require_rank(m, 4, "mask_multiply mask");
  if (m.dim(3) != 1) throw ShapeError(dim_msg("mask_multiply", "mask channels", m.dim(3), 1));
  for (std::size_t a = 0; a < 3; ++a) {
    if (m.dim(a) != v.dim(a)) {
      static const char* names[] = {"batch", "height", "width"};
      throw ShapeError(dim_msg("mask_multiply", names[a], m.dim(a), v.dim(a)));
    }
  }
  const std::size_t pix = v.dim(0) * v.dim(1) * v.dim(2), c = v.dim(3);
  Tensor out(v.shape());
  for (std::size_t p = 0; p < pix; ++p)
    for (std::size_t k = 0; k < c; ++k) out[p * c + k] = v[p * c + k] * m[p];
  return volume.graph().add_node(OpKind::MaskMultiply, {volume, mask}, std::move(out),
                                 [pix, c](Graph& g, std::size_t self) {
                                   const Tensor& go = g.grad(self);
                                   const Tensor& v = g.value(in_id(g, self, 0));
                                   const Tensor& m = g.value(in_id(g, self, 1));
                                   if (wants_grad(g, self, 0)) {
                                     Tensor& gv = g.grad_buffer(in_id(g, self, 0));
                                     for (std::size_t p = 0; p < pix; ++p)
                                       for (std::size_t k = 0; k < c; ++k) gv[p * c + k] += go[p * c + k] * m[p];
                                   }
                                   if (wants_grad(g, self, 1)) {
                                     Tensor& gm = g.grad_buffer(in_id(g, self, 1));
                                     for (std::size_t p = 0; p < pix; ++p) {
                                       double acc = 0.0;
                                       for (std::size_t k = 0; k < c; ++k) acc += go[p * c + k] * v[p * c + k];
                                       gm[p] += acc;
                                     }
                                   }
                                 });
}

Var concat(std::span<const Var> inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t batch = inputs[0].value().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require_same_graph(inputs[0], inputs[i], "concat");
    const Tensor& t = inputs[i].value();
    require_rank(t, 2, "concat input");
    if (t.dim(0) != batch) {
      throw ShapeError("concat: input " + std::to_string(i) + " batch is " + std::to_string(t.dim(0)) +
                       ", expected " + std::to_string(batch));
    }
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor out({batch, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& t = inputs[i].value();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(t.data() + b * widths[i], widths[i], out.data() + b * total + offset);
    offset += widths[i];
  }
  return inputs[0].graph().add_node(
      OpKind::Concat, std::vector<Var>(inputs.begin(), inputs.end()), std::move(out),
      [widths, batch, total](Graph& g, std::size_t self) {
        const Tensor& go = g.grad(self);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          if (wants_grad(g, self, i)) {
            Tensor& gi = g.grad_buffer(in_id(g, self, i));
            for (std::size_t b = 0; b < batch; ++b)
              for (std::size_t k = 0; k < widths[i]; ++k) gi[b * widths[i] + k] += go[b * total + offset + k];
          }
          offset += widths[i];
        }
      });
}

Var cross_entropy(Var probs, const Tensor& onehot) {
  const Tensor& p = probs.value();
  require_rank(p, 2, "cross_entropy probs");
  if (onehot.shape() != p.shape()) {
    throw ShapeError("cross_entropy: targets " + shape_str(onehot.shape()) + " vs probs " + shape_str(p.shape()));
  }
  const std::size_t batch = p.dim(0), classes = p.dim(1);
  std::vector<std::size_t> truth(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double y = onehot[b * classes + c];
      if (y == 1.0) {
        ++ones;
        truth[b] = c;
      } else if (y != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw std::invalid_argument("cross_entropy: target row " + std::to_string(b) + " is not one-hot");
  }
  double loss = 0.0;
  std::vector<bool> clamped(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double pt = p[b * classes + truth[b]];
    clamped[b] = pt < kLogClamp;
    loss -= std::log(std::max(pt, kLogClamp));
  }
  loss /= static_cast<double>(batch);
  probs.graph().mix_signature(hash_bits(clamped));
  return probs.graph().add_node(
      OpKind::CrossEntropy, {probs}, Tensor::scalar(loss), [truth, classes](Graph& g, std::size_t self) {
        if (!wants_grad(g, self, 0)) return;
        const double go = g.grad(self)[0];
        const Tensor& p = g.value(in_id(g, self, 0));
        Tensor& gp = g.grad_buffer(in_id(g, self, 0));
        const double inv_batch = 1.0 / static_cast<double>(truth.size());
        for (std::size_t b = 0; b < truth.size(); ++b) {
          const std::size_t i = b * classes + truth[b];
          if (p[i] >= kLogClamp) gp[i] -= go * inv_batch / p[i];
        }
      });
}

Var divide_rows(Var x, Var denom, double floor) {
  require_same_graph(x, denom, "divide_rows");
  const Tensor& v = x.value();
  const Tensor& d = denom.value();
  require_rank(v, 2, "divide_rows numerator");
  require_rank(d, 2, "divide_rows denominator");
  if (d.dim(0) != v.dim(0) || d.dim(1) != 1) {
    throw ShapeError("divide_rows: denominator " + shape_str(d.shape()) + " does not fit " + shape_str(v.shape()));
  }
  const std::size_t batch = v.dim(0), n = v.dim(1);
  Tensor out(v.shape());
  std::vector<bool> floored(batch);
  Graph& graph = x.graph();
  for (std::size_t b = 0; b < batch; ++b) {
    floored[b] = d[b] < floor;
    if (floored[b]) graph.warn("divide_rows: denominator of row " + std::to_string(b) + " below floor");
    const double q = floored[b] ? floor : d[b];
    for (std::size_t k = 0; k < n; ++k) out[b * n + k] = v[b * n + k] / q;
  }
  graph.mix_signature(hash_bits(floored));
  return graph.add_node(OpKind::DivideRows, {x, denom}, std::move(out),
                        [floored, floor, batch, n](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad(self);
                          const Tensor& y = g.value(self);
                          const Tensor& d = g.value(in_id(g, self, 1));
                          const bool gx = wants_grad(g, self, 0), gd = wants_grad(g, self, 1);
                          for (std::size_t b = 0; b < batch; ++b) {
                            const double q = floored[b] ? floor : d[b];
                            if (gx) {
                              Tensor& gi = g.grad_buffer(in_id(g, self, 0));
                              for (std::size_t k = 0; k < n; ++k) gi[b * n + k] += go[b * n + k] / q;
                            }
                            if (gd && !floored[b]) {
                              double acc = 0.0;
                              for (std::size_t k = 0; k < n; ++k) acc += go[b * n + k] * y[b * n + k];
                              g.grad_buffer(in_id(g, self, 1))[b] -= acc / q;
                            }
                          }
                        });
}

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.value());
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().add_node(OpKind::Add, {a, b}, std::move(out), [](Graph& g, std::size_t self) {
    const Tensor& go = g.grad(self);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!wants_grad(g, self, slot)) continue;
      Tensor& gi = g.grad_buffer(in_id(g, self, slot));
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

Var multiply(Var a, Var b) {
  require_same_graph(a, b, "multiply");
  if (a.shape() != b.shape()) throw ShapeError("multiply: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.value());
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph().add_node(OpKind::Multiply, {a, b}, std::move(out), [](Graph& g, std::size_t self) {
    const Tensor& go = g.grad(self);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!wants_grad(g, self, slot)) continue;
      const Tensor& other = g.value(in_id(g, self, 1 - slot));
      Tensor& gi = g.grad_buffer(in_id(g, self, slot));
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * other[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return x.graph().add_node(OpKind::Scale, {x}, std::move(out), [factor](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const Tensor& go = g.grad(self);
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * factor;
  });
}

Var sum(Var x) {
  return x.graph().add_node(OpKind::Sum, {x}, Tensor::scalar(x.value().sum()), [](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const double go = g.grad(self)[0];
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go;
  });
}

Var dot(Var x, const Tensor& coeffs) {
  const Tensor& v = x.value();
  if (coeffs.size() != v.size()) {
    throw ShapeError("dot: coefficients " + shape_str(coeffs.shape()) + " vs " + shape_str(v.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * coeffs[i];
  return x.graph().add_node(OpKind::Dot, {x}, Tensor::scalar(acc), [coeffs](Graph& g, std::size_t self) {
    if (!wants_grad(g, self, 0)) return;
    const double go = g.grad(self)[0];
    Tensor& gi = g.grad_buffer(in_id(g, self, 0));
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go * coeffs[i];
  });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum: " + std::to_string(scalars.size()) + " terms but " +
                                std::to_string(weights.size()) + " weights");
  }
  if (scalars.empty()) throw std::invalid_argument("weighted_sum: no terms");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require_same_graph(scalars[0], scalars[i], "weighted_sum");
    if (scalars[i].value().size() != 1) throw ShapeError("weighted_sum: term " + std::to_string(i) + " not scalar");
    total += weights[i] * scalars[i].value()[0];
  }
  std::vector<double> w(weights.begin(), weights.end());
  return scalars[0].graph().add_node(OpKind::WeightedSum, std::vector<Var>(scalars.begin(), scalars.end()),
                                     Tensor::scalar(total), [w](Graph& g, std::size_t self) {
                                       const double go = g.grad(self)[0];
                                       for (std::size_t i = 0; i < w.size(); ++i) {
                                         if (wants_grad(g, self, i)) g.grad_buffer(in_id(g, self, i))[0] += go * w[i];
                                       }
                                     });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[b]) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
    out[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  return out;
}

}  // namespace kneeatt
