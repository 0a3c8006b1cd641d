#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Var is a handle to a node of a dynamically recorded graph. Leaves own
// persistent gradient buffers that accumulate across backward passes until
// zero_grad(); intermediate nodes are released with the last Var that
// references them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphfcn/errors.hpp"
#include "graphfcn/labels.hpp"
#include "graphfcn/sparse.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::uint64_t id = next_node_id();
  bool requires_grad = false;
  bool leaf = false;
  bool backpropagated = false;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

inline void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

class Var {
 public:
  Var() = default;

  /// Trainable leaf with a zero-initialized gradient.
  static Var leaf(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->grad = Tensor(n->value.shape());
    n->requires_grad = true;
    n->leaf = true;
    return Var(std::move(n));
  }

  /// Leaf that never receives gradients.
  static Var constant(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->leaf = true;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct access for optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value[0]; }

  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad_buffer().fill(0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::uint64_t id() const { return node_->id; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Var record(std::string_view, Tensor, std::vector<Var>, std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Wraps an op result into the graph. Non-finite results raise NumericError.
inline Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
                  std::function<void(detail::Node&)> backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  for (const auto& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
  if (n->requires_grad) {
    for (auto& v : inputs) n->parents.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

/// Populates gradients of every leaf reachable from a scalar loss.
inline void backward(const Var& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward expects a scalar loss, got " + shape_str(loss.shape()));
  }
  auto* root = loss.node().get();
  if (root->backpropagated) {
    throw AutodiffError("backward called twice on the same loss without reset");
  }
  root->backpropagated = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next++].get();
      if (p->requires_grad && !p->leaf && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order) n->grad = Tensor(n->value.shape());
  root->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

/// Allows backward() to run again on the same loss.
inline void reset_backward(const Var& loss) { loss.node()->backpropagated = false; }

inline Var detach(const Var& x) { return Var::constant(x.value()); }

// ---------------------------------------------------------------- elementwise

inline void require_same_shape(const Var& a, const Var& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  detail::add_into(out, b.value());
  return record("add", std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) detail::add_into(p->grad_buffer(), self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return record("mul", std::move(out), {a, b}, [](detail::Node& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return record("scale", std::move(out), {a}, [s](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return record("sum", Tensor::scalar(total), {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double s = self.grad[0];
    for (auto& v : g.data()) v += s;
  });
}

/// max(0, x); the subgradient at 0 is 0.
inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return record("relu", std::move(out), {x}, [](detail::Node& self) {
    auto& P = *self.parents[0];
    auto& g = P.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (P.value[i] > 0.0) g[i] += self.grad[i];
  });
}

// ------------------------------------------------------------------- matrices

inline Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  return record("matmul", dense_matmul(a.value(), b.value()), {a, b},
                [](detail::Node& self) {
                  auto& A = *self.parents[0];
                  auto& B = *self.parents[1];
                  if (A.requires_grad)
                    detail::add_into(A.grad_buffer(), dense_matmul(self.grad, transpose(B.value)));
                  if (B.requires_grad)
                    detail::add_into(B.grad_buffer(), dense_matmul(transpose(A.value), self.grad));
                });
}

/// s · x with a constant sparse left operand.
inline Var sparse_dense_matmul(const SparseMatrix& s, const Var& x) {
  if (s.rows() != s.cols() || x.value().rank() != 2 || x.shape()[0] != s.cols()) {
    throw DimensionError("sparse_dense_matmul: " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()) + " times " + shape_str(x.shape()));
  }
  auto st = std::make_shared<const SparseMatrix>(s.transposed());
  return record("sparse_dense_matmul", s.multiply(x.value()), {x},
                [st](detail::Node& self) {
                  detail::add_into(self.parents[0]->grad_buffer(), st->multiply(self.grad));
                });
}

/// [C×H×W] → [(H·W)×C]; row n holds the channel vector of pixel n.
inline Var channels_to_rows(const Var& x) {
  if (x.value().rank() != 3) {
    throw DimensionError("channels_to_rows expects C×H×W, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor out({hw, c});
  const auto in = x.value().data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t n = 0; n < hw; ++n) out.at(n, k) = in[k * hw + n];
  return record("channels_to_rows", std::move(out), {x}, [c, hw](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer().data();
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t n = 0; n < hw; ++n) g[k * hw + n] += self.grad.at(n, k);
  });
}

/// Horizontal concatenation of rank-2 blocks sharing a row count.
inline Var concat_columns(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_columns of nothing");
  const std::size_t rows = parts[0].shape()[0];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.shape()[0] != rows) {
      throw DimensionError("concat_columns: block " + shape_str(p.shape()) +
                           " does not have " + std::to_string(rows) + " rows");
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, off + j) = p.value().at(i, j);
    off += w;
  }
  return record("concat_columns", std::move(out), parts,
                [widths, rows, total](detail::Node& self) {
                  std::size_t off = 0;
                  for (std::size_t b = 0; b < self.parents.size(); ++b) {
                    auto& P = *self.parents[b];
                    if (P.requires_grad) {
                      auto& g = P.grad_buffer();
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < widths[b]; ++j)
                          g.at(i, j) += self.grad.at(i, off + j);
                    }
                    off += widths[b];
                  }
                  (void)total;
                });
}

// ------------------------------------------------------------ spatial (C×H×W)

inline void require_chw(const Var& x, std::string_view op) {
  if (x.value().rank() != 3) {
    throw DimensionError(std::string(op) + " expects C×H×W, got " + shape_str(x.shape()));
  }
}

/// Cross-correlation with zero padding. Kernel layout C_out×C_in×kh×kw.
inline Var conv2d(const Var& x, const Var& k, std::size_t stride, std::size_t pad) {
  require_chw(x, "conv2d");
  if (k.value().rank() != 4 || k.shape()[1] != x.shape()[0]) {
    throw DimensionError("conv2d: kernel " + shape_str(k.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(k.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

  // Valid output range along one axis for a given kernel tap.
  struct Range {
    std::size_t lo, hi;  // [lo, hi)
  };
  auto valid = [stride, pad](std::size_t tap, std::size_t in_extent, std::size_t out_extent) {
    // in = o*stride + tap - pad must lie in [0, in_extent)
    std::size_t lo = 0;
    if (pad > tap) lo = (pad - tap + stride - 1) / stride;
    std::size_t hi = 0;
    if (in_extent + pad > tap) hi = std::min(out_extent, (in_extent + pad - tap - 1) / stride + 1);
    return Range{lo, std::max(lo, hi)};
  };

  Tensor out({cout, oh, ow});
  {
    const double* xd = x.value().data().data();
    const double* kd = k.value().data().data();
    double* od = out.data().data();
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const Range ry = valid(ky, h, oh);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const Range rx = valid(kx, w, ow);
            const double wv = kd[((co * cin + ci) * kh + ky) * kw + kx];
            if (wv == 0.0) continue;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const double* xrow = xd + (ci * h + (oy * stride + ky - pad)) * w;
              double* orow = od + (co * oh + oy) * ow;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                orow[ox] += wv * xrow[ox * stride + kx - pad];
            }
          }
        }
  }

  return record("conv2d", std::move(out), {x, k},
                [=](detail::Node& self) {
                  auto& X = *self.parents[0];
                  auto& K = *self.parents[1];
                  const double* xd = X.value.data().data();
                  const double* kd = K.value.data().data();
                  const double* gd = self.grad.data().data();
                  double* gx = X.requires_grad ? X.grad_buffer().data().data() : nullptr;
                  double* gk = K.requires_grad ? K.grad_buffer().data().data() : nullptr;
                  for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                      for (std::size_t ky = 0; ky < kh; ++ky) {
                        const Range ry = valid(ky, h, oh);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                          const Range rx = valid(kx, w, ow);
                          const std::size_t kidx = ((co * cin + ci) * kh + ky) * kw + kx;
                          const double wv = kd[kidx];
                          double acc = 0.0;
                          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                            const std::size_t xoff = (ci * h + (oy * stride + ky - pad)) * w;
                            const double* grow = gd + (co * oh + oy) * ow;
                            if (gk) {
                              const double* xrow = xd + xoff;
                              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                                acc += grow[ox] * xrow[ox * stride + kx - pad];
                            }
                            if (gx && wv != 0.0) {
                              double* gxrow = gx + xoff;
                              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                                gxrow[ox * stride + kx - pad] += wv * grow[ox];
                            }
                          }
                          if (gk) gk[kidx] += acc;
                        }
                      }
                });
}

/// Adds b[c] to every pixel of channel c.
inline Var add_channel_bias(const Var& x, const Var& b) {
  require_chw(x, "add_channel_bias");
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  if (b.value().rank() != 1 || b.shape()[0] != c) {
    throw DimensionError("add_channel_bias: bias " + shape_str(b.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t n = 0; n < hw; ++n) out[k * hw + n] += b.value()[k];
  return record("add_channel_bias", std::move(out), {x, b}, [c, hw](detail::Node& self) {
    auto& X = *self.parents[0];
    auto& B = *self.parents[1];
    if (X.requires_grad) detail::add_into(X.grad_buffer(), self.grad);
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t n = 0; n < hw; ++n) s += self.grad[k * hw + n];
        g[k] += s;
      }
    }
  });
}

/// Per-window maximum. Gradient goes to the first maximal element in scan order.
inline Var maxpool2d(const Var& x, std::size_t size, std::size_t stride) {
  require_chw(x, "maxpool2d");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (size == 0 || stride == 0) throw ParameterError("maxpool2d: size and stride must be positive");
  if (size > h || size > w) {
    throw DimensionError("maxpool2d: window " + std::to_string(size) + " exceeds input " +
                         shape_str(x.shape()));
  }
  const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
  Tensor out({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const auto& in = x.value();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (k * h + oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = (k * h + oy * stride + dy) * w + ox * stride + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (k * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
  return record("maxpool2d", std::move(out), {x},
                [argmax = std::move(argmax)](detail::Node& self) {
                  auto& g = self.parents[0]->grad_buffer();
                  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                });
}

/// Nearest-neighbour upsampling: every cell becomes a factor×factor block.
inline Var upsample_nearest(const Var& x, std::size_t factor) {
  require_chw(x, "upsample_nearest");
  if (factor == 0) throw ParameterError("upsample_nearest: factor must be >= 1");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor out({c, oh, ow});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out.at(k, y, xx) = x.value().at(k, y / factor, xx / factor);
  return record("upsample_nearest", std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          g.at(k, y / factor, xx / factor) += self.grad.at(k, y, xx);
  });
}

/// Zero-pads at the bottom and right to reach out_h × out_w.
inline Var pad_spatial(const Var& x, std::size_t out_h, std::size_t out_w) {
  require_chw(x, "pad_spatial");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (out_h < h || out_w < w) throw DimensionError("pad_spatial: target smaller than input");
  Tensor out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out.at(k, y, xx) = x.value().at(k, y, xx);
  return record("pad_spatial", std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) g.at(k, y, xx) += self.grad.at(k, y, xx);
  });
}

/// Keeps the top-left out_h × out_w window.
inline Var crop_spatial(const Var& x, std::size_t out_h, std::size_t out_w) {
  require_chw(x, "crop_spatial");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (out_h > h || out_w > w) throw DimensionError("crop_spatial: target larger than input");
  if (out_h == h && out_w == w) return x;
  Tensor out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx) out.at(k, y, xx) = x.value().at(k, y, xx);
  return record("crop_spatial", std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t xx = 0; xx < out_w; ++xx) g.at(k, y, xx) += self.grad.at(k, y, xx);
  });
}

// ---------------------------------------------------------------------- loss

/// Mean over non-ignored rows of −log softmax(logits)[label]. Returns 0 when
/// every row is ignored.
inline Var softmax_cross_entropy(const Var& logits, std::span<const Label> labels) {
  if (logits.value().rank() != 2 || logits.shape()[0] != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  const auto& z = logits.value();
  Tensor probs({n, c});
  std::vector<Label> lab(labels.begin(), labels.end());
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Label y = lab[i];
    if (y == kIgnoreLabel) continue;
    if (y >= c) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) + " at row " +
                            std::to_string(i) + " outside [0," + std::to_string(c) + ")");
    }
    double m = z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs.at(i, j) = std::exp(z.at(i, j) - m);
      s += probs.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= s;
    total += std::log(s) - (z.at(i, y) - m);
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  return record("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                [probs = std::move(probs), lab = std::move(lab), counted, c](detail::Node& self) {
                  if (!counted) return;
                  auto& g = self.parents[0]->grad_buffer();
                  const double s = self.grad[0] / static_cast<double>(counted);
                  for (std::size_t i = 0; i < lab.size(); ++i) {
                    if (lab[i] == kIgnoreLabel) continue;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double onehot = j == lab[i] ? 1.0 : 0.0;
                      g.at(i, j) += s * (probs.at(i, j) - onehot);
                    }
                  }
                });
}

}  // namespace gfcn
