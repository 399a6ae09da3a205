#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dynapyr/conv.hpp"
#include "dynapyr/gumbel.hpp"
#include "dynapyr/tensor.hpp"

namespace dynapyr {

/// A recorded value in the reverse-mode graph. `grad` stays empty until
/// something flows into it.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const {
    if (size() != 1) throw ShapeError("Var::item: value is " + shape_string(shape()) + ", not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient; zeros when nothing has flowed in.
  Tensor grad() const { return node_->grad.empty() ? Tensor(value().shape()) : node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline Var record(Tensor value, std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. `seed` scales the root gradient,
/// which lets callers average over a minibatch without an extra node.
inline void backward(const Var& root, double seed = 1.0) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::record(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::record(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::record(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const auto& other = self.parents[1 - k]->value;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += other[i] * self.grad[i];
    }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return detail::record(std::move(out), {x.node()}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.values()) v += c;
  return detail::record(std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// s * x with s a one-element Var (the gate value multiplying a feature map).
inline Var mul_scalar(const Var& x, const Var& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: multiplier must be a scalar, got " + shape_string(s.shape()));
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (auto& v : out.values()) v *= sv;
  return detail::record(std::move(out), {x.node(), s.node()}, [](Node& self) {
    const auto& xn = self.parents[0];
    const auto& sn = self.parents[1];
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      const double sv = sn->value[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sv * self.grad[i];
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->value[i];
      sn->grad_buffer()[0] += acc;
    }
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return detail::record(std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Var square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= v;
  return detail::record(std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xv[i] * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return detail::record(Tensor::scalar(acc), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (auto& v : g.values()) v += gs;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Picks entry i of a tensor as a scalar.
inline Var select(const Var& x, std::size_t i) {
  if (i >= x.size()) throw ShapeError("select: index " + std::to_string(i) + " out of " + shape_string(x.shape()));
  return detail::record(Tensor::scalar(x.value()[i]), {x.node()}, [i](Node& self) {
    self.parents[0]->grad_buffer()[i] += self.grad[0];
  });
}

/// C x H x W -> length-C vector of per-channel means.
inline Var global_avg_pool(const Var& x) {
  require_rank(x.value(), 3, "global_avg_pool", "input");
  const auto& xv = x.value();
  const std::size_t C = xv.channels();
  const std::size_t hw = xv.height() * xv.width();
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (double v : xv.plane(c)) acc += v;
    out[c] = acc / static_cast<double>(hw);
  }
  return detail::record(std::move(out), {x.node()}, [C, hw](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c) {
      const double gc = self.grad[c] / static_cast<double>(hw);
      for (auto& v : g.plane(c)) v += gc;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear maps

/// W x + b with W of shape out x in.
inline Var affine(const Var& x, const Var& W, const Var& b) {
  require_rank(x.value(), 1, "affine", "input");
  require_rank(W.value(), 2, "affine", "weight");
  require_rank(b.value(), 1, "affine", "bias");
  const std::size_t out_n = W.value().dim(0);
  const std::size_t in_n = W.value().dim(1);
  if (x.size() != in_n) {
    throw ShapeError("affine: input length " + std::to_string(x.size()) + " != weight columns " + std::to_string(in_n));
  }
  if (b.size() != out_n) {
    throw ShapeError("affine: bias length " + std::to_string(b.size()) + " != weight rows " + std::to_string(out_n));
  }
  Tensor out({out_n});
  for (std::size_t r = 0; r < out_n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < in_n; ++c) acc += W.value()[r * in_n + c] * x.value()[c];
    out[r] = acc + b.value()[r];
  }
  return detail::record(std::move(out), {x.node(), W.node(), b.node()}, [out_n, in_n](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t r = 0; r < out_n; ++r)
        for (std::size_t c = 0; c < in_n; ++c) g[c] += wn->value[r * in_n + c] * self.grad[r];
    }
    if (wn->requires_grad) {
      auto& g = wn->grad_buffer();
      for (std::size_t r = 0; r < out_n; ++r)
        for (std::size_t c = 0; c < in_n; ++c) g[r * in_n + c] += self.grad[r] * xn->value[c];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t r = 0; r < out_n; ++r) g[r] += self.grad[r];
    }
  });
}

inline Var conv2d(const Var& x, const ConvSpec& spec, const Var& w, const Var& b) {
  Tensor out = conv2d(x.value(), spec, w.value(), b.value());
  return detail::record(std::move(out), {x.node(), w.node(), b.node()}, [spec](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    conv2d_backward(xn->value, spec, wn->value, self.grad, xn->requires_grad ? &xn->grad_buffer() : nullptr,
                    wn->requires_grad ? &wn->grad_buffer() : nullptr, bn->requires_grad ? &bn->grad_buffer() : nullptr);
  });
}

// ---------------------------------------------------------------------------
// Resampling

/// Each cell becomes a 2x2 block.
inline Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 3, "upsample_nearest2x", "input");
  const std::size_t C = x.channels(), H = x.height(), W = x.width();
  Tensor out({C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
  return out;
}

inline Var upsample_nearest2x(const Var& x) {
  return detail::record(upsample_nearest2x(x.value()), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t C = g.channels(), H = g.height(), W = g.width();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xx = 0; xx < 2 * W; ++xx) g.at(c, y / 2, xx / 2) += self.grad.at(c, y, xx);
  });
}

// ---------------------------------------------------------------------------
// Gating and losses

/// Gumbel-Softmax over a logit vector with externally supplied noise. With
/// `hard` the forward value is the one-hot of the perturbed argmax while the
/// backward pass uses the Jacobian of the soft relaxation (straight-through).
inline Var gumbel_softmax(const Var& logits, std::span<const double> noise, double tau, bool hard) {
  require_rank(logits.value(), 1, "gumbel_softmax", "logits");
  auto soft = gumbel_softmax_soft(logits.value().values(), noise, tau);
  Tensor forward = hard ? Tensor::vector(gumbel_softmax(logits.value().values(), noise, tau, true)) : Tensor::vector(soft);
  return detail::record(std::move(forward), {logits.node()}, [soft = std::move(soft), tau](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    double dot = 0.0;
    for (std::size_t i = 0; i < soft.size(); ++i) dot += self.grad[i] * soft[i];
    for (std::size_t j = 0; j < soft.size(); ++j) g[j] += soft[j] * (self.grad[j] - dot) / tau;
  });
}

/// Mean over elements of the binary cross-entropy of sigmoid(logits) against
/// 0/1 targets, evaluated in the overflow-safe form.
inline Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "bce_with_logits");
  const auto& z = logits.value();
  const double n = static_cast<double>(z.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  return detail::record(Tensor::scalar(acc / n), {logits.node()}, [targets, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& z = self.parents[0]->value;
    const double gs = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z[i]));
      g[i] += gs * (sig - targets[i]);
    }
  });
}

}  // namespace dynapyr
