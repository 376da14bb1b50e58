#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
// Operations build a dynamic graph of shared nodes; backward() walks the
// recorded graph in reverse topological order and accumulates gradients
// into every leaf marked requires_grad.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "svis/common.hpp"

namespace svis {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  Tensor(const Shape& shape, std::vector<double> data, bool requires_grad = false) {
    require(shape_numel(shape) == (long long)data.size(),
            "tensor data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
    n_ = std::make_shared<Node>();
    n_->shape = shape;
    n_->data = std::move(data);
    n_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
  }
  static Tensor full(const Shape& shape, double v, bool requires_grad = false) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }
  static Tensor gaussian(const Shape& shape, double stddev, Rng& rng,
                         bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = dist(rng);
    return Tensor(shape, std::move(d), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  int rank() const { return (int)n_->shape.size(); }
  long long numel() const { return (long long)n_->data.size(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  const std::vector<double>& data() const { return n_->data; }
  std::vector<double>& mutable_data() { return n_->data; }
  const std::vector<double>& grad() const { return n_->grad; }

  double value() const {
    require(numel() == 1, "value() requires a scalar tensor, got " + shape_str(shape()));
    return n_->data[0];
  }
  double at(long long i) const { return n_->data[i]; }
  double at2(int r, int c) const { return n_->data[(long long)r * dim(1) + c]; }

  bool all_finite() const {
    for (double v : n_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline std::shared_ptr<Tensor::Node> make_node(
    Shape shape, std::vector<double> data,
    std::vector<std::shared_ptr<Tensor::Node>> parents,
    std::function<void(Tensor::Node&)> backprop) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients of all reachable
// requires_grad tensors are accumulated into their .grad() buffers
// (cleared first). Fan-out accumulates, so residual connections sum.
inline void backward(const Tensor& loss) {
  require(loss.numel() == 1, "backward() requires a scalar loss, got " +
                                 shape_str(loss.shape()));
  using NodeP = std::shared_ptr<Tensor::Node>;
  // Iterative topological sort over the recorded graph.
  std::vector<NodeP> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<NodeP, size_t>> stack;
  stack.push_back({loss.node(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeP p = node->parents[idx++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto& n : order) n->grad.assign(n->data.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) + b.at(i);
  auto pa = a.node(), pb = b.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa, pb},
                                  [pa, pb](Tensor::Node& self) {
                                    if (pa->requires_grad) {
                                      pa->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pa->grad[i] += self.grad[i];
                                    }
                                    if (pb->requires_grad) {
                                      pb->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pb->grad[i] += self.grad[i];
                                    }
                                  }));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) - b.at(i);
  auto pa = a.node(), pb = b.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa, pb},
                                  [pa, pb](Tensor::Node& self) {
                                    if (pa->requires_grad) {
                                      pa->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pa->grad[i] += self.grad[i];
                                    }
                                    if (pb->requires_grad) {
                                      pb->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pb->grad[i] -= self.grad[i];
                                    }
                                  }));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) * b.at(i);
  auto pa = a.node(), pb = b.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa, pb},
                                  [pa, pb](Tensor::Node& self) {
                                    if (pa->requires_grad) {
                                      pa->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pa->grad[i] += self.grad[i] * pb->data[i];
                                    }
                                    if (pb->requires_grad) {
                                      pb->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pb->grad[i] += self.grad[i] * pa->data[i];
                                    }
                                  }));
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) / b.at(i);
  auto pa = a.node(), pb = b.node();
  return Tensor(detail::make_node(
      a.shape(), std::move(out), {pa, pb}, [pa, pb](Tensor::Node& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] / pb->data[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] -= self.grad[i] * pa->data[i] / (pb->data[i] * pb->data[i]);
        }
      }));
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) * c;
  auto pa = a.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa},
                                  [pa, c](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    for (size_t i = 0; i < self.grad.size(); ++i)
                                      pa->grad[i] += self.grad[i] * c;
                                  }));
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) + c;
  auto pa = a.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa},
                                  [pa](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    for (size_t i = 0; i < self.grad.size(); ++i)
                                      pa->grad[i] += self.grad[i];
                                  }));
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) > 0 ? a.at(i) : 0.0;
  auto pa = a.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa},
                                  [pa](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    for (size_t i = 0; i < self.grad.size(); ++i)
                                      if (pa->data[i] > 0) pa->grad[i] += self.grad[i];
                                  }));
}

// Natural log with inputs clamped at `floor` so log of a vanishing
// probability stays finite.
inline Tensor log_clamped(const Tensor& a, double floor = 1e-12) {
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = std::log(std::max(a.at(i), floor));
  auto pa = a.node();
  return Tensor(detail::make_node(
      a.shape(), std::move(out), {pa}, [pa, floor](Tensor::Node& self) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (pa->data[i] > floor) pa->grad[i] += self.grad[i] / pa->data[i];
      }));
}

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (long long i = 0; i < a.numel(); ++i) s += a.at(i);
  auto pa = a.node();
  return Tensor(detail::make_node({1}, {s}, {pa}, [pa](Tensor::Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[0];
  }));
}

// Single element -> scalar tensor (flat row-major index).
inline Tensor pick(const Tensor& a, long long idx) {
  require(idx >= 0 && idx < a.numel(), "pick: index out of range");
  auto pa = a.node();
  return Tensor(detail::make_node({1}, {a.at(idx)}, {pa},
                                  [pa, idx](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    pa->grad[idx] += self.grad[0];
                                  }));
}

// Free relabeling of the same row-major buffer.
inline Tensor reshape(const Tensor& a, const Shape& shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data());
  auto pa = a.node();
  return Tensor(detail::make_node(shape, std::move(out), {pa},
                                  [pa](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    for (size_t i = 0; i < self.grad.size(); ++i)
                                      pa->grad[i] += self.grad[i];
                                  }));
}

// ---------------------------------------------------------------------------
// Matrix primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: rank-2 operands required, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out((size_t)m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < m; ++i) {
    double* crow = out.data() + (size_t)i * n;
    const double* arow = A + (size_t)i * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = B + (size_t)kk * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  auto pa = a.node(), pb = b.node();
  return Tensor(detail::make_node(
      {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Tensor::Node& self) {
        const double* G = self.grad.data();
        if (pa->requires_grad) {  // dA = G * B^T
          pa->ensure_grad();
          const double* B = pb->data.data();
          for (int i = 0; i < m; ++i) {
            const double* grow = G + (size_t)i * n;
            double* darow = pa->grad.data() + (size_t)i * k;
            for (int kk = 0; kk < k; ++kk) {
              const double* brow = B + (size_t)kk * n;
              double s = 0;
              for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
              darow[kk] += s;
            }
          }
        }
        if (pb->requires_grad) {  // dB = A^T * G
          pb->ensure_grad();
          const double* A = pa->data.data();
          for (int i = 0; i < m; ++i) {
            const double* grow = G + (size_t)i * n;
            const double* arow = A + (size_t)i * k;
            for (int kk = 0; kk < k; ++kk) {
              const double av = arow[kk];
              double* dbrow = pb->grad.data() + (size_t)kk * n;
              for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
            }
          }
        }
      }));
}

inline Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 tensor required");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out((size_t)m * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[(size_t)j * m + i] = a.at2(i, j);
  auto pa = a.node();
  return Tensor(detail::make_node({n, m}, std::move(out), {pa},
                                  [pa, m, n](Tensor::Node& self) {
                                    pa->ensure_grad();
                                    for (int i = 0; i < m; ++i)
                                      for (int j = 0; j < n; ++j)
                                        pa->grad[(size_t)i * n + j] +=
                                            self.grad[(size_t)j * m + i];
                                  }));
}

// Bias over the trailing dimension; leading dims broadcast. The only
// broadcast the library permits.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require(bias.rank() == 1, "add_bias: bias must be rank-1");
  const int d = bias.dim(0);
  require(a.dim(a.rank() - 1) == d, "add_bias: trailing dim " +
                                        shape_str(a.shape()) + " vs bias " +
                                        shape_str(bias.shape()));
  std::vector<double> out(a.numel());
  for (long long i = 0; i < a.numel(); ++i) out[i] = a.at(i) + bias.at(i % d);
  auto pa = a.node(), pb = bias.node();
  return Tensor(detail::make_node(a.shape(), std::move(out), {pa, pb},
                                  [pa, pb, d](Tensor::Node& self) {
                                    if (pa->requires_grad) {
                                      pa->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pa->grad[i] += self.grad[i];
                                    }
                                    if (pb->requires_grad) {
                                      pb->ensure_grad();
                                      for (size_t i = 0; i < self.grad.size(); ++i)
                                        pb->grad[i % d] += self.grad[i];
                                    }
                                  }));
}

// ---------------------------------------------------------------------------
// Axis ops: softmax, concat, slice
// ---------------------------------------------------------------------------

// Numerically stable softmax along `axis`; every slice along the axis sums
// to one.
inline Tensor softmax(const Tensor& x, int axis) {
  require(axis >= 0 && axis < x.rank(),
          "softmax: axis " + std::to_string(axis) + " out of range for " +
              shape_str(x.shape()));
  const auto& sh = x.shape();
  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= sh[i];
  const long long n = sh[axis];
  std::vector<double> out(x.numel());
  const double* in = x.data().data();
  for (long long o = 0; o < outer; ++o)
    for (long long c = 0; c < inner; ++c) {
      const long long base = o * n * inner + c;
      double mx = -1e300;
      for (long long i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      double z = 0;
      for (long long i = 0; i < n; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (long long i = 0; i < n; ++i) out[base + i * inner] /= z;
      auto& stats = invariant_stats();
      if (stats.enabled) {
        double s = 0;
        for (long long i = 0; i < n; ++i) s += out[base + i * inner];
        ++stats.rows_checked;
        if (std::abs(s - 1.0) > 1e-9) ++stats.violations;
      }
    }
  auto pa = x.node();
  return Tensor(detail::make_node(
      sh, std::move(out), {pa}, [pa, outer, inner, n](Tensor::Node& self) {
        pa->ensure_grad();
        const double* s = self.data.data();
        const double* g = self.grad.data();
        for (long long o = 0; o < outer; ++o)
          for (long long c = 0; c < inner; ++c) {
            const long long base = o * n * inner + c;
            double dot = 0;
            for (long long i = 0; i < n; ++i)
              dot += g[base + i * inner] * s[base + i * inner];
            for (long long i = 0; i < n; ++i)
              pa->grad[base + i * inner] +=
                  s[base + i * inner] * (g[base + i * inner] - dot);
          }
      }));
}

namespace detail {
inline void axis_strides(const Shape& sh, int axis, long long& outer,
                         long long& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
}
}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const auto& s0 = parts[0].shape();
  require(axis >= 0 && axis < (int)s0.size(), "concat: axis out of range");
  long long total_axis = 0;
  for (const auto& p : parts) {
    require(p.rank() == (int)s0.size(), "concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      require(i == axis || p.dim(i) == s0[i],
              "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                  shape_str(s0));
    total_axis += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = (int)total_axis;
  long long outer, inner;
  detail::axis_strides(s0, axis, outer, inner);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<long long> offsets;  // running axis offset per part
  long long off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const long long na = p.dim(axis);
    const double* in = p.data().data();
    for (long long o = 0; o < outer; ++o)
      std::copy(in + o * na * inner, in + (o + 1) * na * inner,
                out.begin() + (o * total_axis + off) * inner);
    off += na;
  }
  std::vector<std::shared_ptr<Tensor::Node>> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  std::vector<long long> sizes;
  for (const auto& p : parts) sizes.push_back(p.dim(axis));
  return Tensor(detail::make_node(
      out_shape, std::move(out), ps,
      [ps, offsets, sizes, outer, inner, total_axis](Tensor::Node& self) {
        for (size_t k = 0; k < ps.size(); ++k) {
          if (!ps[k]->requires_grad) continue;
          ps[k]->ensure_grad();
          const long long na = sizes[k], off = offsets[k];
          for (long long o = 0; o < outer; ++o) {
            const double* g = self.grad.data() + (o * total_axis + off) * inner;
            double* dst = ps[k]->grad.data() + o * na * inner;
            for (long long i = 0; i < na * inner; ++i) dst[i] += g[i];
          }
        }
      }));
}

// Contiguous sub-range [start, start+len) along `axis`.
inline Tensor slice(const Tensor& a, int axis, int start, int len) {
  require(axis >= 0 && axis < a.rank(), "slice: axis out of range");
  require(start >= 0 && len >= 1 && start + len <= a.dim(axis),
          "slice: range [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of bounds for " +
              shape_str(a.shape()));
  long long outer, inner;
  detail::axis_strides(a.shape(), axis, outer, inner);
  const long long na = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out((size_t)(outer * len * inner));
  const double* in = a.data().data();
  for (long long o = 0; o < outer; ++o)
    std::copy(in + (o * na + start) * inner, in + (o * na + start + len) * inner,
              out.begin() + o * len * inner);
  auto pa = a.node();
  return Tensor(detail::make_node(
      out_shape, std::move(out), {pa},
      [pa, outer, inner, na, start, len](Tensor::Node& self) {
        pa->ensure_grad();
        for (long long o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * len * inner;
          double* dst = pa->grad.data() + (o * na + start) * inner;
          for (long long i = 0; i < (long long)len * inner; ++i) dst[i] += g[i];
        }
      }));
}

// Per-row layer normalization over the trailing dimension of a rank-2
// tensor, with learnable gain and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-6) {
  require(x.rank() == 2, "layer_norm: rank-2 input required");
  const int n = x.dim(0), d = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 &&
              beta.dim(0) == d,
          "layer_norm: gamma/beta must be rank-1 of width " + std::to_string(d));
  std::vector<double> out((size_t)n * d);
  std::vector<double> mean(n), inv_std(n);
  const double* in = x.data().data();
  for (int i = 0; i < n; ++i) {
    const double* row = in + (size_t)i * d;
    double m = 0;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var /= d;
    mean[i] = m;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j)
      out[(size_t)i * d + j] = (row[j] - m) * inv_std[i] * gamma.at(j) + beta.at(j);
  }
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return Tensor(detail::make_node(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, n, d, mean, inv_std](Tensor::Node& self) {
        const double* g = self.grad.data();
        const double* in = px->data.data();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* row = in + (size_t)i * d;
          const double* grow = g + (size_t)i * d;
          const double is = inv_std[i], m = mean[i];
          if (pg->requires_grad || pb->requires_grad) {
            for (int j = 0; j < d; ++j) {
              const double xhat = (row[j] - m) * is;
              if (pg->requires_grad) pg->grad[j] += grow[j] * xhat;
              if (pb->requires_grad) pb->grad[j] += grow[j];
            }
          }
          if (px->requires_grad) {
            // dL/dx = is/d * (d*gy - sum(gy) - xhat * sum(gy*xhat)),
            // gy = g * gamma
            double sum_gy = 0, sum_gy_xhat = 0;
            for (int j = 0; j < d; ++j) {
              const double gy = grow[j] * pg->data[j];
              const double xhat = (row[j] - m) * is;
              sum_gy += gy;
              sum_gy_xhat += gy * xhat;
            }
            double* dx = px->grad.data() + (size_t)i * d;
            for (int j = 0; j < d; ++j) {
              const double gy = grow[j] * pg->data[j];
              const double xhat = (row[j] - m) * is;
              dx[j] += is * (gy - (sum_gy + xhat * sum_gy_xhat) / d);
            }
          }
        }
      }));
}

// ---------------------------------------------------------------------------
// Spatial primitives (rank-3 tensors laid out H x W x C)
// ---------------------------------------------------------------------------

// 3x3-style convolution: input [H,W,Cin], weight [k,k,Cin,Cout], bias [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride, int pad) {
  require(x.rank() == 3, "conv2d: input must be rank-3 HxWxC");
  require(w.rank() == 4, "conv2d: weight must be rank-4 kxkxCinxCout");
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int k = w.dim(0), Cout = w.dim(3);
  require(w.dim(1) == k && w.dim(2) == Cin,
          "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
              shape_str(x.shape()));
  require(b.rank() == 1 && b.dim(0) == Cout, "conv2d: bias width mismatch");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
  std::vector<double> out((size_t)Ho * Wo * Cout);
  const double* in = x.data().data();
  const double* wt = w.data().data();
  for (int y = 0; y < Ho; ++y)
    for (int xo = 0; xo < Wo; ++xo) {
      double* op = out.data() + ((size_t)y * Wo + xo) * Cout;
      for (int c = 0; c < Cout; ++c) op[c] = b.at(c);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = y * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = xo * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const double* ip = in + ((size_t)iy * W + ix) * Cin;
          const double* wp = wt + ((size_t)(ky * k + kx)) * Cin * Cout;
          for (int ci = 0; ci < Cin; ++ci) {
            const double v = ip[ci];
            const double* wrow = wp + (size_t)ci * Cout;
            for (int c = 0; c < Cout; ++c) op[c] += v * wrow[c];
          }
        }
      }
    }
  auto px = x.node(), pw = w.node(), pb = b.node();
  return Tensor(detail::make_node(
      {Ho, Wo, Cout}, std::move(out), {px, pw, pb},
      [px, pw, pb, H, W, Cin, k, Cout, Ho, Wo, stride, pad](Tensor::Node& self) {
        const double* g = self.grad.data();
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int y = 0; y < Ho; ++y)
            for (int xo = 0; xo < Wo; ++xo) {
              const double* gp = g + ((size_t)y * Wo + xo) * Cout;
              for (int c = 0; c < Cout; ++c) pb->grad[c] += gp[c];
            }
        }
        if (!px->requires_grad && !pw->requires_grad) return;
        const double* in = px->data.data();
        const double* wt = pw->data.data();
        for (int y = 0; y < Ho; ++y)
          for (int xo = 0; xo < Wo; ++xo) {
            const double* gp = g + ((size_t)y * Wo + xo) * Cout;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = xo * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                const size_t ioff = ((size_t)iy * W + ix) * Cin;
                const size_t woff = ((size_t)(ky * k + kx)) * Cin * Cout;
                for (int ci = 0; ci < Cin; ++ci) {
                  const double* wrow = wt + woff + (size_t)ci * Cout;
                  if (px->requires_grad) {
                    double s = 0;
                    for (int c = 0; c < Cout; ++c) s += wrow[c] * gp[c];
                    px->grad[ioff + ci] += s;
                  }
                  if (pw->requires_grad) {
                    const double v = in[ioff + ci];
                    double* dwrow = pw->grad.data() + woff + (size_t)ci * Cout;
                    for (int c = 0; c < Cout; ++c) dwrow[c] += v * gp[c];
                  }
                }
              }
            }
          }
      }));
}

// Bilinear 2x upsampling of [H,W,C] (half-pixel centers).
inline Tensor upsample_bilinear2x(const Tensor& x) {
  require(x.rank() == 3, "upsample: input must be rank-3 HxWxC");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int Ho = 2 * H, Wo = 2 * W;
  // Precompute the 1-D source index/weight pairs.
  std::vector<int> y0(Ho), y1(Ho), x0(Wo), x1(Wo);
  std::vector<double> wy(Ho), wx(Wo);
  auto fill = [](int n_out, int n_in, std::vector<int>& i0, std::vector<int>& i1,
                 std::vector<double>& w) {
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) / 2.0 - 0.5;
      src = std::max(0.0, std::min(src, (double)(n_in - 1)));
      const int lo = (int)std::floor(src);
      i0[o] = lo;
      i1[o] = std::min(lo + 1, n_in - 1);
      w[o] = src - lo;  // weight of i1
    }
  };
  fill(Ho, H, y0, y1, wy);
  fill(Wo, W, x0, x1, wx);
  std::vector<double> out((size_t)Ho * Wo * C);
  const double* in = x.data().data();
  for (int y = 0; y < Ho; ++y)
    for (int xo = 0; xo < Wo; ++xo) {
      const double w11 = wy[y] * wx[xo], w10 = wy[y] * (1 - wx[xo]);
      const double w01 = (1 - wy[y]) * wx[xo], w00 = (1 - wy[y]) * (1 - wx[xo]);
      const double* p00 = in + ((size_t)y0[y] * W + x0[xo]) * C;
      const double* p01 = in + ((size_t)y0[y] * W + x1[xo]) * C;
      const double* p10 = in + ((size_t)y1[y] * W + x0[xo]) * C;
      const double* p11 = in + ((size_t)y1[y] * W + x1[xo]) * C;
      double* op = out.data() + ((size_t)y * Wo + xo) * C;
      for (int c = 0; c < C; ++c)
        op[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  auto px = x.node();
  return Tensor(detail::make_node(
      {Ho, Wo, C}, std::move(out), {px},
      [px, H, W, C, Ho, Wo, y0, y1, x0, x1, wy, wx](Tensor::Node& self) {
        px->ensure_grad();
        const double* g = self.grad.data();
        for (int y = 0; y < Ho; ++y)
          for (int xo = 0; xo < Wo; ++xo) {
            const double w11 = wy[y] * wx[xo], w10 = wy[y] * (1 - wx[xo]);
            const double w01 = (1 - wy[y]) * wx[xo], w00 = (1 - wy[y]) * (1 - wx[xo]);
            const double* gp = g + ((size_t)y * Wo + xo) * C;
            double* d00 = px->grad.data() + ((size_t)y0[y] * W + x0[xo]) * C;
            double* d01 = px->grad.data() + ((size_t)y0[y] * W + x1[xo]) * C;
            double* d10 = px->grad.data() + ((size_t)y1[y] * W + x0[xo]) * C;
            double* d11 = px->grad.data() + ((size_t)y1[y] * W + x1[xo]) * C;
            for (int c = 0; c < C; ++c) {
              d00[c] += w00 * gp[c];
              d01[c] += w01 * gp[c];
              d10[c] += w10 * gp[c];
              d11[c] += w11 * gp[c];
            }
          }
      }));
}

}  // namespace svis
