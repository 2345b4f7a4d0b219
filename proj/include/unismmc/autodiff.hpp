// Minimal tape-based reverse-mode differentiation.
//
// A Graph records every operation applied during one forward pass. Nodes are
// appended in evaluation order, so the tape is already topologically sorted
// and backward() walks it once in reverse. Graphs are single-use: build one
// per minibatch, call backward() at most once, then drop it.
//
// Usage:
//   Graph g;
//   Var w = g.parameter(weight);          // gradient lands in weight.grad
//   Var x = g.constant(features);
//   Var loss = sum(relu(matmul(x, w)));
//   g.backward(loss);
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unismmc/errors.hpp"
#include "unismmc/tensor.hpp"

namespace unismmc {

/// Norm floor below which a row cannot be normalized.
inline constexpr double kNormFloor = 1e-12;

/// A trainable tensor that outlives individual graphs. backward() adds into
/// `grad`, so several graphs can accumulate before an optimizer step.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Set once any graph has propagated a gradient into this parameter since
  /// the last zero_grad(). Optimizers skip parameters without one.
  bool has_grad = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    grad = Tensor(value.rows(), value.cols());
    has_grad = false;
  }
};

enum class Op {
  leaf,
  parameter,
  constant,
  matmul,
  add,
  mul,
  scale,
  relu,
  sum,
  concat,
  log_softmax,
  normalize_rows,
  transpose,
  detach,
  select_rows,
  logsumexp,
};

class Graph;

/// Handle to one node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  Shape shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Value that never receives a gradient.
  Var constant(Tensor v) { return push(Op::constant, {}, std::move(v), false, {}); }

  /// Free input; its gradient is readable through Var::grad() after backward.
  Var leaf(Tensor v, bool requires_grad = true) {
    return push(Op::leaf, {}, std::move(v), requires_grad, {});
  }

  /// Binds a Parameter. Binding the same parameter twice returns the same node.
  Var parameter(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
    Var v = push(Op::parameter, {}, p.value, true, {});
    nodes_[v.id()].param = &p;
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Appends an op node. requires_grad is inherited from the inputs.
  Var emit(Op op, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    return push(op, std::move(inputs), std::move(value), rg, std::move(fn));
  }

  void backward(Var loss) {
    check_owner(loss);
    if (backward_done_) throw StateError("backward() already ran on this graph");
    const Node& out = nodes_[loss.id()];
    if (!out.value.is_scalar())
      throw ContractError("backward() needs a scalar loss, got " + to_string(out.value.shape()));
    backward_done_ = true;
    if (!out.requires_grad) return;
    nodes_[loss.id()].grad.fill(1.0);
    std::vector<char> reached(loss.id() + 1, 0);
    reached[loss.id()] = 1;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !reached[i]) continue;
      for (auto in : n.inputs) reached[in] = 1;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad.data();
        const auto& ng = n.grad.data();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += ng[k];
        n.param->has_grad = true;
      }
    }
  }

  /// Appends a node that records `inputs` for bookkeeping but never
  /// propagates a gradient to them.
  Var emit_barrier(Op op, std::vector<std::size_t> inputs, Tensor value) {
    return push(op, std::move(inputs), std::move(value), false, {});
  }

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }

  /// Gradient buffer of an input, for use inside backward rules. Returns
  /// nullptr when that input does not need a gradient.
  Tensor* grad_sink(std::size_t id) {
    Node& n = nodes_.at(id);
    return n.requires_grad ? &n.grad : nullptr;
  }

  void check_owner(const Var& v) const {
    if (&v.graph() != this) throw ContractError("variable belongs to a different graph");
  }

 private:
  Var push(Op op, std::vector<std::size_t> inputs, Tensor value, bool rg, BackwardFn fn) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    if (rg) n.grad = Tensor(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses: value() references survive growth
  std::unordered_map<const Parameter*, std::size_t> bound_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Tensor& Var::grad() const { return graph_->grad(id_); }
inline bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

namespace detail {

inline Graph& same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

// out += a * b  (a: m x k, b: k x n)
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a * b^T  (a: m x n, b: k x n, out: m x k)
inline void gemm_bt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data().data() + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b.data().data() + j * n;
      double s = 0.0;
      for (std::size_t p = 0; p < n; ++p) s += arow[p] * brow[p];
      out(i, j) += s;
    }
  }
}

// out += a^T * b  (a: m x k, b: m x n, out: k x n)
inline void gemm_at_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* orow = out.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree " + to_string(av.shape()) + " . " +
                         to_string(bv.shape()));
  Tensor out(av.rows(), bv.cols());
  detail::gemm_acc(av, bv, out);
  return g.emit(Op::matmul, {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    const std::size_t ia = n.inputs[0], ib = n.inputs[1];
    if (Tensor* ga = g.grad_sink(ia)) detail::gemm_bt_acc(n.grad, g.value(ib), *ga);
    if (Tensor* gb = g.grad_sink(ib)) detail::gemm_at_acc(g.value(ia), n.grad, *gb);
  });
}

/// Elementwise sum. `b` may also be a 1 x cols bias row added to every row of `a`.
inline Var add(const Var& a, const Var& b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bias = av.shape() != bv.shape() && bv.rows() == 1 && bv.cols() == av.cols();
  if (!bias) detail::require_same_shape("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias ? bv[i % bv.cols()] : bv[i];
  return g.emit(Op::add, {a.id(), b.id()}, std::move(out), [bias](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    if (Tensor* ga = g.grad_sink(n.inputs[0]))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += n.grad[i];
    if (Tensor* gb = g.grad_sink(n.inputs[1])) {
      if (bias) {
        for (std::size_t r = 0; r < n.grad.rows(); ++r)
          for (std::size_t c = 0; c < n.grad.cols(); ++c) (*gb)[c] += n.grad(r, c);
      } else {
        for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += n.grad[i];
      }
    }
  });
}

/// Elementwise (Hadamard) product of equally shaped tensors.
inline Var mul(const Var& a, const Var& b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.emit(Op::mul, {a.id(), b.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    const std::size_t ia = n.inputs[0], ib = n.inputs[1];
    if (Tensor* ga = g.grad_sink(ia)) {
      const Tensor& bv = g.value(ib);
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += n.grad[i] * bv[i];
    }
    if (Tensor* gb = g.grad_sink(ib)) {
      const Tensor& av = g.value(ia);
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += n.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.graph().emit(Op::scale, {a.id()}, std::move(out), [c](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    if (Tensor* ga = g.grad_sink(n.inputs[0]))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += c * n.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.graph().emit(Op::relu, {a.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    if (Tensor* ga = g.grad_sink(n.inputs[0])) {
      const Tensor& x = g.value(n.inputs[0]);
      for (std::size_t i = 0; i < ga->size(); ++i)
        if (x[i] > 0.0) (*ga)[i] += n.grad[i];
    }
  });
}

/// Sum over every element (no axis), over rows (axis 0 -> 1 x cols) or over
/// columns (axis 1 -> rows x 1).
inline Var sum(const Var& a, std::optional<int> axis = std::nullopt) {
  const Tensor& x = a.value();
  Tensor out;
  if (!axis) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    out = Tensor::scalar(s);
  } else if (*axis == 0) {
    out = Tensor(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  } else if (*axis == 1) {
    out = Tensor(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
      out[r] = s;
    }
  } else {
    throw DimensionError("sum: axis must be 0 or 1, got " + std::to_string(*axis));
  }
  return a.graph().emit(Op::sum, {a.id()}, std::move(out), [axis](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    Tensor* ga = g.grad_sink(n.inputs[0]);
    if (!ga) return;
    const std::size_t cols = ga->cols();
    for (std::size_t i = 0; i < ga->size(); ++i) {
      const std::size_t r = i / cols, c = i % cols;
      (*ga)[i] += !axis ? n.grad[0] : (*axis == 0 ? n.grad[c] : n.grad[r]);
    }
  });
}

/// Stacks tensors vertically (axis 0) or side by side (axis 1).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  Graph& g = parts.front().graph();
  std::vector<std::size_t> ids;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    g.check_owner(p);
    ids.push_back(p.id());
    const Tensor& v = p.value();
    if (axis == 1) {
      if (ids.size() > 1 && v.rows() != rows)
        throw DimensionError("concat(axis=1): row counts differ " + std::to_string(rows) + " vs " +
                             std::to_string(v.rows()));
      rows = v.rows();
      cols += v.cols();
    } else {
      if (ids.size() > 1 && v.cols() != cols)
        throw DimensionError("concat(axis=0): column counts differ " + std::to_string(cols) +
                             " vs " + std::to_string(v.cols()));
      cols = v.cols();
      rows += v.rows();
    }
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 1)
          out(r, offset + c) = v(r, c);
        else
          out(offset + r, c) = v(r, c);
      }
    offset += axis == 1 ? v.cols() : v.rows();
  }
  return g.emit(Op::concat, ids, std::move(out), [axis](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    std::size_t offset = 0;
    for (std::size_t in : n.inputs) {
      const Shape s = g.value(in).shape();
      if (Tensor* gi = g.grad_sink(in)) {
        for (std::size_t r = 0; r < s[0]; ++r)
          for (std::size_t c = 0; c < s[1]; ++c)
            (*gi)(r, c) += axis == 1 ? n.grad(r, offset + c) : n.grad(offset + r, c);
      }
      offset += axis == 1 ? s[1] : s[0];
    }
  });
}

/// Row-wise log-softmax with max subtraction.
inline Var log_softmax(const Var& a) {
  const Tensor& x = a.value();
  if (x.cols() < 2) throw DimensionError("log_softmax: needs at least 2 classes, got " + to_string(x.shape()));
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
  }
  return a.graph().emit(Op::log_softmax, {a.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    Tensor* ga = g.grad_sink(n.inputs[0]);
    if (!ga) return;
    const Tensor& y = n.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += n.grad(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += n.grad(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

/// Divides each row by its Euclidean norm. Rows with norm <= kNormFloor raise
/// DegenerateInputError carrying the row index.
inline Var normalize_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  Tensor norms(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v * v;
    const double nr = std::sqrt(s);
    if (!(nr > kNormFloor))
      throw DegenerateInputError(r, "cosine similarity: row " + std::to_string(r) +
                                        " has near-zero norm (" + std::to_string(nr) + ")");
    norms[r] = nr;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / nr;
  }
  return a.graph().emit(Op::normalize_rows, {a.id()}, std::move(out),
                        [norms = std::move(norms)](Graph& g, std::size_t self) {
                          const auto& n = g.node(self);
                          Tensor* ga = g.grad_sink(n.inputs[0]);
                          if (!ga) return;
                          const Tensor& y = n.value;
                          for (std::size_t r = 0; r < y.rows(); ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * n.grad(r, c);
                            for (std::size_t c = 0; c < y.cols(); ++c)
                              (*ga)(r, c) += (n.grad(r, c) - y(r, c) * dot) / norms[r];
                          }
                        });
}

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  return a.graph().emit(Op::transpose, {a.id()}, std::move(out), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    if (Tensor* ga = g.grad_sink(n.inputs[0]))
      for (std::size_t r = 0; r < ga->rows(); ++r)
        for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += n.grad(c, r);
  });
}

/// Stop-gradient: same values, and nothing upstream receives a gradient
/// through this node.
inline Var detach(const Var& a) {
  return a.graph().emit_barrier(Op::detach, {a.id()}, a.value());
}

/// Gathers rows by index (repeats allowed); backward scatter-adds.
inline Var select_rows(const Var& a, const std::vector<std::size_t>& index) {
  const Tensor& x = a.value();
  Tensor out(index.size(), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows())
      throw DimensionError("select_rows: index " + std::to_string(index[i]) + " out of range for " +
                           to_string(x.shape()));
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(index[i], c);
  }
  return a.graph().emit(Op::select_rows, {a.id()}, std::move(out),
                        [index](Graph& g, std::size_t self) {
                          const auto& n = g.node(self);
                          Tensor* ga = g.grad_sink(n.inputs[0]);
                          if (!ga) return;
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(index[i], c) += n.grad(i, c);
                        });
}

/// log(sum(exp(a))) over all elements, as a 1 x 1 tensor.
inline Var logsumexp(const Var& a) {
  const Tensor& x = a.value();
  if (x.size() == 0) throw DimensionError("logsumexp: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x.data()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  return a.graph().emit(Op::logsumexp, {a.id()}, Tensor::scalar(lse), [](Graph& g, std::size_t self) {
    const auto& n = g.node(self);
    Tensor* ga = g.grad_sink(n.inputs[0]);
    if (!ga) return;
    const Tensor& x = g.value(n.inputs[0]);
    const double lse = n.value[0];
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += n.grad[0] * std::exp(x[i] - lse);
  });
}

/// Row-wise cosine similarity of two n x d tensors, as n x 1.
inline Var cosine_similarity(const Var& a, const Var& b) {
  detail::require_same_shape("cosine_similarity", a.value(), b.value());
  if (a.value().cols() == 0) throw DimensionError("cosine_similarity: zero-width rows");
  return sum(mul(normalize_rows(a), normalize_rows(b)), 1);
}

/// Differentiable a - b.
inline Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

}  // namespace unismmc
