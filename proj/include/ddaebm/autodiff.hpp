#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// Every backward rule is written in terms of the same differentiable ops, so
// gradients computed with create_graph=true are themselves differentiable.
// That is what the gradient penalty on the energy needs (a gradient of a
// gradient norm with respect to parameters).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ddaebm::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Var;

template <typename T>
struct Node {
  Matrix<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Output gradient -> one gradient per parent. A null Var means "no contribution".
  std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  explicit NoGradGuard(bool disable) : previous_(detail::grad_enabled) {
    if (disable) detail::grad_enabled = false;
  }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Matrix<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var leaf(Matrix<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  T item() const {
    if (rows() != 1 || cols() != 1) throw std::logic_error("item() on a non-scalar Var");
    return node_->value(0, 0);
  }
  // Same value, cut out of the graph.
  Var detach() const { return constant(node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T, typename Backward>
Var<T> make_op(Matrix<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (ad::grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& in : inputs) n->parents.push_back(in.node());
      n->backward = std::forward<Backward>(backward);
    }
  }
  return Var<T>(std::move(n));
}

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

}  // namespace detail

// ---- primitive ops ---------------------------------------------------------

template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> sum_rows(const Var<T>& a);
template <typename T> Var<T> sum_cols(const Var<T>& a);
template <typename T> Var<T> expand_rows(const Var<T>& row, Eigen::Index n);
template <typename T> Var<T> expand_cols(const Var<T>& col, Eigen::Index n);
template <typename T> Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index width);
template <typename T> Var<T> pad_cols(const Var<T>& a, Eigen::Index start, Eigen::Index total);

template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> matmul_tn(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.rows(), "matmul");
  Matrix<T> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? matmul_nt(g, b) : Var<T>(),
                               b.requires_grad() ? matmul_tn(a, g) : Var<T>()};
  });
}

// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.cols(), "matmul_nt");
  Matrix<T> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? matmul(g, b) : Var<T>(),
                               b.requires_grad() ? matmul_tn(g, a) : Var<T>()};
  });
}

// a^T * b
template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows(), "matmul_tn");
  Matrix<T> out(a.cols(), b.cols());
  out.noalias() = a.value().transpose() * b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? matmul_nt(b, g) : Var<T>(),
                               b.requires_grad() ? matmul(a, g) : Var<T>()};
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  Matrix<T> out = a.value().transpose();
  return detail::make_op<T>(std::move(out), {a},
                            [](const Var<T>& g) { return std::vector<Var<T>>{transpose(g)}; });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix<T> out = a.value() + b.value();
  return detail::make_op<T>(std::move(out), {a, b},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Matrix<T> out = a.value() * c;
  return detail::make_op<T>(std::move(out), {a},
                            [c](const Var<T>& g) { return std::vector<Var<T>>{scale(g, c)}; });
}

template <typename T>
Var<T> operator-(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Matrix<T> out = a.value() - b.value();
  return detail::make_op<T>(std::move(out), {a, b},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g, -g}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Matrix<T> out = a.value().array() + c;
  return detail::make_op<T>(std::move(out), {a},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

// Elementwise product.
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{a.requires_grad() ? g * b : Var<T>(),
                               b.requires_grad() ? g * a : Var<T>()};
  });
}

// a (n x m) + row (1 x m), broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return detail::make_op<T>(std::move(out), {a, row}, [](const Var<T>& g) {
    return std::vector<Var<T>>{g, sum_rows(g)};
  });
}

// a (n x m) * row (1 x m), broadcast over rows.
template <typename T>
Var<T> mul_row(const Var<T>& a, const Var<T>& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "mul_row");
  Matrix<T> out = a.value().array().rowwise() * row.value().row(0).array();
  return detail::make_op<T>(std::move(out), {a, row}, [a, row](const Var<T>& g) {
    return std::vector<Var<T>>{mul_row(g, row),
                               row.requires_grad() ? sum_rows(g * a) : Var<T>()};
  });
}

// a (n x m) * col (n x 1), broadcast over columns.
template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  detail::check(col.cols() == 1 && col.rows() == a.rows(), "mul_col");
  Matrix<T> out = a.value().array().colwise() * col.value().col(0).array();
  return detail::make_op<T>(std::move(out), {a, col}, [a, col](const Var<T>& g) {
    return std::vector<Var<T>>{mul_col(g, col),
                               col.requires_grad() ? sum_cols(g * a) : Var<T>()};
  });
}

// a * s where s is a 1x1 Var.
template <typename T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
  detail::check(s.rows() == 1 && s.cols() == 1, "mul_scalar");
  Matrix<T> out = a.value() * s.value()(0, 0);
  return detail::make_op<T>(std::move(out), {a, s}, [a, s](const Var<T>& g) {
    Var<T> gs;
    if (s.requires_grad()) gs = sum_cols(sum_rows(g * a));
    return std::vector<Var<T>>{mul_scalar(g, s), gs};
  });
}

// Column sums: (n x m) -> (1 x m).
template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  Matrix<T> out = a.value().colwise().sum();
  const auto n = a.rows();
  return detail::make_op<T>(std::move(out), {a},
                            [n](const Var<T>& g) { return std::vector<Var<T>>{expand_rows(g, n)}; });
}

// Row sums: (n x m) -> (n x 1).
template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  Matrix<T> out = a.value().rowwise().sum();
  const auto m = a.cols();
  return detail::make_op<T>(std::move(out), {a},
                            [m](const Var<T>& g) { return std::vector<Var<T>>{expand_cols(g, m)}; });
}

template <typename T>
Var<T> expand_rows(const Var<T>& row, Eigen::Index n) {
  detail::check(row.rows() == 1, "expand_rows");
  Matrix<T> out = row.value().replicate(n, 1);
  return detail::make_op<T>(std::move(out), {row},
                            [](const Var<T>& g) { return std::vector<Var<T>>{sum_rows(g)}; });
}

template <typename T>
Var<T> expand_cols(const Var<T>& col, Eigen::Index m) {
  detail::check(col.cols() == 1, "expand_cols");
  Matrix<T> out = col.value().replicate(1, m);
  return detail::make_op<T>(std::move(out), {col},
                            [](const Var<T>& g) { return std::vector<Var<T>>{sum_cols(g)}; });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  return sum_cols(sum_rows(a));
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.rows() * a.cols()));
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Matrix<T> out = a.value().array().exp();
  return detail::make_op<T>(std::move(out), {a},
                            [a](const Var<T>& g) { return std::vector<Var<T>>{g * exp(a)}; });
}

template <typename T>
Var<T> pow(const Var<T>& a, T p) {
  Matrix<T> out = a.value().array().pow(p);
  return detail::make_op<T>(std::move(out), {a}, [a, p](const Var<T>& g) {
    return std::vector<Var<T>>{g * scale(pow(a, p - T(1)), p)};
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Matrix<T> out = a.value().array().log();
  return detail::make_op<T>(std::move(out), {a},
                            [a](const Var<T>& g) { return std::vector<Var<T>>{g * pow(a, T(-1))}; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Matrix<T> out = a.value().array().square();
  return detail::make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{g * scale(a, T(2))};
  });
}

// Gradient passes only where lo <= a <= hi.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Matrix<T> out = a.value().cwiseMax(lo).cwiseMin(hi);
  Matrix<T> mask = ((a.value().array() >= lo) && (a.value().array() <= hi)).template cast<T>();
  auto m = Var<T>::constant(std::move(mask));
  return detail::make_op<T>(std::move(out), {a},
                            [m](const Var<T>& g) { return std::vector<Var<T>>{g * m}; });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows(), "concat_cols");
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto wa = a.cols();
  const auto wb = b.cols();
  return detail::make_op<T>(std::move(out), {a, b}, [wa, wb](const Var<T>& g) {
    return std::vector<Var<T>>{slice_cols(g, 0, wa), slice_cols(g, wa, wb)};
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index width) {
  detail::check(start >= 0 && start + width <= a.cols(), "slice_cols");
  Matrix<T> out = a.value().middleCols(start, width);
  const auto total = a.cols();
  return detail::make_op<T>(std::move(out), {a}, [start, total](const Var<T>& g) {
    return std::vector<Var<T>>{pad_cols(g, start, total)};
  });
}

// Places a into columns [start, start + a.cols()) of a zero matrix with `total` columns.
template <typename T>
Var<T> pad_cols(const Var<T>& a, Eigen::Index start, Eigen::Index total) {
  detail::check(start >= 0 && start + a.cols() <= total, "pad_cols");
  Matrix<T> out = Matrix<T>::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const auto width = a.cols();
  return detail::make_op<T>(std::move(out), {a}, [start, width](const Var<T>& g) {
    return std::vector<Var<T>>{slice_cols(g, start, width)};
  });
}

// x W + b with b a (1 x m) row.
template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::check(x.cols() == w.rows(), "affine");
  detail::check(b.rows() == 1 && b.cols() == w.cols(), "affine bias");
  Matrix<T> out(x.rows(), w.cols());
  out.rowwise() = b.value().row(0);
  out.noalias() += x.value() * w.value();
  return detail::make_op<T>(std::move(out), {x, w, b}, [x, w, b](const Var<T>& g) {
    return std::vector<Var<T>>{x.requires_grad() ? matmul_nt(g, w) : Var<T>(),
                               w.requires_grad() ? matmul_tn(x, g) : Var<T>(),
                               b.requires_grad() ? sum_rows(g) : Var<T>()};
  });
}

// g where mask == 0, slope * g where mask == 1. mask is a constant 0/1 matrix.
template <typename T>
Var<T> masked_scale(const Var<T>& g, const Var<T>& mask, const Var<T>& slope) {
  detail::check(g.rows() == mask.rows() && g.cols() == mask.cols(), "masked_scale");
  const T s = slope.value()(0, 0);
  Matrix<T> out = (g.value().array() * (T(1) + mask.value().array() * (s - T(1)))).matrix();
  return detail::make_op<T>(std::move(out), {g, slope}, [g, mask, slope](const Var<T>& gg) {
    return std::vector<Var<T>>{masked_scale(gg, mask, slope),
                               slope.requires_grad() ? sum(gg * g * mask) : Var<T>()};
  });
}

// y = x where x > 0, slope * x elsewhere; slope is a learnable 1x1 Var.
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  detail::check(slope.rows() == 1 && slope.cols() == 1, "prelu");
  const T s = slope.value()(0, 0);
  Matrix<T> out = x.value().unaryExpr([s](T v) { return v > T(0) ? v : s * v; });
  if (!grad_enabled() || !(x.requires_grad() || slope.requires_grad()))
    return Var<T>::constant(std::move(out));
  auto mask = Var<T>::constant((x.value().array() <= T(0)).template cast<T>().matrix());
  return detail::make_op<T>(std::move(out), {x, slope}, [x, mask, slope](const Var<T>& g) {
    return std::vector<Var<T>>{x.requires_grad() ? masked_scale(g, mask, slope) : Var<T>(),
                               slope.requires_grad() ? sum(g * x * mask) : Var<T>()};
  });
}

// ---- composites ------------------------------------------------------------

// Row-wise squared norm: (n x m) -> (n x 1).
template <typename T>
Var<T> row_sq_norm(const Var<T>& a) {
  return sum_cols(square(a));
}

// ---- gradient computation --------------------------------------------------

// Gradients of sum(output) (or of <seed, output> when a seed is given) with
// respect to each input. Inputs the output does not depend on get zeros.
// With create_graph the returned gradients are part of the graph.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph = false, const Var<T>& seed = Var<T>()) {
  using NodePtr = Node<T>*;
  std::vector<Var<T>> result(inputs.size());
  auto zeros_for = [&](std::size_t i) {
    return Var<T>::constant(Matrix<T>::Zero(inputs[i].rows(), inputs[i].cols()));
  };
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = zeros_for(i);
    return result;
  }

  // Post-order DFS gives parents before children.
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<NodePtr> targets;
  for (const auto& in : inputs)
    if (in.defined()) targets.insert(in.node().get());
  std::unordered_set<NodePtr> needed;
  for (NodePtr n : order) {
    bool need = targets.count(n) > 0;
    for (const auto& p : n->parents) need = need || needed.count(p.get()) > 0;
    if (need) needed.insert(n);
  }

  NoGradGuard guard(!create_graph);
  std::unordered_map<NodePtr, Var<T>> grads;
  grads[output.node().get()] =
      seed.defined() ? seed
                     : Var<T>::constant(Matrix<T>::Ones(output.rows(), output.cols()));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (!needed.count(n) || !n->backward) continue;
    auto found = grads.find(n);
    if (found == grads.end()) continue;
    Var<T> g = found->second;
    if (!targets.count(n)) grads.erase(found);
    auto parent_grads = n->backward(g);
    for (std::size_t k = 0; k < n->parents.size(); ++k) {
      NodePtr p = n->parents[k].get();
      if (!parent_grads[k].defined() || !needed.count(p)) continue;
      auto slot = grads.find(p);
      if (slot == grads.end()) {
        grads.emplace(p, parent_grads[k]);
      } else {
        slot->second = slot->second + parent_grads[k];
      }
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto found = inputs[i].defined() ? grads.find(inputs[i].node().get()) : grads.end();
    result[i] = found == grads.end() ? zeros_for(i) : found->second;
  }
  return result;
}

}  // namespace ddaebm::ad
