// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's gradient back to its inputs. Node ids are issued in
// evaluation order, so a reverse sweep over ids is a valid topological order.
// All operations are row-oriented: a sequence is a (frames x features) matrix.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tgavc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Named, ordered collection of trainable tensors belonging to one network.
template <typename Scalar>
class ParamStore {
 public:
  int add(std::string name, Matrix<Scalar> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  Matrix<Scalar>& value(int i) { return values_[i]; }
  const Matrix<Scalar>& value(int i) const { return values_[i]; }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i) {
      if (names_[i] == name) return i;
    }
    return -1;
  }

  Eigen::Index numel() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  bool operator==(const ParamStore& other) const {
    if (names_ != other.names_) return false;
    for (int i = 0; i < size(); ++i) {
      if (values_[i].rows() != other.values_[i].rows() ||
          values_[i].cols() != other.values_[i].cols() ||
          values_[i] != other.values_[i]) {
        return false;
      }
    }
    return true;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (int i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<Scalar>> values_;
};

/// Gradients parallel to a ParamStore; an empty matrix means "no gradient".
template <typename Scalar>
using GradList = std::vector<Matrix<Scalar>>;

namespace ag {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf that collects a gradient; used by tests and by callers that need
  /// the gradient with respect to an input rather than a parameter.
  Var<Scalar> variable(Mat value) { return push(std::move(value), true, nullptr); }

  /// Binds parameter `index` of `store`. Repeated binds return the same node.
  Var<Scalar> param(const ParamStore<Scalar>& store, int index, bool trainable) {
    const Key key{&store, index, trainable};
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return {this, it->second};
    Var<Scalar> v = push(store.value(index), trainable, nullptr);
    nodes_[v.id].store = &store;
    nodes_[v.id].param_index = index;
    param_nodes_.emplace(key, v.id);
    return v;
  }

  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar (1x1) root, seeded with `seed`.
  void backward(Var<Scalar> root, Scalar seed = Scalar(1)) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw std::invalid_argument("backward: root must be a 1x1 scalar");
    }
    if (!nodes_[root.id].requires_grad) return;
    accumulate(root.id, Mat::Constant(1, 1, seed));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Sums gradients of every node bound to `store`; untouched entries stay empty.
  GradList<Scalar> gradients(const ParamStore<Scalar>& store) const {
    GradList<Scalar> out(store.size());
    for (const auto& [key, id] : param_nodes_) {
      if (key.store != &store || !key.trainable) continue;
      const Mat& g = nodes_[id].grad;
      if (g.size() == 0) continue;
      if (out[key.index].size() == 0) {
        out[key.index] = g;
      } else {
        out[key.index] += g;
      }
    }
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
    const ParamStore<Scalar>* store = nullptr;
    int param_index = -1;
  };
  struct Key {
    const void* store;
    int index;
    bool trainable;
    bool operator<(const Key& o) const {
      return std::tie(store, index, trainable) < std::tie(o.store, o.index, o.trainable);
    }
  };

  // deque keeps node references stable while new nodes are appended
  std::deque<Node> nodes_;
  std::map<Key, int> param_nodes_;
};

namespace detail {

template <typename S>
bool any_grad(const Var<S>& a) {
  return a.tape->requires_grad(a.id);
}
template <typename S>
bool any_grad(const Var<S>& a, const Var<S>& b) {
  return a.tape->requires_grad(a.id) || b.tape->requires_grad(b.id);
}
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value() * b.value().transpose();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.push(a.value() + b.value(), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.push(a.value() - b.value(), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape<S>& t = *a.tape;
  const int ia = a.id, ib = b.id;
  Matrix<S> out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value() * s, detail::any_grad(a), [ia, s](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g * s);
  });
}

/// Identity in the forward pass; multiplies the incoming gradient by `s`.
/// With a negative factor this is a gradient-reversal layer.
template <typename S>
Var<S> grad_scale(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value(), detail::any_grad(a), [ia, s](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g * s);
  });
}

template <typename S>
Var<S> detach(Var<S> a) {
  return a.tape->constant(a.value());
}

/// a + row, broadcasting a 1 x n row over every row of a.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id, ir = row.id;
  return t.push(std::move(out), detail::any_grad(a, row), [ia, ir](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

/// Repeats a 1 x n row `rows` times.
template <typename S>
Var<S> broadcast_rows(Var<S> row, Eigen::Index rows) {
  detail::require(row.rows() == 1, "broadcast_rows: input must be a single row");
  detail::require(rows >= 1, "broadcast_rows: need at least one row");
  Tape<S>& t = *row.tape;
  Matrix<S> out = row.value().replicate(rows, 1);
  const int ir = row.id;
  return t.push(std::move(out), detail::any_grad(row), [ir](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ir, g.colwise().sum());
  });
}

/// a * s where s is a 1x1 variable.
template <typename S>
Var<S> mul_scalar(Var<S> a, Var<S> s) {
  detail::require(s.rows() == 1 && s.cols() == 1, "mul_scalar: scale must be 1x1");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value() * s.item();
  const int ia = a.id, is = s.id;
  return t.push(std::move(out), detail::any_grad(a, s), [ia, is](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(is)(0, 0));
    if (t.requires_grad(is)) t.accumulate(is, Matrix<S>::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
  });
}

/// a + s where s is a 1x1 variable.
template <typename S>
Var<S> add_scalar(Var<S> a, Var<S> s) {
  detail::require(s.rows() == 1 && s.cols() == 1, "add_scalar: offset must be 1x1");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value().array() + s.item();
  const int ia = a.id, is = s.id;
  return t.push(std::move(out), detail::any_grad(a, s), [ia, is](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(is)) t.accumulate(is, Matrix<S>::Constant(1, 1, g.sum()));
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value().cwiseMax(S(0));
  const int ia = a.id;
  return t.push(std::move(out), detail::any_grad(a), [ia](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, (t.value(ia).array() > S(0)).select(g, S(0)));
  });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> y = a.value().array().tanh().matrix();
  auto saved = std::make_shared<Matrix<S>>(y);
  const int ia = a.id;
  return t.push(std::move(y), detail::any_grad(a), [ia, saved](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, g.cwiseProduct((S(1) - saved->array().square()).matrix()));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> y = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  const int ia = a.id;
  auto saved = std::make_shared<Matrix<S>>(y);
  return t.push(std::move(y), detail::any_grad(a), [ia, saved](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, (g.array() * saved->array() * (S(1) - saved->array())).matrix());
  });
}

template <typename S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value().array().square().matrix(), detail::any_grad(a), [ia](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, (S(2) * g.array() * t.value(ia).array()).matrix());
  });
}

/// |a|; the subgradient at 0 is taken as 0.
template <typename S>
Var<S> abs(Var<S> a) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value().cwiseAbs(), detail::any_grad(a), [ia](Tape<S>& t, const Matrix<S>& g) {
    const auto& x = t.value(ia).array();
    t.accumulate(ia, (g.array() * ((x > S(0)).template cast<S>() - (x < S(0)).template cast<S>())).matrix());
  });
}

/// max(a, floor); gradient passes only where a > floor.
template <typename S>
Var<S> clamp_min(Var<S> a, S floor) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value().cwiseMax(floor), detail::any_grad(a), [ia, floor](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(ia, (t.value(ia).array() > floor).select(g, S(0)));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.push(Matrix<S>::Constant(1, 1, a.value().sum()), detail::any_grad(a),
                [ia, r, c](Tape<S>& t, const Matrix<S>& g) { t.accumulate(ia, Matrix<S>::Constant(r, c, g(0, 0))); });
}

template <typename S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

/// Sums a list of 1x1 scalars.
template <typename S>
Var<S> add_n(std::span<const Var<S>> xs) {
  detail::require(!xs.empty(), "add_n: empty list");
  Var<S> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

/// Element (r, c) as a 1x1 variable.
template <typename S>
Var<S> pick(Var<S> a, Eigen::Index r, Eigen::Index c) {
  detail::require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), "pick: index out of range");
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.push(Matrix<S>::Constant(1, 1, a.value()(r, c)), detail::any_grad(a),
                [ia, r, c, rows, cols](Tape<S>& t, const Matrix<S>& g) {
                  Matrix<S> d = Matrix<S>::Zero(rows, cols);
                  d(r, c) = g(0, 0);
                  t.accumulate(ia, d);
                });
}

/// Per-row dot product of two equally shaped matrices -> rows x 1.
template <typename S>
Var<S> row_dot(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "row_dot: shape mismatch");
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value().cwiseProduct(b.value()).rowwise().sum();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, (t.value(ib).array().colwise() * g.col(0).array()).matrix());
    if (t.requires_grad(ib)) t.accumulate(ib, (t.value(ia).array().colwise() * g.col(0).array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> y = (a.value().colwise() - a.value().rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  auto saved = std::make_shared<Matrix<S>>(y);
  const int ia = a.id;
  return t.push(std::move(y), detail::any_grad(a), [ia, saved](Tape<S>& t, const Matrix<S>& g) {
    const auto& y = *saved;
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

template <typename S>
Var<S> log_softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Eigen::Matrix<S, Eigen::Dynamic, 1> mx = a.value().rowwise().maxCoeff();
  Matrix<S> shifted = a.value().colwise() - mx;
  Eigen::Matrix<S, Eigen::Dynamic, 1> lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix<S> y = shifted.colwise() - lse;
  auto probs = std::make_shared<Matrix<S>>(y.array().exp().matrix());
  const int ia = a.id;
  return t.push(std::move(y), detail::any_grad(a), [ia, probs](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> gs = g.rowwise().sum();
    t.accumulate(ia, g - (probs->array().colwise() * gs.array()).matrix());
  });
}

/// Scales every row to unit L2 norm.
template <typename S>
Var<S> l2_normalize_rows(Var<S> a, S eps = S(1e-12)) {
  Tape<S>& t = *a.tape;
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = a.value().rowwise().norm().cwiseMax(eps);
  Matrix<S> y = a.value().array().colwise() / norms.array();
  auto saved_y = std::make_shared<Matrix<S>>(y);
  auto saved_n = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(norms);
  const int ia = a.id;
  return t.push(std::move(y), detail::any_grad(a), [ia, saved_y, saved_n](Tape<S>& t, const Matrix<S>& g) {
    const auto& y = *saved_y;
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    Matrix<S> d = g - (y.array().colwise() * dot.array()).matrix();
    d.array().colwise() /= saved_n->array();
    t.accumulate(ia, d);
  });
}

/// Layer normalization across columns of each row, with affine gain/bias rows.
template <typename S>
Var<S> layer_norm_rows(Var<S> a, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
  detail::require(gamma.cols() == a.cols() && beta.cols() == a.cols(), "layer_norm: affine width mismatch");
  Tape<S>& t = *a.tape;
  const Eigen::Index n = a.cols();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = a.value().rowwise().mean();
  Matrix<S> centered = a.value().colwise() - mu;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<S>(n)) + eps).rsqrt().matrix();
  auto xhat = std::make_shared<Matrix<S>>(centered.array().colwise() * inv_std.array());
  auto saved_inv = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(inv_std);
  Matrix<S> y = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int ia = a.id, ig = gamma.id, ib = beta.id;
  const bool req = t.requires_grad(ia) || t.requires_grad(ig) || t.requires_grad(ib);
  return t.push(std::move(y), req, [ia, ig, ib, xhat, saved_inv, n](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(*xhat).colwise().sum());
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    if (t.requires_grad(ia)) {
      Matrix<S> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
      Eigen::Matrix<S, Eigen::Dynamic, 1> s1 = dxhat.rowwise().sum();
      Eigen::Matrix<S, Eigen::Dynamic, 1> s2 = dxhat.cwiseProduct(*xhat).rowwise().sum();
      Matrix<S> dx = (static_cast<S>(n) * dxhat.array() - (xhat->array().colwise() * s2.array())).colwise() - s1.array();
      dx.array().colwise() *= saved_inv->array() / static_cast<S>(n);
      t.accumulate(ia, dx);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Var<S> concat_cols(std::span<const Var<S>> parts) {
  detail::require(!parts.empty(), "concat_cols: empty list");
  Tape<S>& t = *parts[0].tape;
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
    req = req || t.requires_grad(p.id);
  }
  Matrix<S> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id, p.cols());
    c += p.cols();
  }
  return t.push(std::move(out), req, [spans](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Index c = 0;
    for (const auto& [id, w] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(c, w));
      c += w;
    }
  });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  const Var<S> parts[2] = {a, b};
  return concat_cols<S>(std::span<const Var<S>>(parts, 2));
}

template <typename S>
Var<S> concat_rows(std::span<const Var<S>> parts) {
  detail::require(!parts.empty(), "concat_rows: empty list");
  Tape<S>& t = *parts[0].tape;
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool req = false;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
    req = req || t.requires_grad(p.id);
  }
  Matrix<S> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id, p.rows());
    r += p.rows();
  }
  return t.push(std::move(out), req, [spans](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Index r = 0;
    for (const auto& [id, h] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(r, h));
      r += h;
    }
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.push(a.value().middleCols(start, count), detail::any_grad(a),
                [ia, start, count, rows, cols](Tape<S>& t, const Matrix<S>& g) {
                  Matrix<S> d = Matrix<S>::Zero(rows, cols);
                  d.middleCols(start, count) = g;
                  t.accumulate(ia, d);
                });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Tape<S>& t = *a.tape;
  const int ia = a.id;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.push(a.value().middleRows(start, count), detail::any_grad(a),
                [ia, start, count, rows, cols](Tape<S>& t, const Matrix<S>& g) {
                  Matrix<S> d = Matrix<S>::Zero(rows, cols);
                  d.middleRows(start, count) = g;
                  t.accumulate(ia, d);
                });
}

/// out.row(i) = a.row(index[i]); the backward pass scatter-adds.
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int> index) {
  Tape<S>& t = *a.tape;
  Matrix<S> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] >= 0 && index[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  const int ia = a.id;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  auto idx = std::make_shared<std::vector<int>>(std::move(index));
  return t.push(std::move(out), detail::any_grad(a), [ia, idx, rows, cols](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S> d = Matrix<S>::Zero(rows, cols);
    for (std::size_t i = 0; i < idx->size(); ++i) d.row((*idx)[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, d);
  });
}

// ---------------------------------------------------------------------------
// Sequence layers

/// Stride-1 convolution over time with zero "same" padding.
/// x: frames x in, weight: (kernel*in) x out laid out tap-major, bias: 1 x out.
template <typename S>
Var<S> conv1d(Var<S> x, Var<S> weight, Var<S> bias, int kernel) {
  detail::require(kernel >= 1 && kernel % 2 == 1, "conv1d: kernel must be odd");
  const Eigen::Index frames = x.rows(), in = x.cols();
  detail::require(weight.rows() == kernel * in, "conv1d: weight rows must equal kernel*in");
  detail::require(bias.rows() == 1 && bias.cols() == weight.cols(), "conv1d: bias shape mismatch");
  Tape<S>& t = *x.tape;
  const int pad = kernel / 2;
  auto cols = std::make_shared<Matrix<S>>(Matrix<S>::Zero(frames, kernel * in));
  for (int j = 0; j < kernel; ++j) {
    const Eigen::Index shift = j - pad;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index hi = std::min<Eigen::Index>(frames, frames - shift);
    if (hi > lo) cols->block(lo, j * in, hi - lo, in) = x.value().middleRows(lo + shift, hi - lo);
  }
  Matrix<S> out = ((*cols) * weight.value()).rowwise() + bias.value().row(0);
  const int ix = x.id, iw = weight.id, ib = bias.id;
  const bool req = t.requires_grad(ix) || t.requires_grad(iw) || t.requires_grad(ib);
  return t.push(std::move(out), req, [ix, iw, ib, cols, kernel, pad, frames, in](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(iw)) t.accumulate(iw, cols->transpose() * g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    if (t.requires_grad(ix)) {
      Matrix<S> dcols = g * t.value(iw).transpose();
      Matrix<S> dx = Matrix<S>::Zero(frames, in);
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index shift = j - pad;
        const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
        const Eigen::Index hi = std::min<Eigen::Index>(frames, frames - shift);
        if (hi > lo) dx.middleRows(lo + shift, hi - lo) += dcols.block(lo, j * in, hi - lo, in);
      }
      t.accumulate(ix, dx);
    }
  });
}

/// Single-direction LSTM over the rows of x, gate order (input, forget, cell, output).
/// wx: in x 4h, wh: h x 4h, bias: 1 x 4h. Returns frames x h with row t holding
/// the hidden state at time t; when `reverse` the recurrence runs from the last
/// frame to the first. Initial hidden and cell states are zero.
template <typename S>
Var<S> lstm(Var<S> x, Var<S> wx, Var<S> wh, Var<S> bias, bool reverse = false) {
  const Eigen::Index frames = x.rows();
  const Eigen::Index h = wh.rows();
  detail::require(frames >= 1, "lstm: empty sequence");
  detail::require(wx.rows() == x.cols() && wx.cols() == 4 * h, "lstm: input weight shape mismatch");
  detail::require(wh.cols() == 4 * h, "lstm: recurrent weight shape mismatch");
  detail::require(bias.rows() == 1 && bias.cols() == 4 * h, "lstm: bias shape mismatch");
  Tape<S>& t = *x.tape;

  struct Cache {
    Matrix<S> gates;   // frames x 4h, post-activation
    Matrix<S> cells;   // frames x h
    Matrix<S> tanh_c;  // frames x h
    Matrix<S> hidden;  // frames x h
  };
  auto cache = std::make_shared<Cache>();
  Matrix<S> z_in = (x.value() * wx.value()).rowwise() + bias.value().row(0);
  cache->gates.resize(frames, 4 * h);
  cache->cells.resize(frames, h);
  cache->tanh_c.resize(frames, h);
  cache->hidden.resize(frames, h);
  RowVector<S> h_prev = RowVector<S>::Zero(h);
  RowVector<S> c_prev = RowVector<S>::Zero(h);
  RowVector<S> z(4 * h);
  const Matrix<S>& whv = wh.value();
  for (Eigen::Index step = 0; step < frames; ++step) {
    const Eigen::Index tt = reverse ? frames - 1 - step : step;
    z.noalias() = z_in.row(tt);
    z.noalias() += h_prev * whv;
    auto gi = (S(1) / (S(1) + (-z.segment(0, h).array()).exp()));
    auto gf = (S(1) / (S(1) + (-z.segment(h, h).array()).exp()));
    auto gg = z.segment(2 * h, h).array().tanh();
    auto go = (S(1) / (S(1) + (-z.segment(3 * h, h).array()).exp()));
    cache->gates.row(tt).segment(0, h) = gi.matrix();
    cache->gates.row(tt).segment(h, h) = gf.matrix();
    cache->gates.row(tt).segment(2 * h, h) = gg.matrix();
    cache->gates.row(tt).segment(3 * h, h) = go.matrix();
    auto G = cache->gates.row(tt);
    c_prev = (G.segment(h, h).array() * c_prev.array() + G.segment(0, h).array() * G.segment(2 * h, h).array()).matrix();
    cache->cells.row(tt) = c_prev;
    cache->tanh_c.row(tt) = c_prev.array().tanh().matrix();
    h_prev = (G.segment(3 * h, h).array() * cache->tanh_c.row(tt).array()).matrix();
    cache->hidden.row(tt) = h_prev;
  }
  Matrix<S> out = cache->hidden;
  const int ix = x.id, iwx = wx.id, iwh = wh.id, ib = bias.id;
  const bool req = t.requires_grad(ix) || t.requires_grad(iwx) || t.requires_grad(iwh) || t.requires_grad(ib);
  return t.push(std::move(out), req, [=](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& whv = t.value(iwh);
    Matrix<S> dz_all(frames, 4 * h);
    Matrix<S> dwh = Matrix<S>::Zero(h, 4 * h);
    RowVector<S> dh_next = RowVector<S>::Zero(h);
    RowVector<S> dc_next = RowVector<S>::Zero(h);
    RowVector<S> dz(4 * h);
    for (Eigen::Index step = frames - 1; step >= 0; --step) {
      const Eigen::Index tt = reverse ? frames - 1 - step : step;
      const bool first = step == 0;
      const Eigen::Index prev = reverse ? tt + 1 : tt - 1;
      auto G = cache->gates.row(tt);
      auto gi = G.segment(0, h).array();
      auto gf = G.segment(h, h).array();
      auto gg = G.segment(2 * h, h).array();
      auto go = G.segment(3 * h, h).array();
      auto tc = cache->tanh_c.row(tt).array();
      RowVector<S> dh = g.row(tt) + dh_next;
      RowVector<S> dc = (dh.array() * go * (S(1) - tc.square())).matrix() + dc_next;
      RowVector<S> c_before = first ? RowVector<S>::Zero(h) : RowVector<S>(cache->cells.row(prev));
      dz.segment(0, h) = (dc.array() * gg * gi * (S(1) - gi)).matrix();
      dz.segment(h, h) = (dc.array() * c_before.array() * gf * (S(1) - gf)).matrix();
      dz.segment(2 * h, h) = (dc.array() * gi * (S(1) - gg.square())).matrix();
      dz.segment(3 * h, h) = (dh.array() * tc * go * (S(1) - go)).matrix();
      dc_next = (dc.array() * gf).matrix();
      if (!first) dwh.noalias() += cache->hidden.row(prev).transpose() * dz;
      dh_next.noalias() = dz * whv.transpose();
      dz_all.row(tt) = dz;
    }
    if (t.requires_grad(iwh)) t.accumulate(iwh, dwh);
    if (t.requires_grad(ib)) t.accumulate(ib, dz_all.colwise().sum());
    if (t.requires_grad(iwx)) t.accumulate(iwx, t.value(ix).transpose() * dz_all);
    if (t.requires_grad(ix)) t.accumulate(ix, dz_all * t.value(iwx).transpose());
  });
}

// ---------------------------------------------------------------------------
// Operator sugar

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, S s) { return scale(a, s); }

}  // namespace ag
}  // namespace tgavc
