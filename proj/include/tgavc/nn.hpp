// Layer building blocks. A layer only records the indices of its tensors in
// a ParamStore, so the same layout works for any scalar type and a network
// can be cast between float and double by casting its store.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tgavc/autograd.hpp"
#include "tgavc/random.hpp"

namespace tgavc::nn {

using ag::Tape;
using ag::Var;

/// Binds store entries onto a tape. Non-trainable binders produce constants,
/// so no gradient is ever collected for them.
template <typename S>
struct Binder {
  Tape<S>* tape;
  const ParamStore<S>* store;
  bool trainable;
  Rng* noise = nullptr;  // dropout is active only with a noise source
  double dropout = 0.0;

  Var<S> operator()(int index) const { return tape->param(*store, index, trainable); }
};

/// Inverted dropout; identity without a noise source.
template <typename S>
Var<S> dropout(const Binder<S>& p, Var<S> x) {
  if (p.noise == nullptr || p.dropout <= 0.0) return x;
  const S keep = static_cast<S>(1.0 / (1.0 - p.dropout));
  Matrix<S> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = p.noise->uniform() < p.dropout ? S(0) : keep;
  return mul(x, p.tape->constant(mask));
}

template <typename S>
Matrix<S> uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

template <typename S>
Matrix<S> normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<S>(stddev * rng.normal());
  return m;
}

/// Sinusoidal position table, rows = positions.
template <typename S>
Matrix<S> sinusoid_table(Eigen::Index rows, Eigen::Index dim) {
  Matrix<S> t(rows, dim);
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(dim));
      t(p, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return t;
}

template <typename S>
Var<S> add_positions(Var<S> x) {
  Var<S> pe = x.tape->constant(sinusoid_table<S>(x.rows(), x.cols()));
  return add(x, pe);
}

struct Linear {
  int weight = -1, bias = -1;
  int in = 0, out = 0;

  template <typename S>
  static Linear create(ParamStore<S>& store, Rng& rng, const std::string& name, int in, int out) {
    Linear l;
    l.in = in;
    l.out = out;
    const double bound = std::sqrt(6.0 / (in + out));
    l.weight = store.add(name + ".weight", uniform_matrix<S>(rng, in, out, bound));
    l.bias = store.add(name + ".bias", Matrix<S>::Zero(1, out));
    return l;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    return add_row(matmul(x, p(weight)), p(bias));
  }
};

/// Same-padded stride-1 convolution over time.
struct Conv1d {
  int weight = -1, bias = -1;
  int in = 0, out = 0, kernel = 1;

  template <typename S>
  static Conv1d create(ParamStore<S>& store, Rng& rng, const std::string& name, int in, int out, int kernel) {
    Conv1d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    const double bound = std::sqrt(6.0 / (kernel * in + out));
    c.weight = store.add(name + ".weight", uniform_matrix<S>(rng, kernel * in, out, bound));
    c.bias = store.add(name + ".bias", Matrix<S>::Zero(1, out));
    return c;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    return conv1d(x, p(weight), p(bias), kernel);
  }
};

struct LayerNorm {
  int gamma = -1, beta = -1;

  template <typename S>
  static LayerNorm create(ParamStore<S>& store, const std::string& name, int dim) {
    LayerNorm l;
    l.gamma = store.add(name + ".gamma", Matrix<S>::Ones(1, dim));
    l.beta = store.add(name + ".beta", Matrix<S>::Zero(1, dim));
    return l;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    return layer_norm_rows(x, p(gamma), p(beta));
  }
};

struct Lstm {
  int wx = -1, wh = -1, bias = -1;
  int in = 0, hidden = 0;

  template <typename S>
  static Lstm create(ParamStore<S>& store, Rng& rng, const std::string& name, int in, int hidden) {
    Lstm l;
    l.in = in;
    l.hidden = hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    l.wx = store.add(name + ".wx", uniform_matrix<S>(rng, in, 4 * hidden, bound));
    l.wh = store.add(name + ".wh", uniform_matrix<S>(rng, hidden, 4 * hidden, bound));
    Matrix<S> b = Matrix<S>::Zero(1, 4 * hidden);
    b.block(0, hidden, 1, hidden).setOnes();  // forget gate
    l.bias = store.add(name + ".bias", std::move(b));
    return l;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x, bool reverse = false) const {
    return lstm(x, p(wx), p(wh), p(bias), reverse);
  }
};

struct BiLstm {
  Lstm forward, backward;

  template <typename S>
  static BiLstm create(ParamStore<S>& store, Rng& rng, const std::string& name, int in, int hidden) {
    return {Lstm::create(store, rng, name + ".fwd", in, hidden), Lstm::create(store, rng, name + ".bwd", in, hidden)};
  }

  /// frames x 2h, forward states first.
  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    return concat_cols(forward(p, x, false), backward(p, x, true));
  }
};

struct Embedding {
  int table = -1;
  int vocab = 0, dim = 0;

  template <typename S>
  static Embedding create(ParamStore<S>& store, Rng& rng, const std::string& name, int vocab, int dim) {
    Embedding e;
    e.vocab = vocab;
    e.dim = dim;
    Matrix<S> t = normal_matrix<S>(rng, vocab, dim, 0.3);
    t.row(0).setZero();  // padding id
    e.table = store.add(name + ".table", std::move(t));
    return e;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, const std::vector<int>& ids) const {
    return gather_rows(p(table), ids);
  }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  template <typename S>
  static MultiHeadAttention create(ParamStore<S>& store, Rng& rng, const std::string& name, int dim, int heads) {
    return {Linear::create(store, rng, name + ".q", dim, dim), Linear::create(store, rng, name + ".k", dim, dim),
            Linear::create(store, rng, name + ".v", dim, dim), Linear::create(store, rng, name + ".o", dim, dim), heads};
  }

  /// Full self-attention over the rows of x (callers pass unpadded sequences).
  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    const Eigen::Index dim = x.cols(), dk = dim / heads;
    const S inv = S(1) / std::sqrt(static_cast<S>(dk));
    Var<S> Q = q(p, x), K = k(p, x), V = v(p, x);
    std::vector<Var<S>> outs;
    for (int h = 0; h < heads; ++h) {
      Var<S> qh = slice_cols(Q, h * dk, dk), kh = slice_cols(K, h * dk, dk), vh = slice_cols(V, h * dk, dk);
      Var<S> attn = softmax_rows(scale(matmul_nt(qh, kh), inv));
      outs.push_back(matmul(attn, vh));
    }
    Var<S> joined = heads == 1 ? outs[0] : concat_cols<S>(std::span<const Var<S>>(outs));
    return o(p, joined);
  }
};

/// Self-attention and a two-convolution feed-forward, each followed by a
/// residual connection and layer normalization.
struct FftBlock {
  MultiHeadAttention attn;
  LayerNorm norm1;
  Conv1d ff1, ff2;
  LayerNorm norm2;

  template <typename S>
  static FftBlock create(ParamStore<S>& store, Rng& rng, const std::string& name, int dim, int heads, int d_ff, int kernel) {
    FftBlock b;
    b.attn = MultiHeadAttention::create(store, rng, name + ".attn", dim, heads);
    b.norm1 = LayerNorm::create(store, name + ".norm1", dim);
    b.ff1 = Conv1d::create(store, rng, name + ".ff1", dim, d_ff, kernel);
    b.ff2 = Conv1d::create(store, rng, name + ".ff2", d_ff, dim, kernel);
    b.norm2 = LayerNorm::create(store, name + ".norm2", dim);
    return b;
  }

  template <typename S>
  Var<S> operator()(const Binder<S>& p, Var<S> x) const {
    x = norm1(p, add(x, dropout(p, attn(p, x))));
    return norm2(p, add(x, dropout(p, ff2(p, relu(ff1(p, x))))));
  }
};

}  // namespace tgavc::nn
