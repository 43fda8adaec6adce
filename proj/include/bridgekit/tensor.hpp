#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "bridgekit/common.hpp"

namespace bridgekit {

// Dense row-major 2D tensor. `node` links the value to a tape entry when the
// value was produced under recording; -1 marks constants. All compute is
// double precision; persisted payloads are cast to float32 at the I/O layer.
struct Tensor {
  int rows = 0, cols = 0;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c, 0.0)) {}

  size_t size() const { return static_cast<size_t>(rows) * cols; }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& at(int i, int j) { return (*data)[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return (*data)[static_cast<size_t>(i) * cols + j]; }
  double item() const { return (*data)[0]; }
};

inline Tensor tensor_of(const std::vector<double>& v, int rows, int cols) {
  Tensor t(rows, cols);
  if (v.size() != t.size()) throw std::invalid_argument("tensor_of: size mismatch");
  *t.data = v;
  return t;
}

// Reverse-mode tape. Nodes keep shared handles on their operands' storage,
// so backward never recomputes forward values.
class Tape {
 public:
  enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    AddBias,
    Mul,
    MulScalarT,
    Affine,
    Matmul,
    Transpose,
    Relu,
    SoftmaxRows,
    LayerNorm,
    ConcatCols,
    SliceCols,
    ExpandRows,
    PairConcat,
    TileNodes,
    SumSegments,
    RowScale,
    RowPermute,
    Reshape,
    RowCosine,
    CrossEntropyRows,
    Mse,
    ReduceRows,
    ReduceAll,
  };

  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;
    std::shared_ptr<std::vector<double>> va, vb, vc, out, aux;
    int arows = 0, acols = 0, brows = 0, bcols = 0, rows = 0, cols = 0;
    double alpha = 0, beta = 0;
    std::vector<int> idx;
    std::vector<double> w;
  };

  std::vector<Node> nodes;

  void clear() {
    nodes.clear();
    grads_.clear();
  }

  int leaf(const Tensor& t) {
    Node n;
    n.op = Op::Leaf;
    n.out = t.data;
    n.rows = t.rows;
    n.cols = t.cols;
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  int record(Node n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  const std::vector<double>& grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size()) || grads_[node].empty())
      throw std::logic_error("grad: node has no gradient (did backward run?)");
    return grads_[node];
  }

  bool has_grad(int node) const {
    return node >= 0 && node < static_cast<int>(grads_.size()) && !grads_[node].empty();
  }

  // Accumulates d(loss)/d(node) for every node reachable from `loss`, which
  // must be scalar-shaped.
  void backward(const Tensor& loss);

 private:
  std::vector<std::vector<double>> grads_;

  std::vector<double>& grad_buf(int node) {
    if (static_cast<int>(grads_.size()) <= node) grads_.resize(nodes.size());
    auto& g = grads_[node];
    if (g.empty()) g.assign(static_cast<size_t>(nodes[node].rows) * nodes[node].cols, 0.0);
    return g;
  }

  void backprop_node(int id);
};

namespace detail {

inline void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Op constructors. Every op computes its value eagerly; when `tape` is
// non-null and at least one operand is recorded, a node is appended so the
// value participates in backward. Constants stay off the tape.
// ---------------------------------------------------------------------------

namespace opdetail {

inline bool taped(const Tape* tape, const Tensor& a) { return tape != nullptr && a.node >= 0; }

inline Tensor finish(Tape* tape, Tape::Node n, Tensor out, bool any_taped) {
  if (tape && any_taped) {
    n.out = out.data;
    n.rows = out.rows;
    n.cols = out.cols;
    out.node = tape->record(std::move(n));
  }
  return out;
}

inline Tape::Node binary_node(Tape::Op op, const Tensor& a, const Tensor& b) {
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.b = b.node;
  n.va = a.data;
  n.vb = b.data;
  n.arows = a.rows;
  n.acols = a.cols;
  n.brows = b.rows;
  n.bcols = b.cols;
  return n;
}

inline Tape::Node unary_node(Tape::Op op, const Tensor& a) {
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.va = a.data;
  n.arows = a.rows;
  n.acols = a.cols;
  return n;
}

}  // namespace opdetail

inline Tensor t_add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("t_add: shape mismatch");
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::Add, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

inline Tensor t_sub(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("t_sub: shape mismatch");
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::Sub, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

// b is a 1 x cols row vector added to every row of a.
inline Tensor t_add_bias(Tape* tape, const Tensor& a, const Tensor& b) {
  if (b.rows != 1 || b.cols != a.cols) throw std::invalid_argument("t_add_bias: bias must be 1 x cols");
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j) + b.at(0, j);
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::AddBias, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

inline Tensor t_mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("t_mul: shape mismatch");
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::Mul, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

// Multiplies every element of a by a 1x1 tensor (typically a learnable scalar).
inline Tensor t_mul_scalar_t(Tape* tape, const Tensor& a, const Tensor& s) {
  if (s.rows != 1 || s.cols != 1) throw std::invalid_argument("t_mul_scalar_t: scalar must be 1x1");
  Tensor out(a.rows, a.cols);
  double sv = s.item();
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] * sv;
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::MulScalarT, a, s), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, s));
}

inline Tensor t_affine(Tape* tape, const Tensor& a, double alpha, double beta) {
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = alpha * (*a.data)[i] + beta;
  auto n = opdetail::unary_node(Tape::Op::Affine, a);
  n.alpha = alpha;
  n.beta = beta;
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

inline Tensor t_matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) throw std::invalid_argument("t_matmul: inner dimensions disagree");
  Tensor out(a.rows, b.cols);
  detail::matmul_acc(a.ptr(), b.ptr(), out.ptr(), a.rows, a.cols, b.cols);
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::Matmul, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

inline Tensor t_transpose(Tape* tape, const Tensor& a) {
  Tensor out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::Transpose, a), out, opdetail::taped(tape, a));
}

inline Tensor t_relu(Tape* tape, const Tensor& a) {
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] > 0 ? (*a.data)[i] : 0.0;
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::Relu, a), out, opdetail::taped(tape, a));
}

inline Tensor t_softmax_rows(Tape* tape, const Tensor& a) {
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
    double z = 0;
    for (int j = 0; j < a.cols; ++j) z += std::exp(a.at(i, j) - mx);
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = std::exp(a.at(i, j) - mx) / z;
  }
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::SoftmaxRows, a), out, opdetail::taped(tape, a));
}

// Per-row normalization with learnable gain and bias (both 1 x cols).
inline Tensor t_layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                           double eps = 1e-5) {
  if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
    throw std::invalid_argument("t_layer_norm: gain/bias must be 1 x cols");
  Tensor out(x.rows, x.cols);
  auto aux = std::make_shared<std::vector<double>>(static_cast<size_t>(x.rows) * (x.cols + 1));
  for (int i = 0; i < x.rows; ++i) {
    double mu = 0;
    for (int j = 0; j < x.cols; ++j) mu += x.at(i, j);
    mu /= x.cols;
    double var = 0;
    for (int j = 0; j < x.cols; ++j) {
      double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= x.cols;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < x.cols; ++j) {
      double xh = (x.at(i, j) - mu) * inv;
      (*aux)[static_cast<size_t>(i) * (x.cols + 1) + j] = xh;
      out.at(i, j) = gain.at(0, j) * xh + bias.at(0, j);
    }
    (*aux)[static_cast<size_t>(i) * (x.cols + 1) + x.cols] = inv;
  }
  auto n = opdetail::binary_node(Tape::Op::LayerNorm, x, gain);
  n.c = bias.node;
  n.vc = bias.data;
  n.aux = aux;
  bool any = opdetail::taped(tape, x) || opdetail::taped(tape, gain) || opdetail::taped(tape, bias);
  return opdetail::finish(tape, std::move(n), out, any);
}

inline Tensor t_concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows) throw std::invalid_argument("t_concat_cols: row counts disagree");
  Tensor out(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < b.cols; ++j) out.at(i, a.cols + j) = b.at(i, j);
  }
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::ConcatCols, a, b), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

inline Tensor t_slice_cols(Tape* tape, const Tensor& a, int off, int len) {
  if (off < 0 || len <= 0 || off + len > a.cols) throw std::invalid_argument("t_slice_cols: bad range");
  Tensor out(a.rows, len);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, off + j);
  auto n = opdetail::unary_node(Tape::Op::SliceCols, a);
  n.idx = {off, len};
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

// Repeats a 1 x n row vector into m rows.
inline Tensor t_expand_rows(Tape* tape, const Tensor& v, int m) {
  if (v.rows != 1) throw std::invalid_argument("t_expand_rows: input must be a row vector");
  Tensor out(m, v.cols);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < v.cols; ++j) out.at(i, j) = v.at(0, j);
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::ExpandRows, v), out, opdetail::taped(tape, v));
}

// N x d -> N^2 x 2d with row i*N+j = [a_i | a_j].
inline Tensor t_pair_concat(Tape* tape, const Tensor& a) {
  int N = a.rows, d = a.cols;
  Tensor out(N * N, 2 * d);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      double* dst = out.ptr() + (static_cast<size_t>(i) * N + j) * 2 * d;
      const double* ai = a.ptr() + static_cast<size_t>(i) * d;
      const double* aj = a.ptr() + static_cast<size_t>(j) * d;
      for (int k = 0; k < d; ++k) dst[k] = ai[k];
      for (int k = 0; k < d; ++k) dst[d + k] = aj[k];
    }
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::PairConcat, a), out, opdetail::taped(tape, a));
}

// N x d -> N^2 x d with row i*N+j = a_j.
inline Tensor t_tile_nodes(Tape* tape, const Tensor& a) {
  int N = a.rows, d = a.cols;
  Tensor out(N * N, d);
  for (int i = 0; i < N; ++i)
    std::copy(a.ptr(), a.ptr() + static_cast<size_t>(N) * d, out.ptr() + static_cast<size_t>(i) * N * d);
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::TileNodes, a), out, opdetail::taped(tape, a));
}

// N^2 x d -> N x d with row i = sum_j input[i*N+j].
inline Tensor t_sum_segments(Tape* tape, const Tensor& a, int N) {
  if (a.rows != N * N) throw std::invalid_argument("t_sum_segments: rows must be N^2");
  int d = a.cols;
  Tensor out(N, d);
  for (int i = 0; i < N; ++i) {
    double* dst = out.ptr() + static_cast<size_t>(i) * d;
    for (int j = 0; j < N; ++j) {
      const double* src = a.ptr() + (static_cast<size_t>(i) * N + j) * d;
      for (int k = 0; k < d; ++k) dst[k] += src[k];
    }
  }
  auto n = opdetail::unary_node(Tape::Op::SumSegments, a);
  n.idx = {N};
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

// Scales row i by the constant weight w[i].
inline Tensor t_row_scale(Tape* tape, const Tensor& a, std::vector<double> w) {
  if (static_cast<int>(w.size()) != a.rows) throw std::invalid_argument("t_row_scale: weight count");
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j) * w[i];
  auto n = opdetail::unary_node(Tape::Op::RowScale, a);
  n.w = std::move(w);
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

// Row gather by a constant permutation: out row i = input row perm[i].
inline Tensor t_row_permute(Tape* tape, const Tensor& a, std::vector<int> perm) {
  if (static_cast<int>(perm.size()) != a.rows) throw std::invalid_argument("t_row_permute: size mismatch");
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    int src = perm[i];
    if (src < 0 || src >= a.rows) throw std::invalid_argument("t_row_permute: index out of range");
    std::copy(a.ptr() + static_cast<size_t>(src) * a.cols, a.ptr() + (static_cast<size_t>(src) + 1) * a.cols,
              out.ptr() + static_cast<size_t>(i) * a.cols);
  }
  auto n = opdetail::unary_node(Tape::Op::RowPermute, a);
  n.idx = std::move(perm);
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

inline Tensor t_reshape(Tape* tape, const Tensor& a, int rows, int cols) {
  if (static_cast<size_t>(rows) * cols != a.size()) throw std::invalid_argument("t_reshape: size mismatch");
  Tensor out(rows, cols);
  *out.data = *a.data;
  return opdetail::finish(tape, opdetail::unary_node(Tape::Op::Reshape, a), out, opdetail::taped(tape, a));
}

// Row-wise cosine similarity of two m x n tensors -> m x 1, with an additive
// epsilon guard in the denominator.
inline Tensor t_row_cosine(Tape* tape, const Tensor& a, const Tensor& b, double eps = 1e-8) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("t_row_cosine: shape mismatch");
  Tensor out(a.rows, 1);
  auto aux = std::make_shared<std::vector<double>>(static_cast<size_t>(a.rows) * 3);
  for (int i = 0; i < a.rows; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (int j = 0; j < a.cols; ++j) {
      dot += a.at(i, j) * b.at(i, j);
      na += a.at(i, j) * a.at(i, j);
      nb += b.at(i, j) * b.at(i, j);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    (*aux)[i * 3 + 0] = dot;
    (*aux)[i * 3 + 1] = na;
    (*aux)[i * 3 + 2] = nb;
    out.at(i, 0) = dot / (na * nb + eps);
  }
  auto n = opdetail::binary_node(Tape::Op::RowCosine, a, b);
  n.aux = aux;
  n.alpha = eps;
  return opdetail::finish(tape, std::move(n), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, b));
}

// Weighted mean of per-row cross entropies under a log-softmax head.
// targets[i] in [0, cols) selects the positive class; rows with weight 0 are
// skipped. The normalizer is the sum of weights.
inline Tensor t_cross_entropy_rows(Tape* tape, const Tensor& logits, std::vector<int> targets,
                                   std::vector<double> weights) {
  if (static_cast<int>(targets.size()) != logits.rows || weights.size() != targets.size())
    throw std::invalid_argument("t_cross_entropy_rows: targets/weights size");
  double z = 0;
  for (double w : weights) z += w;
  if (!(z > 0)) throw std::invalid_argument("t_cross_entropy_rows: weights must have positive sum");
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double total = 0;
  for (int i = 0; i < logits.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < logits.cols; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0;
    for (int j = 0; j < logits.cols; ++j) sum += std::exp(logits.at(i, j) - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < logits.cols; ++j)
      (*probs)[static_cast<size_t>(i) * logits.cols + j] = std::exp(logits.at(i, j) - lse);
    if (weights[i] != 0.0) {
      int t = targets[i];
      if (t < 0 || t >= logits.cols) throw std::invalid_argument("t_cross_entropy_rows: target out of range");
      total += weights[i] * (lse - logits.at(i, t));
    }
  }
  Tensor out(1, 1);
  out.at(0, 0) = total / z;
  auto n = opdetail::unary_node(Tape::Op::CrossEntropyRows, logits);
  n.aux = probs;
  n.idx = std::move(targets);
  n.w = std::move(weights);
  n.alpha = z;
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, logits));
}

// Mean squared error against a constant target of the same shape.
inline Tensor t_mse(Tape* tape, const Tensor& a, const Tensor& target) {
  if (a.rows != target.rows || a.cols != target.cols) throw std::invalid_argument("t_mse: shape mismatch");
  double total = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = (*a.data)[i] - (*target.data)[i];
    total += d * d;
  }
  Tensor out(1, 1);
  out.at(0, 0) = total / static_cast<double>(a.size());
  return opdetail::finish(tape, opdetail::binary_node(Tape::Op::Mse, a, target), out,
                          opdetail::taped(tape, a) || opdetail::taped(tape, target));
}

// Weighted reduction over rows -> 1 x cols. Empty weights mean all-ones.
// With `mean`, the result is divided by the weight sum.
inline Tensor t_reduce_rows(Tape* tape, const Tensor& a, std::vector<double> w, bool mean) {
  if (w.empty()) w.assign(a.rows, 1.0);
  if (static_cast<int>(w.size()) != a.rows) throw std::invalid_argument("t_reduce_rows: weight count");
  double z = 0;
  for (double x : w) z += x;
  if (mean && !(z > 0)) throw std::invalid_argument("t_reduce_rows: weights must have positive sum");
  Tensor out(1, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(0, j) += w[i] * a.at(i, j);
  if (mean)
    for (int j = 0; j < a.cols; ++j) out.at(0, j) /= z;
  auto n = opdetail::unary_node(Tape::Op::ReduceRows, a);
  n.w = std::move(w);
  n.alpha = mean ? z : 1.0;
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

// Full reduction to a 1x1 scalar (sum, or mean over all elements).
inline Tensor t_reduce_all(Tape* tape, const Tensor& a, bool mean) {
  double total = 0;
  for (size_t i = 0; i < a.size(); ++i) total += (*a.data)[i];
  Tensor out(1, 1);
  out.at(0, 0) = mean ? total / static_cast<double>(a.size()) : total;
  auto n = opdetail::unary_node(Tape::Op::ReduceAll, a);
  n.alpha = mean ? static_cast<double>(a.size()) : 1.0;
  return opdetail::finish(tape, std::move(n), out, opdetail::taped(tape, a));
}

// Cosine similarity of two equally sized tensors viewed as flat vectors.
inline Tensor cosine_similarity(Tape* tape, const Tensor& a, const Tensor& b, double eps = 1e-8) {
  Tensor fa = t_reshape(tape, a, 1, static_cast<int>(a.size()));
  Tensor fb = t_reshape(tape, b, 1, static_cast<int>(b.size()));
  return t_row_cosine(tape, fa, fb, eps);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

inline void Tape::backprop_node(int id) {
  Node& n = nodes[id];
  const std::vector<double>& g = grads_[id];
  if (g.empty()) return;
  auto acc_a = [&]() -> double* { return n.a >= 0 ? grad_buf(n.a).data() : nullptr; };
  auto acc_b = [&]() -> double* { return n.b >= 0 ? grad_buf(n.b).data() : nullptr; };
  auto acc_c = [&]() -> double* { return n.c >= 0 ? grad_buf(n.c).data() : nullptr; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      if (double* db = acc_b())
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      break;
    }
    case Op::Sub: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      if (double* db = acc_b())
        for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      break;
    }
    case Op::AddBias: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      if (double* db = acc_b())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j) db[j] += g[static_cast<size_t>(i) * n.cols + j];
      break;
    }
    case Op::Mul: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (*n.vb)[i];
      if (double* db = acc_b())
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * (*n.va)[i];
      break;
    }
    case Op::MulScalarT: {
      double sv = (*n.vb)[0];
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * sv;
      if (double* db = acc_b()) {
        double acc = 0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * (*n.va)[i];
        db[0] += acc;
      }
      break;
    }
    case Op::Affine: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += n.alpha * g[i];
      break;
    }
    case Op::Matmul: {
      int m = n.arows, k = n.acols, c = n.bcols;
      if (double* da = acc_a())
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0;
            const double* gi = g.data() + static_cast<size_t>(i) * c;
            const double* bp = n.vb->data() + static_cast<size_t>(p) * c;
            for (int j = 0; j < c; ++j) acc += gi[j] * bp[j];
            da[static_cast<size_t>(i) * k + p] += acc;
          }
      if (double* db = acc_b())
        for (int i = 0; i < m; ++i) {
          const double* ai = n.va->data() + static_cast<size_t>(i) * k;
          const double* gi = g.data() + static_cast<size_t>(i) * c;
          for (int p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            double* dbp = db + static_cast<size_t>(p) * c;
            for (int j = 0; j < c; ++j) dbp[j] += av * gi[j];
          }
        }
      break;
    }
    case Op::Transpose: {
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            da[static_cast<size_t>(j) * n.rows + i] += g[static_cast<size_t>(i) * n.cols + j];
      break;
    }
    case Op::Relu: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i)
          if ((*n.va)[i] > 0) da[i] += g[i];
      break;
    }
    case Op::SoftmaxRows: {
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i) {
          const double* s = n.out->data() + static_cast<size_t>(i) * n.cols;
          const double* gi = g.data() + static_cast<size_t>(i) * n.cols;
          double dot = 0;
          for (int j = 0; j < n.cols; ++j) dot += gi[j] * s[j];
          for (int j = 0; j < n.cols; ++j) da[static_cast<size_t>(i) * n.cols + j] += s[j] * (gi[j] - dot);
        }
      break;
    }
    case Op::LayerNorm: {
      int m = n.rows, d = n.cols;
      double* da = acc_a();
      double* dg = acc_b();
      double* db = acc_c();
      for (int i = 0; i < m; ++i) {
        const double* xh = n.aux->data() + static_cast<size_t>(i) * (d + 1);
        double inv = xh[d];
        const double* gi = g.data() + static_cast<size_t>(i) * d;
        if (dg)
          for (int j = 0; j < d; ++j) dg[j] += gi[j] * xh[j];
        if (db)
          for (int j = 0; j < d; ++j) db[j] += gi[j];
        if (da) {
          double m1 = 0, m2 = 0;
          for (int j = 0; j < d; ++j) {
            double dxh = gi[j] * (*n.vb)[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= d;
          m2 /= d;
          for (int j = 0; j < d; ++j) {
            double dxh = gi[j] * (*n.vb)[j];
            da[static_cast<size_t>(i) * d + j] += inv * (dxh - m1 - xh[j] * m2);
          }
        }
      }
      break;
    }
    case Op::ConcatCols: {
      int ka = n.acols, kb = n.bcols;
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < ka; ++j)
            da[static_cast<size_t>(i) * ka + j] += g[static_cast<size_t>(i) * (ka + kb) + j];
      if (double* db = acc_b())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < kb; ++j)
            db[static_cast<size_t>(i) * kb + j] += g[static_cast<size_t>(i) * (ka + kb) + ka + j];
      break;
    }
    case Op::SliceCols: {
      int off = n.idx[0], len = n.idx[1];
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < len; ++j)
            da[static_cast<size_t>(i) * n.acols + off + j] += g[static_cast<size_t>(i) * len + j];
      break;
    }
    case Op::ExpandRows: {
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j) da[j] += g[static_cast<size_t>(i) * n.cols + j];
      break;
    }
    case Op::PairConcat: {
      int N = n.arows, d = n.acols;
      if (double* da = acc_a())
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            const double* gij = g.data() + (static_cast<size_t>(i) * N + j) * 2 * d;
            double* di = da + static_cast<size_t>(i) * d;
            double* dj = da + static_cast<size_t>(j) * d;
            for (int k = 0; k < d; ++k) di[k] += gij[k];
            for (int k = 0; k < d; ++k) dj[k] += gij[d + k];
          }
      break;
    }
    case Op::TileNodes: {
      int N = n.arows, d = n.acols;
      if (double* da = acc_a())
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            const double* gij = g.data() + (static_cast<size_t>(i) * N + j) * d;
            double* dj = da + static_cast<size_t>(j) * d;
            for (int k = 0; k < d; ++k) dj[k] += gij[k];
          }
      break;
    }
    case Op::SumSegments: {
      int N = n.idx[0], d = n.cols;
      if (double* da = acc_a())
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            const double* gi = g.data() + static_cast<size_t>(i) * d;
            double* dij = da + (static_cast<size_t>(i) * N + j) * d;
            for (int k = 0; k < d; ++k) dij[k] += gi[k];
          }
      break;
    }
    case Op::RowScale: {
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            da[static_cast<size_t>(i) * n.cols + j] += g[static_cast<size_t>(i) * n.cols + j] * n.w[i];
      break;
    }
    case Op::RowPermute: {
      if (double* da = acc_a())
        for (int i = 0; i < n.rows; ++i) {
          const double* gi = g.data() + static_cast<size_t>(i) * n.cols;
          double* dst = da + static_cast<size_t>(n.idx[i]) * n.cols;
          for (int j = 0; j < n.cols; ++j) dst[j] += gi[j];
        }
      break;
    }
    case Op::Reshape: {
      if (double* da = acc_a())
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      break;
    }
    case Op::RowCosine: {
      int m = n.arows, d = n.acols;
      double eps = n.alpha;
      double* da = acc_a();
      double* db = acc_b();
      for (int i = 0; i < m; ++i) {
        double gi = g[i];
        if (gi == 0.0) continue;
        double dot = (*n.aux)[i * 3 + 0], na = (*n.aux)[i * 3 + 1], nb = (*n.aux)[i * 3 + 2];
        double den = na * nb + eps;
        const double* ai = n.va->data() + static_cast<size_t>(i) * d;
        const double* bi = n.vb->data() + static_cast<size_t>(i) * d;
        double ca = dot * nb / std::max(na, 1e-30) / (den * den);
        double cb = dot * na / std::max(nb, 1e-30) / (den * den);
        if (da)
          for (int j = 0; j < d; ++j) da[static_cast<size_t>(i) * d + j] += gi * (bi[j] / den - ca * ai[j]);
        if (db)
          for (int j = 0; j < d; ++j) db[static_cast<size_t>(i) * d + j] += gi * (ai[j] / den - cb * bi[j]);
      }
      break;
    }
    case Op::CrossEntropyRows: {
      if (double* da = acc_a()) {
        double scale = g[0] / n.alpha;
        for (int i = 0; i < n.arows; ++i) {
          if (n.w[i] == 0.0) continue;
          const double* pi = n.aux->data() + static_cast<size_t>(i) * n.acols;
          double* dai = da + static_cast<size_t>(i) * n.acols;
          double ws = scale * n.w[i];
          for (int j = 0; j < n.acols; ++j) dai[j] += ws * pi[j];
          dai[n.idx[i]] -= ws;
        }
      }
      break;
    }
    case Op::Mse: {
      double scale = 2.0 * g[0] / static_cast<double>(n.va->size());
      if (double* da = acc_a())
        for (size_t i = 0; i < n.va->size(); ++i) da[i] += scale * ((*n.va)[i] - (*n.vb)[i]);
      if (double* db = acc_b())
        for (size_t i = 0; i < n.va->size(); ++i) db[i] -= scale * ((*n.va)[i] - (*n.vb)[i]);
      break;
    }
    case Op::ReduceRows: {
      if (double* da = acc_a())
        for (int i = 0; i < n.arows; ++i) {
          double wi = n.w[i] / n.alpha;
          if (wi == 0.0) continue;
          for (int j = 0; j < n.cols; ++j)
            da[static_cast<size_t>(i) * n.cols + j] += wi * g[j];
        }
      break;
    }
    case Op::ReduceAll: {
      if (double* da = acc_a()) {
        double s = g[0] / n.alpha;
        for (size_t i = 0; i < n.va->size(); ++i) da[i] += s;
      }
      break;
    }
  }
}

inline void Tape::backward(const Tensor& loss) {
  if (loss.node < 0) throw std::invalid_argument("backward: loss is not on the tape");
  if (loss.rows != 1 || loss.cols != 1) throw std::invalid_argument("backward: loss must be scalar");
  grads_.assign(nodes.size(), {});
  grad_buf(loss.node)[0] = 1.0;
  for (int id = loss.node; id >= 0; --id) backprop_node(id);
}

}  // namespace bridgekit
