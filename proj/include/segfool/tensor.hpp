#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "segfool/common.hpp"

namespace segfool {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<MatX<S>>;
template <typename S>
using CMapMat = Eigen::Map<const MatX<S>>;
template <typename S>
using MapArr = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using CMapArr = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

/// Dense row-major tensor of arbitrary rank. Rank 0 (empty shape) is a scalar.
/// Plain value type; gradient bookkeeping lives on the Graph that records ops.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  Tensor(std::vector<int> sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    assert(numel_of(shape) == static_cast<long>(data.size()));
  }

  static long numel_of(const std::vector<int>& sh) {
    long n = 1;
    for (int d : sh) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> sh) {
    long n = numel_of(sh);
    return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), S(0)));
  }

  static Tensor full(std::vector<int> sh, S v) {
    long n = numel_of(sh);
    return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(S v) { return Tensor({}, {v}); }

  long numel() const { return static_cast<long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }
  S item() const {
    SEGFOOL_REQUIRE(is_scalar(), "Tensor::item requires a single-element tensor");
    return data[0];
  }

  S& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
  S operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
  S& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  S operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  S& operator()(int c, int i, int j) {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }
  S operator()(int c, int i, int j) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  /// View as a rows x cols Eigen matrix (must match numel).
  CMapMat<S> as_matrix(int rows, int cols) const {
    assert(static_cast<long>(rows) * cols == numel());
    return CMapMat<S>(data.data(), rows, cols);
  }
  MapMat<S> as_matrix(int rows, int cols) {
    assert(static_cast<long>(rows) * cols == numel());
    return MapMat<S>(data.data(), rows, cols);
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

inline std::string shape_string(const std::vector<int>& sh) {
  std::string s = "[";
  for (std::size_t i = 0; i < sh.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(sh[i]);
  }
  return s + "]";
}

template <typename S>
class Graph;

/// Handle to a node on a Graph. Cheap to copy.
template <typename S>
struct Var {
  Graph<S>* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Reverse-mode tape. Ops record eagerly: the forward value is computed at
/// record time, nodes are appended in topological order, and backward() walks
/// the tape once in reverse, accumulating into parent gradient buffers.
template <typename S>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;             // allocated iff tracked
    std::vector<int> parents;
    BackwardFn backward;        // empty for leaves/constants
    bool tracked = false;
  };

  /// Differentiable input; receives a gradient buffer.
  Var<S> leaf(Tensor<S> value) {
    Node n;
    n.grad = Tensor<S>::zeros(value.shape);
    n.value = std::move(value);
    n.tracked = true;
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Non-differentiable input (data, targets, masks).
  Var<S> constant(Tensor<S> value) {
    Node n;
    n.value = std::move(value);
    n.tracked = false;
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<S> record(Tensor<S> value, std::vector<int> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents) {
      assert(p >= 0 && p < static_cast<int>(nodes_.size()));
      if (nodes_[static_cast<std::size_t>(p)].tracked) n.tracked = true;
    }
    if (n.tracked) {
      n.grad = Tensor<S>::zeros(n.value.shape);
      n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(Var<S> v) const { return node(v.id).value; }
  const Tensor<S>& grad(Var<S> v) const {
    const Node& n = node(v.id);
    SEGFOOL_REQUIRE(n.tracked, "gradient requested for an untracked node");
    return n.grad;
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Accumulate src into the gradient buffer of node `id` (no-op if untracked).
  void add_grad(int id, const S* src, long n) {
    Node& nd = node(id);
    if (!nd.tracked) return;
    assert(nd.grad.numel() == n);
    S* dst = nd.grad.data.data();
    for (long i = 0; i < n; ++i) dst[i] += src[i];
  }

  /// Seed d(loss)/d(loss)=1 and sweep the tape in reverse. Each node is
  /// visited exactly once; grads of multi-consumer nodes accumulate.
  void backward(Var<S> loss) {
    SEGFOOL_REQUIRE(loss.valid() && loss.graph == this, "backward: loss not on this graph");
    Node& ln = node(loss.id);
    SEGFOOL_REQUIRE(ln.value.is_scalar(), "backward: loss must be a scalar tensor");
    SEGFOOL_REQUIRE(ln.tracked, "backward: loss is not connected to any differentiable input");
    ln.grad.data[0] += S(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.tracked && n.backward) n.backward(*this, id);
    }
  }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace opdetail {

template <typename S>
Graph<S>& same_graph(Var<S> a, Var<S> b) {
  SEGFOOL_REQUIRE(a.valid() && b.valid() && a.graph == b.graph,
                  "operands must live on the same graph");
  return *a.graph;
}

}  // namespace opdetail

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(a, b);
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(av.same_shape(bv), "add: shape mismatch " + shape_string(av.shape) + " vs " +
                                         shape_string(bv.shape));
  Tensor<S> out = av;
  MapArr<S>(out.data.data(), out.numel()) += CMapArr<S>(bv.data.data(), bv.numel());
  return g.record(std::move(out), {a.id, b.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    g.add_grad(n.parents[0], n.grad.data.data(), n.grad.numel());
    g.add_grad(n.parents[1], n.grad.data.data(), n.grad.numel());
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(a, b);
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(av.same_shape(bv), "sub: shape mismatch " + shape_string(av.shape) + " vs " +
                                         shape_string(bv.shape));
  Tensor<S> out = av;
  MapArr<S>(out.data.data(), out.numel()) -= CMapArr<S>(bv.data.data(), bv.numel());
  return g.record(std::move(out), {a.id, b.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    g.add_grad(n.parents[0], n.grad.data.data(), n.grad.numel());
    auto& pb = g.node(n.parents[1]);
    if (pb.tracked) {
      for (long i = 0; i < n.grad.numel(); ++i) pb.grad.data[i] -= n.grad.data[i];
    }
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(a, b);
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(av.same_shape(bv), "mul: shape mismatch " + shape_string(av.shape) + " vs " +
                                         shape_string(bv.shape));
  Tensor<S> out = av;
  MapArr<S>(out.data.data(), out.numel()) *= CMapArr<S>(bv.data.data(), bv.numel());
  return g.record(std::move(out), {a.id, b.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    const Tensor<S>& av = g.node(n.parents[0]).value;
    const Tensor<S>& bv = g.node(n.parents[1]).value;
    auto& pa = g.node(n.parents[0]);
    auto& pb = g.node(n.parents[1]);
    for (long i = 0; i < n.grad.numel(); ++i) {
      S go = n.grad.data[i];
      if (pa.tracked) pa.grad.data[i] += go * bv.data[i];
      if (pb.tracked) pb.grad.data[i] += go * av.data[i];
    }
  });
}

/// out = c * a
template <typename S>
Var<S> scale(Var<S> a, S c) {
  Graph<S>& g = *a.graph;
  Tensor<S> out = g.value(a);
  MapArr<S>(out.data.data(), out.numel()) *= c;
  return g.record(std::move(out), {a.id}, [c](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    if (pa.tracked) {
      for (long i = 0; i < n.grad.numel(); ++i) pa.grad.data[i] += c * n.grad.data[i];
    }
  });
}

/// out = a + c
template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Graph<S>& g = *a.graph;
  Tensor<S> out = g.value(a);
  MapArr<S>(out.data.data(), out.numel()) += c;
  return g.record(std::move(out), {a.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    g.add_grad(n.parents[0], n.grad.data.data(), n.grad.numel());
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Graph<S>& g = *a.graph;
  const Tensor<S>& av = g.value(a);
  Tensor<S> out = av;
  for (auto& v : out.data) v = v > S(0) ? v : S(0);
  return g.record(std::move(out), {a.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    if (!pa.tracked) return;
    const Tensor<S>& xv = pa.value;
    for (long i = 0; i < n.grad.numel(); ++i) {
      if (xv.data[i] > S(0)) pa.grad.data[i] += n.grad.data[i];
    }
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Graph<S>& g = *a.graph;
  const Tensor<S>& av = g.value(a);
  Tensor<S> out = av;
  for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
  return g.record(std::move(out), {a.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    if (!pa.tracked) return;
    for (long i = 0; i < n.grad.numel(); ++i) {
      S y = n.value.data[i];
      pa.grad.data[i] += n.grad.data[i] * y * (S(1) - y);
    }
  });
}

/// Clamp to [lo, hi]; gradient passes through the closed interval.
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Graph<S>& g = *a.graph;
  Tensor<S> out = g.value(a);
  for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
  return g.record(std::move(out), {a.id}, [lo, hi](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    if (!pa.tracked) return;
    const Tensor<S>& xv = pa.value;
    for (long i = 0; i < n.grad.numel(); ++i) {
      if (xv.data[i] >= lo && xv.data[i] <= hi) pa.grad.data[i] += n.grad.data[i];
    }
  });
}

template <typename S>
Var<S> clamp01(Var<S> a) {
  return clamp(a, S(0), S(1));
}

template <typename S>
Var<S> reshape(Var<S> a, std::vector<int> new_shape) {
  Graph<S>& g = *a.graph;
  const Tensor<S>& av = g.value(a);
  SEGFOOL_REQUIRE(Tensor<S>::numel_of(new_shape) == av.numel(),
                  "reshape: element count mismatch");
  Tensor<S> out(std::move(new_shape), av.data);
  return g.record(std::move(out), {a.id}, [](Graph<S>& g, int self) {
    auto& n = g.node(self);
    g.add_grad(n.parents[0], n.grad.data.data(), n.grad.numel());
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reduce_mean(Var<S> a) {
  Graph<S>& g = *a.graph;
  const Tensor<S>& av = g.value(a);
  S mean = CMapArr<S>(av.data.data(), av.numel()).sum() / static_cast<S>(av.numel());
  long n_elems = av.numel();
  return g.record(Tensor<S>::scalar(mean), {a.id}, [n_elems](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    if (!pa.tracked) return;
    S go = n.grad.data[0] / static_cast<S>(n_elems);
    for (long i = 0; i < n_elems; ++i) pa.grad.data[i] += go;
  });
}

/// Mean over all elements of (a-b)^2.
template <typename S>
Var<S> mse(Var<S> a, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(a, b);
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(av.same_shape(bv), "mse: shape mismatch " + shape_string(av.shape) + " vs " +
                                         shape_string(bv.shape));
  long n_elems = av.numel();
  S acc = S(0);
  for (long i = 0; i < n_elems; ++i) {
    S d = av.data[i] - bv.data[i];
    acc += d * d;
  }
  acc /= static_cast<S>(n_elems);
  return g.record(Tensor<S>::scalar(acc), {a.id, b.id}, [n_elems](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pa = g.node(n.parents[0]);
    auto& pb = g.node(n.parents[1]);
    const Tensor<S>& av = pa.value;
    const Tensor<S>& bv = pb.value;
    S go = n.grad.data[0] * S(2) / static_cast<S>(n_elems);
    for (long i = 0; i < n_elems; ++i) {
      S d = go * (av.data[i] - bv.data[i]);
      if (pa.tracked) pa.grad.data[i] += d;
      if (pb.tracked) pb.grad.data[i] -= d;
    }
  });
}

/// Mean over elements of w_i * bce(logit_i, target_i), numerically stable.
/// Targets and weights are plain tensors (never differentiated).
template <typename S>
Var<S> weighted_bce_with_logits(Var<S> logits, const Tensor<S>& targets, const Tensor<S>& weights) {
  Graph<S>& g = *logits.graph;
  const Tensor<S>& lv = g.value(logits);
  SEGFOOL_REQUIRE(lv.same_shape(targets) && lv.same_shape(weights),
                  "weighted_bce_with_logits: shape mismatch");
  long n_elems = lv.numel();
  S acc = S(0);
  for (long i = 0; i < n_elems; ++i) {
    S l = lv.data[i];
    S y = targets.data[i];
    // max(l,0) - l*y + log(1+exp(-|l|))
    S loss = (l > S(0) ? l : S(0)) - l * y + std::log(S(1) + std::exp(-std::abs(l)));
    acc += weights.data[i] * loss;
  }
  acc /= static_cast<S>(n_elems);
  auto tgt = std::make_shared<Tensor<S>>(targets);
  auto wts = std::make_shared<Tensor<S>>(weights);
  return g.record(Tensor<S>::scalar(acc), {logits.id}, [tgt, wts, n_elems](Graph<S>& g, int self) {
    auto& n = g.node(self);
    auto& pl = g.node(n.parents[0]);
    if (!pl.tracked) return;
    S go = n.grad.data[0] / static_cast<S>(n_elems);
    for (long i = 0; i < n_elems; ++i) {
      S l = pl.value.data[i];
      S sig = S(1) / (S(1) + std::exp(-l));
      pl.grad.data[i] += go * wts->data[i] * (sig - tgt->data[i]);
    }
  });
}

template <typename S>
Var<S> bce_with_logits(Var<S> logits, const Tensor<S>& targets) {
  return weighted_bce_with_logits(logits, targets,
                                  Tensor<S>::full(targets.shape, S(1)));
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(a, b);
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(av.rank() == 2 && bv.rank() == 2, "matmul: operands must be rank 2");
  SEGFOOL_REQUIRE(av.shape[1] == bv.shape[0],
                  "matmul: inner dimensions disagree " + shape_string(av.shape) + " vs " +
                      shape_string(bv.shape));
  int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<S> out = Tensor<S>::zeros({m, n});
  out.as_matrix(m, n).noalias() = av.as_matrix(m, k) * bv.as_matrix(k, n);
  return g.record(std::move(out), {a.id, b.id}, [m, k, n](Graph<S>& g, int self) {
    auto& nd = g.node(self);
    auto& pa = g.node(nd.parents[0]);
    auto& pb = g.node(nd.parents[1]);
    CMapMat<S> go(nd.grad.data.data(), m, n);
    if (pa.tracked) {
      pa.grad.as_matrix(m, k).noalias() += go * pb.value.as_matrix(k, n).transpose();
    }
    if (pb.tracked) {
      pb.grad.as_matrix(k, n).noalias() += pa.value.as_matrix(m, k).transpose() * go;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace opdetail {

template <typename S>
void im2col(const Tensor<S>& x, int kernel, int stride, int pad, int out_h, int out_w,
            MatX<S>& col) {
  int c_in = x.shape[0], h = x.shape[1], w = x.shape[2];
  col.resize(c_in * kernel * kernel, out_h * out_w);
  for (int c = 0; c < c_in; ++c) {
    for (int u = 0; u < kernel; ++u) {
      for (int v = 0; v < kernel; ++v) {
        int row = (c * kernel + u) * kernel + v;
        for (int oi = 0; oi < out_h; ++oi) {
          int ii = oi * stride - pad + u;
          S* dst = col.data() + static_cast<std::size_t>(row) * (out_h * out_w) +
                   static_cast<std::size_t>(oi) * out_w;
          if (ii < 0 || ii >= h) {
            for (int oj = 0; oj < out_w; ++oj) dst[oj] = S(0);
            continue;
          }
          for (int oj = 0; oj < out_w; ++oj) {
            int jj = oj * stride - pad + v;
            dst[oj] = (jj >= 0 && jj < w) ? x(c, ii, jj) : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatX<S>& col, int kernel, int stride, int pad, int out_h, int out_w,
                Tensor<S>& dx) {
  int c_in = dx.shape[0], h = dx.shape[1], w = dx.shape[2];
  for (int c = 0; c < c_in; ++c) {
    for (int u = 0; u < kernel; ++u) {
      for (int v = 0; v < kernel; ++v) {
        int row = (c * kernel + u) * kernel + v;
        for (int oi = 0; oi < out_h; ++oi) {
          int ii = oi * stride - pad + u;
          if (ii < 0 || ii >= h) continue;
          const S* src = col.data() + static_cast<std::size_t>(row) * (out_h * out_w) +
                         static_cast<std::size_t>(oi) * out_w;
          for (int oj = 0; oj < out_w; ++oj) {
            int jj = oj * stride - pad + v;
            if (jj >= 0 && jj < w) dx(c, ii, jj) += src[oj];
          }
        }
      }
    }
  }
}

}  // namespace opdetail

/// 2-D convolution, x: [C_in, H, W], w: [C_out, C_in, k, k], square odd kernel.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, int stride, int pad) {
  Graph<S>& g = opdetail::same_graph(x, w);
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& wv = g.value(w);
  SEGFOOL_REQUIRE(xv.rank() == 3 && wv.rank() == 4, "conv2d: x must be rank 3, w rank 4");
  SEGFOOL_REQUIRE(wv.shape[2] == wv.shape[3] && wv.shape[2] % 2 == 1,
                  "conv2d: kernel must be square with odd side");
  SEGFOOL_REQUIRE(wv.shape[1] == xv.shape[0], "conv2d: channel mismatch");
  SEGFOOL_REQUIRE(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  int kernel = wv.shape[2];
  int h = xv.shape[1], wd = xv.shape[2];
  SEGFOOL_REQUIRE(stride == 1 || (h % stride == 0 && wd % stride == 0),
                  "conv2d: spatial dims must divide the stride");
  int out_h = (h + 2 * pad - kernel) / stride + 1;
  int out_w = (wd + 2 * pad - kernel) / stride + 1;
  SEGFOOL_REQUIRE(out_h >= 1 && out_w >= 1, "conv2d: empty output");
  int c_out = wv.shape[0], c_in = xv.shape[0];

  auto col = std::make_shared<MatX<S>>();
  opdetail::im2col(xv, kernel, stride, pad, out_h, out_w, *col);
  Tensor<S> out = Tensor<S>::zeros({c_out, out_h, out_w});
  out.as_matrix(c_out, out_h * out_w).noalias() =
      wv.as_matrix(c_out, c_in * kernel * kernel) * (*col);

  return g.record(std::move(out), {x.id, w.id},
                  [col, kernel, stride, pad, out_h, out_w, c_out, c_in](Graph<S>& g, int self) {
                    auto& nd = g.node(self);
                    auto& px = g.node(nd.parents[0]);
                    auto& pw = g.node(nd.parents[1]);
                    CMapMat<S> go(nd.grad.data.data(), c_out, out_h * out_w);
                    if (pw.tracked) {
                      pw.grad.as_matrix(c_out, c_in * kernel * kernel).noalias() +=
                          go * col->transpose();
                    }
                    if (px.tracked) {
                      MatX<S> dcol(c_in * kernel * kernel, out_h * out_w);
                      dcol.noalias() =
                          pw.value.as_matrix(c_out, c_in * kernel * kernel).transpose() * go;
                      opdetail::col2im_add(dcol, kernel, stride, pad, out_h, out_w, px.grad);
                    }
                  });
}

/// Per-channel bias broadcast over the trailing dimensions: x [C, ...] + b [C].
template <typename S>
Var<S> bias_add(Var<S> x, Var<S> b) {
  Graph<S>& g = opdetail::same_graph(x, b);
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& bv = g.value(b);
  SEGFOOL_REQUIRE(bv.rank() == 1 && xv.rank() >= 1 && xv.shape[0] == bv.shape[0],
                  "bias_add: bias must be rank 1 matching leading dim");
  int channels = bv.shape[0];
  long block = xv.numel() / channels;
  Tensor<S> out = xv;
  for (int c = 0; c < channels; ++c) {
    S bc = bv.data[static_cast<std::size_t>(c)];
    S* dst = out.data.data() + static_cast<std::size_t>(c) * block;
    for (long i = 0; i < block; ++i) dst[i] += bc;
  }
  return g.record(std::move(out), {x.id, b.id}, [channels, block](Graph<S>& g, int self) {
    auto& nd = g.node(self);
    auto& px = g.node(nd.parents[0]);
    auto& pb = g.node(nd.parents[1]);
    if (px.tracked) {
      g.add_grad(nd.parents[0], nd.grad.data.data(), nd.grad.numel());
    }
    if (pb.tracked) {
      for (int c = 0; c < channels; ++c) {
        const S* src = nd.grad.data.data() + static_cast<std::size_t>(c) * block;
        S acc = S(0);
        for (long i = 0; i < block; ++i) acc += src[i];
        pb.grad.data[static_cast<std::size_t>(c)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear upsample
// ---------------------------------------------------------------------------

/// Upsample [C, H, W] by an integer factor with bilinear interpolation
/// (half-pixel centers, edges clamped).
template <typename S>
Var<S> upsample_bilinear(Var<S> x, int factor) {
  Graph<S>& g = *x.graph;
  const Tensor<S>& xv = g.value(x);
  SEGFOOL_REQUIRE(xv.rank() == 3, "upsample_bilinear: input must be rank 3");
  SEGFOOL_REQUIRE(factor >= 1, "upsample_bilinear: factor must be a positive integer");
  int channels = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  int oh = h * factor, ow = w * factor;

  struct Lerp {
    int i0, i1;
    S t;
  };
  auto make_axis = [factor](int n, int on) {
    std::vector<Lerp> ax(static_cast<std::size_t>(on));
    for (int o = 0; o < on; ++o) {
      double src = (o + 0.5) / factor - 0.5;
      if (src < 0) src = 0;
      if (src > n - 1) src = n - 1;
      int i0 = static_cast<int>(src);
      int i1 = i0 + 1 < n ? i0 + 1 : n - 1;
      ax[static_cast<std::size_t>(o)] = {i0, i1, static_cast<S>(src - i0)};
    }
    return ax;
  };
  auto rows = std::make_shared<std::vector<Lerp>>(make_axis(h, oh));
  auto cols = std::make_shared<std::vector<Lerp>>(make_axis(w, ow));

  Tensor<S> out = Tensor<S>::zeros({channels, oh, ow});
  for (int c = 0; c < channels; ++c) {
    for (int oi = 0; oi < oh; ++oi) {
      const Lerp& ri = (*rows)[static_cast<std::size_t>(oi)];
      for (int oj = 0; oj < ow; ++oj) {
        const Lerp& cj = (*cols)[static_cast<std::size_t>(oj)];
        S v00 = xv(c, ri.i0, cj.i0), v01 = xv(c, ri.i0, cj.i1);
        S v10 = xv(c, ri.i1, cj.i0), v11 = xv(c, ri.i1, cj.i1);
        S top = v00 + (v01 - v00) * cj.t;
        S bot = v10 + (v11 - v10) * cj.t;
        out(c, oi, oj) = top + (bot - top) * ri.t;
      }
    }
  }
  return g.record(std::move(out), {x.id},
                  [rows, cols, channels, oh, ow](Graph<S>& g, int self) {
                    auto& nd = g.node(self);
                    auto& px = g.node(nd.parents[0]);
                    if (!px.tracked) return;
                    for (int c = 0; c < channels; ++c) {
                      for (int oi = 0; oi < oh; ++oi) {
                        const Lerp& ri = (*rows)[static_cast<std::size_t>(oi)];
                        for (int oj = 0; oj < ow; ++oj) {
                          const Lerp& cj = (*cols)[static_cast<std::size_t>(oj)];
                          S go = nd.grad(c, oi, oj);
                          px.grad(c, ri.i0, cj.i0) += go * (S(1) - ri.t) * (S(1) - cj.t);
                          px.grad(c, ri.i0, cj.i1) += go * (S(1) - ri.t) * cj.t;
                          px.grad(c, ri.i1, cj.i0) += go * ri.t * (S(1) - cj.t);
                          px.grad(c, ri.i1, cj.i1) += go * ri.t * cj.t;
                        }
                      }
                    }
                  });
}

}  // namespace segfool
