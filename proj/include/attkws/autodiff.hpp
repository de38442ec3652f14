/* Copyright 2026 The attkws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Reverse-mode automatic differentiation on an explicit tape.
//
// Every operation appends one node holding the forward value and a closure
// that scatters the node's output gradient into its parents. Nodes are
// appended in evaluation order, so parents always precede their consumers and
// a single reverse sweep visits each node exactly once. Summation order is
// fixed (row-major, sequential), which keeps repeated runs bit-identical on a
// given platform.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attkws/errors.hpp"
#include "attkws/tensor.hpp"

namespace attkws {

template <class Real>
class Tape;

// Lightweight handle to a tape node.
template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  int id = -1;

  const Tensor<Real>& value() const { return tape->val(id); }
};

template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated only when needs_grad
    std::vector<int> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var<Real> leaf(Tensor<Real> value, bool needs_grad = false) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Tensor<Real>::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<Real> record(Tensor<Real> value, std::vector<int> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents) {
      if (nodes_[static_cast<size_t>(p)].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) {
      n.grad = Tensor<Real>::zeros(n.value.shape);
      n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<Real>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  Tensor<Real>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) throw ShapeError("tape: gradient requested for non-grad node");
    return n.grad;
  }

  // Gradient buffer of `id` if that node participates in differentiation.
  Tensor<Real>* grad_if(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    return n.needs_grad ? &n.grad : nullptr;
  }

  // Reverse sweep from a scalar loss. Single use per tape.
  void backward(Var<Real> loss) {
    Node& top = nodes_[static_cast<size_t>(loss.id)];
    if (top.value.size() != 1) throw ShapeError("backward: loss must be scalar");
    if (!top.needs_grad) return;
    top.grad.data[0] = Real(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.needs_grad && n.backward) n.backward(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

template <class Real>
inline void require_same_tape(Var<Real> a, Var<Real> b, const char* who) {
  if (a.tape != b.tape) throw ShapeError(std::string(who) + ": vars from different tapes");
}

template <class Real>
inline void require_finite(const Tensor<Real>& t, const char* who) {
  if (has_nan(t)) throw NumericError(std::string(who) + ": NaN input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "add");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor<Real> out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  const int pa = a.id, pb = b.id;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
    }
    if (auto* gb = t.grad_if(pb)) {
      for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i];
    }
  });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "mul");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (!av.same_shape(bv)) {
    throw ShapeError("mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor<Real> out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  const int pa = a.id, pb = b.id;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    const Tensor<Real>& av2 = t.val(pa);
    const Tensor<Real>& bv2 = t.val(pb);
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * bv2.data[i];
    }
    if (auto* gb = t.grad_if(pb)) {
      for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i] * av2.data[i];
    }
  });
}

// Multiply by a compile-time constant scalar.
template <class Real>
Var<Real> scale(Var<Real> a, Real c) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v *= c;
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa, c](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += c * g.data[i];
    }
  });
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    const Tensor<Real>& x = t.val(pa);
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) {
        if (x.data[i] > Real(0)) ga->data[i] += g.data[i];
      }
    }
  });
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = std::tanh(v);
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    const Tensor<Real>& y = t.val(id);
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) {
        ga->data[i] += g.data[i] * (Real(1) - y.data[i] * y.data[i]);
      }
    }
  });
}

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = Real(1) / (Real(1) + std::exp(-v));
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    const Tensor<Real>& y = t.val(id);
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) {
        ga->data[i] += g.data[i] * y.data[i] * (Real(1) - y.data[i]);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

// Contiguous sub-range of the flattened parent, reinterpreted as `out_shape`.
template <class Real>
Var<Real> slice_flat(Var<Real> a, int64_t offset, Shape out_shape) {
  const Tensor<Real>& av = a.value();
  const int64_t len = numel(out_shape);
  if (offset < 0 || offset + len > av.size()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + len) + ") out of bounds for " +
                     shape_str(av.shape));
  }
  Tensor<Real> out(std::move(out_shape),
                   std::vector<Real>(av.data.begin() + offset, av.data.begin() + offset + len));
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa, offset](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) ga->data[offset + static_cast<int64_t>(i)] += g.data[i];
    }
  });
}

template <class Real>
Var<Real> slice(Var<Real> a, int start, int len) {
  return slice_flat(a, start, Shape{len});
}

// Row i of a [m x n] matrix as a length-n vector.
template <class Real>
Var<Real> row(Var<Real> a, int i) {
  const Tensor<Real>& av = a.value();
  if (av.rank() != 2) throw ShapeError("row: expected 2-d input, got " + shape_str(av.shape));
  if (i < 0 || i >= av.dim(0)) throw ShapeError("row: index out of range");
  const int n = av.dim(1);
  return slice_flat(a, static_cast<int64_t>(i) * n, Shape{n});
}

template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape) {
  const Tensor<Real>& av = a.value();
  if (numel(shape) != av.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(av.shape) + " as " + shape_str(shape));
  }
  Tensor<Real> out(std::move(shape), av.data);
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    if (auto* ga = t.grad_if(pa)) {
      for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
    }
  });
}

template <class Real>
Var<Real> concat(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "concat");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (av.rank() != 1 || bv.rank() != 1) throw ShapeError("concat: expects vectors");
  Tensor<Real> out = Tensor<Real>::zeros({av.dim(0) + bv.dim(0)});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
  const int pa = a.id, pb = b.id;
  const int64_t na = av.size();
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb, na](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    if (auto* ga = t.grad_if(pa)) {
      for (int64_t i = 0; i < na; ++i) ga->data[i] += g.data[i];
    }
    if (auto* gb = t.grad_if(pb)) {
      for (size_t i = na; i < g.data.size(); ++i) gb->data[i - na] += g.data[i];
    }
  });
}

// Stack T equal-length vectors into a [T x n] matrix.
template <class Real>
Var<Real> stack_rows(const std::vector<Var<Real>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input");
  Tape<Real>* tape = rows[0].tape;
  const int n = rows[0].value().dim(0);
  const int T = static_cast<int>(rows.size());
  Tensor<Real> out = Tensor<Real>::zeros({T, n});
  std::vector<int> parents(rows.size());
  for (int t = 0; t < T; ++t) {
    const Tensor<Real>& rv = rows[static_cast<size_t>(t)].value();
    if (rv.rank() != 1 || rv.dim(0) != n) throw ShapeError("stack_rows: ragged rows");
    std::copy(rv.data.begin(), rv.data.end(), out.data.begin() + static_cast<int64_t>(t) * n);
    parents[static_cast<size_t>(t)] = rows[static_cast<size_t>(t)].id;
  }
  auto ps = parents;
  return tape->record(std::move(out), std::move(parents), [ps, n](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    for (size_t r = 0; r < ps.size(); ++r) {
      if (auto* gr = t.grad_if(ps[r])) {
        const Real* src = g.data.data() + r * static_cast<size_t>(n);
        for (int i = 0; i < n; ++i) gr->data[i] += src[i];
      }
    }
  });
}

template <class Real>
Var<Real> sum(Var<Real> a) {
  const Tensor<Real>& av = a.value();
  Real s = 0;
  for (Real v : av.data) s += v;
  const int pa = a.id;
  return a.tape->record(Tensor<Real>::scalar(s), {pa}, [pa](Tape<Real>& t, int id) {
    const Real g = t.node(id).grad.data[0];
    if (auto* ga = t.grad_if(pa)) {
      for (Real& v : ga->data) v += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) {
    throw ShapeError("matmul: expects 2-d operands, got " + shape_str(av.shape) + " and " +
                     shape_str(bv.shape));
  }
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(av.dim(1)) + " vs " +
                     std::to_string(bv.dim(0)));
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  {
    const Real* A = av.data.data();
    const Real* B = bv.data.data();
    Real* C = out.data.data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const Real aik = A[static_cast<size_t>(i) * k + kk];
        const Real* Brow = B + static_cast<size_t>(kk) * n;
        Real* Crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }
  const int pa = a.id, pb = b.id;
  return a.tape->record(std::move(out), {pa, pb}, [pa, pb, m, k, n](Tape<Real>& t, int id) {
    const Real* G = t.node(id).grad.data.data();
    // dA = dC . B^T
    if (auto* ga = t.grad_if(pa)) {
      const Real* B = t.val(pb).data.data();
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const Real* Grow = G + static_cast<size_t>(i) * n;
          const Real* Brow = B + static_cast<size_t>(kk) * n;
          Real acc = 0;
          for (int j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
          ga->data[static_cast<size_t>(i) * k + kk] += acc;
        }
      }
    }
    // dB = A^T . dC
    if (auto* gb = t.grad_if(pb)) {
      const Real* A = t.val(pa).data.data();
      for (int i = 0; i < m; ++i) {
        const Real* Grow = G + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const Real aik = A[static_cast<size_t>(i) * k + kk];
          Real* GBrow = gb->data.data() + static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) GBrow[j] += aik * Grow[j];
        }
      }
    }
  });
}

// y = x . B for a vector x: [k] . [k x n] -> [n].
template <class Real>
Var<Real> vecmat(Var<Real> x, Var<Real> b) {
  detail::require_same_tape(x, b, "vecmat");
  const Tensor<Real>& xv = x.value();
  const Tensor<Real>& bv = b.value();
  if (xv.rank() != 1 || bv.rank() != 2 || xv.dim(0) != bv.dim(0)) {
    throw ShapeError("vecmat: shapes " + shape_str(xv.shape) + " and " + shape_str(bv.shape));
  }
  const int k = xv.dim(0), n = bv.dim(1);
  Tensor<Real> out = Tensor<Real>::zeros({n});
  {
    const Real* X = xv.data.data();
    const Real* B = bv.data.data();
    Real* Y = out.data.data();
    for (int kk = 0; kk < k; ++kk) {
      const Real xk = X[kk];
      const Real* Brow = B + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) Y[j] += xk * Brow[j];
    }
  }
  const int px = x.id, pb = b.id;
  return x.tape->record(std::move(out), {px, pb}, [px, pb, k, n](Tape<Real>& t, int id) {
    const Real* G = t.node(id).grad.data.data();
    if (auto* gx = t.grad_if(px)) {
      const Real* B = t.val(pb).data.data();
      for (int kk = 0; kk < k; ++kk) {
        const Real* Brow = B + static_cast<size_t>(kk) * n;
        Real acc = 0;
        for (int j = 0; j < n; ++j) acc += G[j] * Brow[j];
        gx->data[kk] += acc;
      }
    }
    if (auto* gb = t.grad_if(pb)) {
      const Real* X = t.val(px).data.data();
      for (int kk = 0; kk < k; ++kk) {
        const Real xk = X[kk];
        Real* GBrow = gb->data.data() + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) GBrow[j] += xk * G[j];
      }
    }
  });
}

// y = A . x: [m x n] . [n] -> [m].
template <class Real>
Var<Real> matvec(Var<Real> a, Var<Real> x) {
  detail::require_same_tape(a, x, "matvec");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& xv = x.value();
  if (av.rank() != 2 || xv.rank() != 1 || av.dim(1) != xv.dim(0)) {
    throw ShapeError("matvec: shapes " + shape_str(av.shape) + " and " + shape_str(xv.shape));
  }
  const int m = av.dim(0), n = av.dim(1);
  Tensor<Real> out = Tensor<Real>::zeros({m});
  for (int i = 0; i < m; ++i) {
    const Real* Arow = av.data.data() + static_cast<size_t>(i) * n;
    Real acc = 0;
    for (int j = 0; j < n; ++j) acc += Arow[j] * xv.data[j];
    out.data[static_cast<size_t>(i)] = acc;
  }
  const int pa = a.id, px = x.id;
  return a.tape->record(std::move(out), {pa, px}, [pa, px, m, n](Tape<Real>& t, int id) {
    const Real* G = t.node(id).grad.data.data();
    if (auto* ga = t.grad_if(pa)) {
      const Real* X = t.val(px).data.data();
      for (int i = 0; i < m; ++i) {
        Real* GArow = ga->data.data() + static_cast<size_t>(i) * n;
        const Real gi = G[i];
        for (int j = 0; j < n; ++j) GArow[j] += gi * X[j];
      }
    }
    if (auto* gx = t.grad_if(px)) {
      const Real* A = t.val(pa).data.data();
      for (int i = 0; i < m; ++i) {
        const Real* Arow = A + static_cast<size_t>(i) * n;
        const Real gi = G[i];
        for (int j = 0; j < n; ++j) gx->data[j] += gi * Arow[j];
      }
    }
  });
}

// Weighted average over time: [T x D], [T] -> [D].
template <class Real>
Var<Real> mean_weighted(Var<Real> values, Var<Real> weights) {
  detail::require_same_tape(values, weights, "mean_weighted");
  const Tensor<Real>& vv = values.value();
  const Tensor<Real>& wv = weights.value();
  if (vv.rank() != 2 || wv.rank() != 1 || vv.dim(0) != wv.dim(0)) {
    throw ShapeError("mean_weighted: shapes " + shape_str(vv.shape) + " and " +
                     shape_str(wv.shape));
  }
  const int T = vv.dim(0), D = vv.dim(1);
  Tensor<Real> out = Tensor<Real>::zeros({D});
  for (int t = 0; t < T; ++t) {
    const Real w = wv.data[static_cast<size_t>(t)];
    const Real* Vrow = vv.data.data() + static_cast<size_t>(t) * D;
    for (int d = 0; d < D; ++d) out.data[static_cast<size_t>(d)] += w * Vrow[d];
  }
  const int pv = values.id, pw = weights.id;
  return values.tape->record(std::move(out), {pv, pw}, [pv, pw, T, D](Tape<Real>& t, int id) {
    const Real* G = t.node(id).grad.data.data();
    if (auto* gv = t.grad_if(pv)) {
      const Real* W = t.val(pw).data.data();
      for (int ti = 0; ti < T; ++ti) {
        Real* GVrow = gv->data.data() + static_cast<size_t>(ti) * D;
        const Real w = W[ti];
        for (int d = 0; d < D; ++d) GVrow[d] += w * G[d];
      }
    }
    if (auto* gw = t.grad_if(pw)) {
      const Real* V = t.val(pv).data.data();
      for (int ti = 0; ti < T; ++ti) {
        const Real* Vrow = V + static_cast<size_t>(ti) * D;
        Real acc = 0;
        for (int d = 0; d < D; ++d) acc += Vrow[d] * G[d];
        gw->data[static_cast<size_t>(ti)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax and loss

template <class Real>
Var<Real> softmax(Var<Real> a) {
  const Tensor<Real>& av = a.value();
  if (av.rank() != 1) throw ShapeError("softmax: expects a vector");
  detail::require_finite(av, "softmax");
  Tensor<Real> out = av;
  Real mx = out.data[0];
  for (Real v : out.data) mx = std::max(mx, v);
  Real denom = 0;
  for (Real& v : out.data) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (Real& v : out.data) v /= denom;
  const int pa = a.id;
  return a.tape->record(std::move(out), {pa}, [pa](Tape<Real>& t, int id) {
    const Tensor<Real>& g = t.node(id).grad;
    const Tensor<Real>& y = t.val(id);
    if (auto* ga = t.grad_if(pa)) {
      Real dot = 0;
      for (size_t i = 0; i < g.data.size(); ++i) dot += g.data[i] * y.data[i];
      for (size_t i = 0; i < g.data.size(); ++i) {
        ga->data[i] += y.data[i] * (g.data[i] - dot);
      }
    }
  });
}

// -log softmax(logits)[target], evaluated in log space. When the target is
// the arg-max the result is log1p of the residual sum, which stays accurate
// down to ~1e-9 even in single precision.
template <class Real>
Var<Real> cross_entropy(Var<Real> logits, int target) {
  const Tensor<Real>& lv = logits.value();
  if (lv.rank() != 1 || lv.dim(0) < 2) {
    throw ShapeError("cross_entropy: expects a vector of >= 2 logits");
  }
  if (target < 0 || target >= lv.dim(0)) {
    throw ShapeError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(lv.dim(0)) + " classes");
  }
  detail::require_finite(lv, "cross_entropy");
  const int n = lv.dim(0);
  int imax = 0;
  for (int i = 1; i < n; ++i) {
    if (lv.data[static_cast<size_t>(i)] > lv.data[static_cast<size_t>(imax)]) imax = i;
  }
  const Real mx = lv.data[static_cast<size_t>(imax)];
  Real rest = 0;  // sum of exp(x - mx) excluding the max term itself
  for (int i = 0; i < n; ++i) {
    if (i != imax) rest += std::exp(lv.data[static_cast<size_t>(i)] - mx);
  }
  const Real loss = (mx - lv.data[static_cast<size_t>(target)]) + std::log1p(rest);

  std::vector<Real> probs(static_cast<size_t>(n));
  const Real denom = Real(1) + rest;
  for (int i = 0; i < n; ++i) {
    probs[static_cast<size_t>(i)] = std::exp(lv.data[static_cast<size_t>(i)] - mx) / denom;
  }
  const int pl = logits.id;
  return logits.tape->record(
      Tensor<Real>::scalar(loss), {pl},
      [pl, target, probs = std::move(probs)](Tape<Real>& t, int id) {
        const Real g = t.node(id).grad.data[0];
        if (auto* gl = t.grad_if(pl)) {
          for (size_t i = 0; i < probs.size(); ++i) {
            Real d = probs[i];
            if (static_cast<int>(i) == target) d -= Real(1);
            gl->data[i] += g * d;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution over the time axis only (same padding, kernel extent 1 in the
// frequency axis): x [T x F x Cin], kernels [kt x 1 x Cin x Cout], bias [Cout].

template <class Real>
Var<Real> conv_time(Var<Real> x, Var<Real> kernels, Var<Real> bias) {
  detail::require_same_tape(x, kernels, "conv_time");
  detail::require_same_tape(x, bias, "conv_time");
  const Tensor<Real>& xv = x.value();
  const Tensor<Real>& kv = kernels.value();
  const Tensor<Real>& bv = bias.value();
  if (xv.rank() != 3) throw ShapeError("conv_time: input must be [T x F x Cin]");
  if (kv.rank() != 4 || kv.dim(1) != 1) {
    throw ShapeError("conv_time: kernels must be [kt x 1 x Cin x Cout], got " +
                     shape_str(kv.shape));
  }
  const int T = xv.dim(0), F = xv.dim(1), Cin = xv.dim(2);
  const int kt = kv.dim(0), Cout = kv.dim(3);
  if (kt % 2 == 0) throw ShapeError("conv_time: kernel time extent must be odd");
  if (kv.dim(2) != Cin) {
    throw ShapeError("conv_time: kernel Cin " + std::to_string(kv.dim(2)) + " vs input Cin " +
                     std::to_string(Cin));
  }
  if (bv.shape != Shape{Cout}) throw ShapeError("conv_time: bias must be [Cout]");
  const int c = kt / 2;

  Tensor<Real> out = Tensor<Real>::zeros({T, F, Cout});
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      Real* orow = out.data.data() + (static_cast<size_t>(t) * F + f) * Cout;
      for (int co = 0; co < Cout; ++co) orow[co] = bv.data[static_cast<size_t>(co)];
      for (int dt = 0; dt < kt; ++dt) {
        const int ts = t + dt - c;
        if (ts < 0 || ts >= T) continue;
        const Real* xrow = xv.data.data() + (static_cast<size_t>(ts) * F + f) * Cin;
        const Real* krow = kv.data.data() + static_cast<size_t>(dt) * Cin * Cout;
        for (int ci = 0; ci < Cin; ++ci) {
          const Real xval = xrow[ci];
          const Real* kk = krow + static_cast<size_t>(ci) * Cout;
          for (int co = 0; co < Cout; ++co) orow[co] += xval * kk[co];
        }
      }
    }
  }

  const int px = x.id, pk = kernels.id, pb = bias.id;
  return x.tape->record(
      std::move(out), {px, pk, pb},
      [px, pk, pb, T, F, Cin, kt, Cout, c](Tape<Real>& t, int id) {
        const Tensor<Real>& g = t.node(id).grad;
        const Real* G = g.data.data();
        if (auto* gb = t.grad_if(pb)) {
          for (int ti = 0; ti < T; ++ti) {
            for (int f = 0; f < F; ++f) {
              const Real* grow = G + (static_cast<size_t>(ti) * F + f) * Cout;
              for (int co = 0; co < Cout; ++co) gb->data[static_cast<size_t>(co)] += grow[co];
            }
          }
        }
        if (auto* gk = t.grad_if(pk)) {
          const Real* X = t.val(px).data.data();
          for (int ti = 0; ti < T; ++ti) {
            for (int dt = 0; dt < kt; ++dt) {
              const int ts = ti + dt - c;
              if (ts < 0 || ts >= T) continue;
              for (int f = 0; f < F; ++f) {
                const Real* xrow = X + (static_cast<size_t>(ts) * F + f) * Cin;
                const Real* grow = G + (static_cast<size_t>(ti) * F + f) * Cout;
                Real* krow = gk->data.data() + static_cast<size_t>(dt) * Cin * Cout;
                for (int ci = 0; ci < Cin; ++ci) {
                  const Real xval = xrow[ci];
                  Real* kk = krow + static_cast<size_t>(ci) * Cout;
                  for (int co = 0; co < Cout; ++co) kk[co] += xval * grow[co];
                }
              }
            }
          }
        }
        if (auto* gx = t.grad_if(px)) {
          const Real* K = t.val(pk).data.data();
          for (int ti = 0; ti < T; ++ti) {
            for (int dt = 0; dt < kt; ++dt) {
              const int ts = ti + dt - c;
              if (ts < 0 || ts >= T) continue;
              for (int f = 0; f < F; ++f) {
                Real* gxrow = gx->data.data() + (static_cast<size_t>(ts) * F + f) * Cin;
                const Real* grow = G + (static_cast<size_t>(ti) * F + f) * Cout;
                const Real* krow = K + static_cast<size_t>(dt) * Cin * Cout;
                for (int ci = 0; ci < Cin; ++ci) {
                  const Real* kk = krow + static_cast<size_t>(ci) * Cout;
                  Real acc = 0;
                  for (int co = 0; co < Cout; ++co) acc += kk[co] * grow[co];
                  gxrow[ci] += acc;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization over the trailing channel axis. All leading axes are
// treated as the normalization set, so a [N x C] batch normalizes over N and
// a [T x F x C] feature map over T*F.

enum class BnMode { train, infer };

// Per-channel statistics observed during one train-mode forward. The caller
// folds these into the running averages; keeping the fold outside the op lets
// independent per-example tapes run in parallel.
template <class Real>
struct BnObserved {
  std::vector<Real> mean;
  std::vector<Real> var;  // biased
};

template <class Real>
struct BatchNormState {
  Tensor<Real> running_mean;
  Tensor<Real> running_var;
  Real momentum = Real(0.99);

  static BatchNormState fresh(int channels, Real momentum = Real(0.99)) {
    BatchNormState s;
    s.running_mean = Tensor<Real>::zeros({channels});
    s.running_var = Tensor<Real>::full({channels}, Real(1));
    s.momentum = momentum;
    return s;
  }

  void fold(const BnObserved<Real>& obs) {
    for (size_t c = 0; c < obs.mean.size(); ++c) {
      running_mean.data[c] = momentum * running_mean.data[c] + (Real(1) - momentum) * obs.mean[c];
      running_var.data[c] = momentum * running_var.data[c] + (Real(1) - momentum) * obs.var[c];
    }
  }
};

template <class Real>
Var<Real> batch_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                     const Tensor<Real>& running_mean, const Tensor<Real>& running_var,
                     BnMode mode, Real eps = Real(1e-3), BnObserved<Real>* observed = nullptr) {
  detail::require_same_tape(x, gamma, "batch_norm");
  detail::require_same_tape(x, beta, "batch_norm");
  const Tensor<Real>& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("batch_norm: input must have a channel axis");
  const int C = xv.dim(xv.rank() - 1);
  const int64_t N = xv.size() / C;
  if (N < 1) throw ShapeError("batch_norm: empty batch");
  if (gamma.value().shape != Shape{C} || beta.value().shape != Shape{C}) {
    throw ShapeError("batch_norm: gamma/beta must be [C]");
  }
  if (running_mean.shape != Shape{C} || running_var.shape != Shape{C}) {
    throw ShapeError("batch_norm: running stats must be [C]");
  }

  std::vector<Real> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  if (mode == BnMode::train) {
    for (int c2 = 0; c2 < C; ++c2) {
      Real m = 0;
      for (int64_t i = 0; i < N; ++i) m += xv.data[static_cast<size_t>(i) * C + c2];
      m /= static_cast<Real>(N);
      Real v = 0;
      for (int64_t i = 0; i < N; ++i) {
        const Real d = xv.data[static_cast<size_t>(i) * C + c2] - m;
        v += d * d;
      }
      v /= static_cast<Real>(N);
      mean[static_cast<size_t>(c2)] = m;
      var[static_cast<size_t>(c2)] = v;
    }
    if (observed) {
      observed->mean = mean;
      observed->var = var;
    }
  } else {
    mean.assign(running_mean.data.begin(), running_mean.data.end());
    var.assign(running_var.data.begin(), running_var.data.end());
  }

  std::vector<Real> invstd(static_cast<size_t>(C));
  for (int c2 = 0; c2 < C; ++c2) {
    invstd[static_cast<size_t>(c2)] = Real(1) / std::sqrt(var[static_cast<size_t>(c2)] + eps);
  }

  const Tensor<Real>& gv = gamma.value();
  const Tensor<Real>& bv = beta.value();
  Tensor<Real> out = xv;
  std::vector<Real> xhat(xv.data.size());
  for (int64_t i = 0; i < N; ++i) {
    for (int c2 = 0; c2 < C; ++c2) {
      const size_t idx = static_cast<size_t>(i) * C + c2;
      const Real h = (xv.data[idx] - mean[static_cast<size_t>(c2)]) * invstd[static_cast<size_t>(c2)];
      xhat[idx] = h;
      out.data[idx] = gv.data[static_cast<size_t>(c2)] * h + bv.data[static_cast<size_t>(c2)];
    }
  }

  const int px = x.id, pg = gamma.id, pb = beta.id;
  const bool train = mode == BnMode::train;
  return x.tape->record(
      std::move(out), {px, pg, pb},
      [px, pg, pb, C, N, train, xhat = std::move(xhat),
       invstd = std::move(invstd)](Tape<Real>& t, int id) {
        const Tensor<Real>& g = t.node(id).grad;
        if (auto* gb = t.grad_if(pb)) {
          for (int64_t i = 0; i < N; ++i) {
            for (int c2 = 0; c2 < C; ++c2) {
              gb->data[static_cast<size_t>(c2)] += g.data[static_cast<size_t>(i) * C + c2];
            }
          }
        }
        if (auto* gg = t.grad_if(pg)) {
          for (int64_t i = 0; i < N; ++i) {
            for (int c2 = 0; c2 < C; ++c2) {
              const size_t idx = static_cast<size_t>(i) * C + c2;
              gg->data[static_cast<size_t>(c2)] += g.data[idx] * xhat[idx];
            }
          }
        }
        if (auto* gx = t.grad_if(px)) {
          const Tensor<Real>& gv2 = t.val(pg);
          if (!train) {
            for (int64_t i = 0; i < N; ++i) {
              for (int c2 = 0; c2 < C; ++c2) {
                const size_t idx = static_cast<size_t>(i) * C + c2;
                gx->data[idx] += g.data[idx] * gv2.data[static_cast<size_t>(c2)] *
                                 invstd[static_cast<size_t>(c2)];
              }
            }
            return;
          }
          // Train mode: gradients flow through the batch statistics.
          for (int c2 = 0; c2 < C; ++c2) {
            Real sum_g = 0, sum_gh = 0;
            for (int64_t i = 0; i < N; ++i) {
              const size_t idx = static_cast<size_t>(i) * C + c2;
              sum_g += g.data[idx];
              sum_gh += g.data[idx] * xhat[idx];
            }
            const Real mean_g = sum_g / static_cast<Real>(N);
            const Real mean_gh = sum_gh / static_cast<Real>(N);
            const Real k = gv2.data[static_cast<size_t>(c2)] * invstd[static_cast<size_t>(c2)];
            for (int64_t i = 0; i < N; ++i) {
              const size_t idx = static_cast<size_t>(i) * C + c2;
              gx->data[idx] += k * (g.data[idx] - mean_g - xhat[idx] * mean_gh);
            }
          }
        }
      });
}

// Spec-shaped convenience wrapper: normalizes and, in train mode, updates the
// running statistics in place. Sequential use only.
template <class Real>
Var<Real> batch_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, BatchNormState<Real>& state,
                     BnMode mode, Real eps = Real(1e-3)) {
  BnObserved<Real> obs;
  Var<Real> out = batch_norm(x, gamma, beta, state.running_mean, state.running_var, mode, eps,
                             mode == BnMode::train ? &obs : nullptr);
  if (mode == BnMode::train) state.fold(obs);
  return out;
}

// ---------------------------------------------------------------------------
// LSTM building blocks, composed from the primitives above. Gate layout in
// the 4H axis is (input, forget, cell, output).

template <class Real>
struct LstmDirParamVars {
  Var<Real> W;  // [I x 4H]
  Var<Real> U;  // [H x 4H]
  Var<Real> b;  // [4H]
};

template <class Real>
std::pair<Var<Real>, Var<Real>> lstm_step(Var<Real> x_t, Var<Real> h_prev, Var<Real> c_prev,
                                          const LstmDirParamVars<Real>& p) {
  const int H = h_prev.value().dim(0);
  const Tensor<Real>& wv = p.W.value();
  const Tensor<Real>& uv = p.U.value();
  if (wv.rank() != 2 || wv.dim(0) != x_t.value().dim(0) || wv.dim(1) != 4 * H) {
    throw ShapeError("lstm_step: W must be [I x 4H], got " + shape_str(wv.shape));
  }
  if (uv.shape != Shape{H, 4 * H}) {
    throw ShapeError("lstm_step: U must be [H x 4H], got " + shape_str(uv.shape));
  }
  if (p.b.value().shape != Shape{4 * H}) throw ShapeError("lstm_step: b must be [4H]");

  Var<Real> pre = add(add(vecmat(x_t, p.W), vecmat(h_prev, p.U)), p.b);
  Var<Real> gate_i = sigmoid(slice(pre, 0, H));
  Var<Real> gate_f = sigmoid(slice(pre, H, H));
  Var<Real> gate_g = tanh(slice(pre, 2 * H, H));
  Var<Real> gate_o = sigmoid(slice(pre, 3 * H, H));
  Var<Real> c = add(mul(gate_f, c_prev), mul(gate_i, gate_g));
  Var<Real> h = mul(gate_o, tanh(c));
  return {h, c};
}

// Bidirectional LSTM over x [T x I] with zero initial states; output rows are
// [h_fwd(t) || h_bwd(t)], shape [T x 2H].
template <class Real>
Var<Real> bilstm(Var<Real> x, const LstmDirParamVars<Real>& fwd, const LstmDirParamVars<Real>& bwd,
                 int hidden) {
  const Tensor<Real>& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("bilstm: input must be [T x I]");
  const int T = xv.dim(0);
  Tape<Real>& tape = *x.tape;

  std::vector<Var<Real>> xs(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) xs[static_cast<size_t>(t)] = row(x, t);

  std::vector<Var<Real>> h_fwd(static_cast<size_t>(T)), h_bwd(static_cast<size_t>(T));
  {
    Var<Real> h = tape.leaf(Tensor<Real>::zeros({hidden}));
    Var<Real> c = tape.leaf(Tensor<Real>::zeros({hidden}));
    for (int t = 0; t < T; ++t) {
      std::tie(h, c) = lstm_step(xs[static_cast<size_t>(t)], h, c, fwd);
      h_fwd[static_cast<size_t>(t)] = h;
    }
  }
  {
    Var<Real> h = tape.leaf(Tensor<Real>::zeros({hidden}));
    Var<Real> c = tape.leaf(Tensor<Real>::zeros({hidden}));
    for (int t = T - 1; t >= 0; --t) {
      std::tie(h, c) = lstm_step(xs[static_cast<size_t>(t)], h, c, bwd);
      h_bwd[static_cast<size_t>(t)] = h;
    }
  }

  std::vector<Var<Real>> rows(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    rows[static_cast<size_t>(t)] = concat(h_fwd[static_cast<size_t>(t)], h_bwd[static_cast<size_t>(t)]);
  }
  return stack_rows(rows);
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.

struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::vector<std::string> failures;
};

// f receives leaves for `inputs` (in order) and must return a scalar Var.
// Relative error uses max(|analytic|, |numeric|) as the denominator; element
// pairs within 1e-10 absolutely are treated as exact to absorb difference
// noise on true zeros.
template <class Real, class Fn>
GradCheckResult gradcheck(Fn&& f, const std::vector<Tensor<Real>>& inputs, Real eps = Real(1e-5),
                          double tol = 1e-4) {
  GradCheckResult result;

  std::vector<Tensor<Real>> analytic;
  {
    Tape<Real> tape;
    std::vector<Var<Real>> vars;
    vars.reserve(inputs.size());
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<Real> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v.id));
  }

  auto eval = [&](const std::vector<Tensor<Real>>& pert) -> Real {
    Tape<Real> tape;
    std::vector<Var<Real>> vars;
    vars.reserve(pert.size());
    for (const auto& in : pert) vars.push_back(tape.leaf(in, false));
    return f(tape, vars).value().data[0];
  };

  std::vector<Tensor<Real>> work = inputs;
  for (size_t vi = 0; vi < inputs.size(); ++vi) {
    for (size_t ei = 0; ei < inputs[vi].data.size(); ++ei) {
      const Real orig = work[vi].data[ei];
      const Real h = eps * std::max(Real(1), std::abs(orig));
      work[vi].data[ei] = orig + h;
      const Real fp = eval(work);
      work[vi].data[ei] = orig - h;
      const Real fm = eval(work);
      work[vi].data[ei] = orig;

      const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                             (2.0 * static_cast<double>(h));
      const double exact = static_cast<double>(analytic[vi].data[ei]);
      const double diff = std::abs(exact - numeric);
      double rel = 0.0;
      if (diff > 1e-10) {
        rel = diff / std::max(std::abs(exact), std::abs(numeric));
      }
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.checked;
      if (rel > tol) {
        result.pass = false;
        if (result.failures.size() < 16) {
          result.failures.push_back("input " + std::to_string(vi) + " elem " + std::to_string(ei) +
                                    ": analytic " + std::to_string(exact) + " numeric " +
                                    std::to_string(numeric) + " rel " + std::to_string(rel));
        }
      }
    }
  }
  return result;
}

}  // namespace attkws
