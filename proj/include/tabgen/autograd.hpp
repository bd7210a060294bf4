#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tabgen/tensor.hpp"

namespace tabgen::ag {

/// One node of the reverse-mode tape. Ops build a DAG of these via
/// shared_ptr; backward() runs a topological sweep from the loss.
/// Reductions and inner products accumulate in double regardless of
/// the storage type.
struct Node {
  Tensor value;
  std::vector<real> grad;
  bool requires_grad = false;
  bool grad_set = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // pushes this->grad into parents

  explicit Node(Tensor v, bool rg = false)
      : value(std::move(v)), requires_grad(rg) {
    if (requires_grad) grad.assign(value.size(), real(0));
  }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), real(0));
  }
  void zero_grad() {
    std::fill(grad.begin(), grad.end(), real(0));
    grad_set = false;
  }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor t) { return std::make_shared<Node>(std::move(t)); }
inline Var param(Tensor t) { return std::make_shared<Node>(std::move(t), true); }

inline void accumulate(Node* n, std::size_t i, real v) {
  n->grad[i] += v;
  n->grad_set = true;
}

namespace detail {

inline Var make(Tensor value, std::vector<Var> parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = std::make_shared<Node>(std::move(value), rg);
  n->parents = std::move(parents);
  return n;
}

// b broadcasts over a if b's shape is a trailing suffix of a's shape.
inline void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (b.size() == 0 || a.size() % b.size() != 0)
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::check_broadcast(a->value, b->value, "add");
  const std::size_t n = a->value.size(), m = b->value.size();
  Tensor out = a->value;
  for (std::size_t i = 0; i < n; ++i) out.data[i] += b->value.data[i % m];
  Var r = detail::make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* bn = b.get();
    r->backprop = [rn, an, bn, n, m]() {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i) accumulate(an, i, rn->grad[i]);
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i) accumulate(bn, i % m, rn->grad[i]);
    };
  }
  return r;
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_broadcast(a->value, b->value, "sub");
  const std::size_t n = a->value.size(), m = b->value.size();
  Tensor out = a->value;
  for (std::size_t i = 0; i < n; ++i) out.data[i] -= b->value.data[i % m];
  Var r = detail::make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* bn = b.get();
    r->backprop = [rn, an, bn, n, m]() {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i) accumulate(an, i, rn->grad[i]);
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i) accumulate(bn, i % m, -rn->grad[i]);
    };
  }
  return r;
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_broadcast(a->value, b->value, "mul");
  const std::size_t n = a->value.size(), m = b->value.size();
  Tensor out = a->value;
  for (std::size_t i = 0; i < n; ++i) out.data[i] *= b->value.data[i % m];
  Var r = detail::make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* bn = b.get();
    r->backprop = [rn, an, bn, n, m]() {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          accumulate(an, i, rn->grad[i] * bn->value.data[i % m]);
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          accumulate(bn, i % m, rn->grad[i] * an->value.data[i]);
    };
  }
  return r;
}

inline Var scale(const Var& a, real c) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= c;
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an, c]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, rn->grad[i] * c);
    };
  }
  return r;
}

inline Var add_scalar(const Var& a, real c) {
  Tensor out = a->value;
  for (auto& v : out.data) v += c;
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, rn->grad[i]);
    };
  }
  return r;
}

// ---- elementwise nonlinearities -------------------------------------------

inline Var silu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) {
    double x = v;
    v = static_cast<real>(x / (1.0 + std::exp(-x)));
  }
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i) {
        double x = an->value.data[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        double d = s * (1.0 + x * (1.0 - s));
        accumulate(an, i, static_cast<real>(rn->grad[i] * d));
      }
    };
  }
  return r;
}

inline Var vexp(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = static_cast<real>(std::exp(static_cast<double>(v)));
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, rn->grad[i] * rn->value.data[i]);
    };
  }
  return r;
}

inline Var vlog(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = static_cast<real>(std::log(static_cast<double>(v)));
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, rn->grad[i] / an->value.data[i]);
    };
  }
  return r;
}

inline Var square(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= v;
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, real(2) * rn->grad[i] * an->value.data[i]);
    };
  }
  return r;
}

// ---- shape ops ------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
  if (Tensor::numel(shape) != a->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), a->value.data);
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        accumulate(an, i, rn->grad[i]);
    };
  }
  return r;
}

/// Slice [start, start+len) along `axis`.
inline Var slice(const Var& a, std::size_t axis, std::size_t start,
                 std::size_t len) {
  const auto& sh = a->value.shape;
  if (axis >= sh.size() || start + len > sh[axis])
    throw std::invalid_argument("slice: out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  std::vector<std::size_t> osh = sh;
  osh[axis] = len;
  Tensor out(osh);
  const std::size_t ax = sh[axis];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      std::copy_n(&a->value.data[(o * ax + start + j) * inner], inner,
                  &out.data[(o * len + j) * inner]);
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an, outer, inner, ax, start, len]() {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
          for (std::size_t k = 0; k < inner; ++k)
            accumulate(an, (o * ax + start + j) * inner + k,
                       rn->grad[(o * len + j) * inner + k]);
    };
  }
  return r;
}

/// Concatenate along `axis`; all parts must agree on the other axes.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& sh0 = parts[0]->value.shape;
  if (axis >= sh0.size()) throw std::invalid_argument("concat: bad axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape;
    if (s.size() != sh0.size())
      throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != sh0[i])
        throw std::invalid_argument("concat: shape mismatch");
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh0[i];
  for (std::size_t i = axis + 1; i < sh0.size(); ++i) inner *= sh0[i];
  std::vector<std::size_t> osh = sh0;
  osh[axis] = total;
  Tensor out(osh);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    std::size_t len = p->value.shape[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&p->value.data[o * len * inner], len * inner,
                  &out.data[(o * total + offset) * inner]);
    offset += len;
  }
  Var r = detail::make(std::move(out), parts);
  if (r->requires_grad) {
    Node* rn = r.get();
    std::vector<Node*> ps;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
      ps.push_back(p.get());
      lens.push_back(p->value.shape[axis]);
    }
    r->backprop = [rn, ps, lens, offsets, outer, inner, total]() {
      for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        Node* pn = ps[pi];
        if (!pn->requires_grad) continue;
        std::size_t len = lens[pi], off = offsets[pi];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < len * inner; ++j)
            accumulate(pn, o * len * inner + j,
                       rn->grad[(o * total + off) * inner + j]);
      }
    };
  }
  return r;
}

// ---- linear algebra -------------------------------------------------------

namespace detail {

/// C[n,m] += A[n,k] B[k,m] over zeroed double buffers. Four-row register
/// blocking; each output element still accumulates over the shared index
/// in sequential order, so results are independent of the blocking.
inline void mm_acc(const double* A, const double* B, double* C, std::size_t n,
                   std::size_t k, std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* c0 = C + i * m;
    double* c1 = c0 + m;
    double* c2 = c1 + m;
    double* c3 = c2 + m;
    const double* a0 = A + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t t = 0; t < k; ++t) {
      const double v0 = a0[t], v1 = a1[t], v2 = a2[t], v3 = a3[t];
      const double* bp = B + t * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bv = bp[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* c = C + i * m;
    const double* a = A + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double v = a[t];
      const double* bp = B + t * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += v * bp[j];
    }
  }
}

/// Widen to double and transpose [r,c] -> [c,r].
inline std::vector<double> widen_t(const std::vector<real>& src, std::size_t r,
                                   std::size_t c) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return out;
}

}  // namespace detail

/// A[n,k] x B[k,m] -> [n,m], double accumulation.
inline Var matmul(const Var& a, const Var& b) {
  const auto& as = a->value.shape;
  const auto& bs = b->value.shape;
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw std::invalid_argument("matmul: shape mismatch " +
                                a->value.shape_str() + " x " +
                                b->value.shape_str());
  const std::size_t n = as[0], k = as[1], m = bs[1];
  Tensor out({n, m});
  {
    std::vector<double> ad(a->value.data.begin(), a->value.data.end());
    std::vector<double> bd(b->value.data.begin(), b->value.data.end());
    std::vector<double> cd(n * m, 0.0);
    detail::mm_acc(ad.data(), bd.data(), cd.data(), n, k, m);
    for (std::size_t i = 0; i < n * m; ++i)
      out.data[i] = static_cast<real>(cd[i]);
  }
  Var r = detail::make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* bn = b.get();
    r->backprop = [rn, an, bn, n, k, m]() {
      // widen operands once so the hot loops stay in double arithmetic
      std::vector<double> gd(rn->grad.begin(), rn->grad.end());
      if (an->requires_grad) {
        // dA = G B^T
        auto btd = detail::widen_t(bn->value.data, k, m);
        std::vector<double> da(n * k, 0.0);
        detail::mm_acc(gd.data(), btd.data(), da.data(), n, m, k);
        for (std::size_t i = 0; i < n * k; ++i)
          accumulate(an, i, static_cast<real>(da[i]));
      }
      if (bn->requires_grad) {
        // dB = A^T G
        auto atd = detail::widen_t(an->value.data, n, k);
        std::vector<double> db(k * m, 0.0);
        detail::mm_acc(atd.data(), gd.data(), db.data(), k, n, m);
        for (std::size_t i = 0; i < k * m; ++i)
          accumulate(bn, i, static_cast<real>(db[i]));
      }
    };
  }
  return r;
}

/// Batched matmul: A[B,n,k] x B[B,k,m] -> [B,n,m]. With trans_b,
/// B is [B,m,k] and its last two axes are transposed.
inline Var bmm(const Var& a, const Var& b, bool trans_b = false) {
  const auto& as = a->value.shape;
  const auto& bs = b->value.shape;
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0])
    throw std::invalid_argument("bmm: rank/batch mismatch");
  const std::size_t B = as[0], n = as[1], k = as[2];
  const std::size_t m = trans_b ? bs[1] : bs[2];
  const std::size_t bk = trans_b ? bs[2] : bs[1];
  if (bk != k) throw std::invalid_argument("bmm: inner dim mismatch");
  Tensor out({B, n, m});
  auto bidx = [trans_b, k, m](std::size_t t, std::size_t j) {
    return trans_b ? j * k + t : t * m + j;
  };
  for (std::size_t s = 0; s < B; ++s) {
    const real* ap = &a->value.data[s * n * k];
    const real* bp = &b->value.data[s * k * m];
    real* op = &out.data[s * n * m];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0;
        for (std::size_t t = 0; t < k; ++t)
          acc += static_cast<double>(ap[i * k + t]) * bp[bidx(t, j)];
        op[i * m + j] = static_cast<real>(acc);
      }
  }
  Var r = detail::make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* bn = b.get();
    r->backprop = [rn, an, bn, B, n, k, m, trans_b, bidx]() {
      for (std::size_t s = 0; s < B; ++s) {
        const real* gp = &rn->grad[s * n * m];
        const real* ap = &an->value.data[s * n * k];
        const real* bp = &bn->value.data[s * k * m];
        if (an->requires_grad)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double acc = 0;
              for (std::size_t j = 0; j < m; ++j)
                acc += static_cast<double>(gp[i * m + j]) * bp[bidx(t, j)];
              accumulate(an, s * n * k + i * k + t, static_cast<real>(acc));
            }
        if (bn->requires_grad)
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < m; ++j) {
              double acc = 0;
              for (std::size_t i = 0; i < n; ++i)
                acc += static_cast<double>(ap[i * k + t]) * gp[i * m + j];
              accumulate(bn, s * k * m + bidx(t, j), static_cast<real>(acc));
            }
      }
    };
  }
  return r;
}

/// Lookup rows of a [C,d] table; gradients scatter-add into the table.
inline Var embedding_lookup(const Var& table, std::vector<std::size_t> indices) {
  const auto& ts = table->value.shape;
  if (ts.size() != 2) throw std::invalid_argument("embedding_lookup: table rank");
  const std::size_t d = ts[1];
  for (std::size_t idx : indices)
    if (idx >= ts[0])
      throw std::invalid_argument("embedding_lookup: index out of range");
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(&table->value.data[indices[i] * d], d, &out.data[i * d]);
  Var r = detail::make(std::move(out), {table});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* tn = table.get();
    auto idx = std::move(indices);
    r->backprop = [rn, tn, idx, d]() {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          accumulate(tn, idx[i] * d + j, rn->grad[i * d + j]);
    };
  }
  return r;
}

// ---- normalizations -------------------------------------------------------

/// Row-wise softmax over the last axis, max-subtracted.
inline Var softmax(const Var& a) {
  const auto& sh = a->value.shape;
  if (sh.empty() || sh.back() == 0)
    throw std::invalid_argument("softmax: empty axis");
  const std::size_t d = sh.back();
  const std::size_t rows = a->value.size() / d;
  Tensor out = a->value;
  for (std::size_t rI = 0; rI < rows; ++rI) {
    real* p = &out.data[rI * d];
    real mx = p[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, p[j]);
    double sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double e = std::exp(static_cast<double>(p[j] - mx));
      p[j] = static_cast<real>(e);
      sum += e;
    }
    for (std::size_t j = 0; j < d; ++j)
      p[j] = static_cast<real>(p[j] / sum);
  }
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an, rows, d]() {
      for (std::size_t rI = 0; rI < rows; ++rI) {
        const real* y = &rn->value.data[rI * d];
        const real* g = &rn->grad[rI * d];
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j)
          dot += static_cast<double>(y[j]) * g[j];
        for (std::size_t j = 0; j < d; ++j)
          accumulate(an, rI * d + j,
                     static_cast<real>(y[j] * (g[j] - dot)));
      }
    };
  }
  return r;
}

/// Row-wise log-softmax over the last axis.
inline Var log_softmax(const Var& a) {
  const auto& sh = a->value.shape;
  if (sh.empty() || sh.back() == 0)
    throw std::invalid_argument("log_softmax: empty axis");
  const std::size_t d = sh.back();
  const std::size_t rows = a->value.size() / d;
  Tensor out = a->value;
  for (std::size_t rI = 0; rI < rows; ++rI) {
    real* p = &out.data[rI * d];
    real mx = p[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, p[j]);
    double sum = 0;
    for (std::size_t j = 0; j < d; ++j)
      sum += std::exp(static_cast<double>(p[j] - mx));
    double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < d; ++j)
      p[j] = static_cast<real>(p[j] - lse);
  }
  Var r = detail::make(std::move(out), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an, rows, d]() {
      for (std::size_t rI = 0; rI < rows; ++rI) {
        const real* y = &rn->value.data[rI * d];
        const real* g = &rn->grad[rI * d];
        double gsum = 0;
        for (std::size_t j = 0; j < d; ++j) gsum += g[j];
        for (std::size_t j = 0; j < d; ++j)
          accumulate(an, rI * d + j,
                     static_cast<real>(g[j] - std::exp(static_cast<double>(y[j])) * gsum));
      }
    };
  }
  return r;
}

/// Per-token layer norm over the last axis with learnable gain and bias.
inline Var layer_norm(const Var& a, const Var& gain, const Var& bias,
                      real eps = real(1e-5)) {
  const auto& sh = a->value.shape;
  if (sh.empty()) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t d = sh.back();
  if (gain->value.size() != d || bias->value.size() != d)
    throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  const std::size_t rows = a->value.size() / d;
  Tensor out(sh);
  std::vector<double> means(rows), istds(rows);
  for (std::size_t rI = 0; rI < rows; ++rI) {
    const real* p = &a->value.data[rI * d];
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += p[j];
    mean /= d;
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = p[j] - mean;
      var += c * c;
    }
    var /= d;
    double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    means[rI] = mean;
    istds[rI] = istd;
    for (std::size_t j = 0; j < d; ++j)
      out.data[rI * d + j] = static_cast<real>(
          (p[j] - mean) * istd * gain->value.data[j] + bias->value.data[j]);
  }
  Var r = detail::make(std::move(out), {a, gain, bias});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    Node* gn = gain.get();
    Node* bn = bias.get();
    r->backprop = [rn, an, gn, bn, rows, d, means, istds]() {
      for (std::size_t rI = 0; rI < rows; ++rI) {
        const real* p = &an->value.data[rI * d];
        const real* g = &rn->grad[rI * d];
        double mean = means[rI], istd = istds[rI];
        // dL/dxhat, plus reductions for the normalization terms
        double sum_dxh = 0, sum_dxh_xh = 0;
        std::vector<double> xh(d), dxh(d);
        for (std::size_t j = 0; j < d; ++j) {
          xh[j] = (p[j] - mean) * istd;
          dxh[j] = static_cast<double>(g[j]) * gn->value.data[j];
          sum_dxh += dxh[j];
          sum_dxh_xh += dxh[j] * xh[j];
        }
        if (an->requires_grad)
          for (std::size_t j = 0; j < d; ++j)
            accumulate(an, rI * d + j,
                       static_cast<real>(istd * (dxh[j] - sum_dxh / d -
                                                 xh[j] * sum_dxh_xh / d)));
        if (gn->requires_grad)
          for (std::size_t j = 0; j < d; ++j)
            accumulate(gn, j, static_cast<real>(g[j] * xh[j]));
        if (bn->requires_grad)
          for (std::size_t j = 0; j < d; ++j) accumulate(bn, j, g[j]);
      }
    };
  }
  return r;
}

// ---- reductions -----------------------------------------------------------

inline Var sum(const Var& a) {
  double acc = 0;
  for (real v : a->value.data) acc += v;
  Var r = detail::make(Tensor::scalar(static_cast<real>(acc)), {a});
  if (r->requires_grad) {
    Node* rn = r.get();
    Node* an = a.get();
    r->backprop = [rn, an]() {
      for (std::size_t i = 0; i < an->value.size(); ++i)
        accumulate(an, i, rn->grad[0]);
    };
  }
  return r;
}

inline Var mean(const Var& a) {
  return scale(sum(a), real(1) / static_cast<real>(a->value.size()));
}

// ---- stochastic -----------------------------------------------------------

/// Reparameterized Gaussian sample: z = mu + exp(0.5 logvar) * eps.
/// eps is a fixed constant; gradients flow through mu and logvar only.
inline Var reparameterize(const Var& mu, const Var& logvar, const Var& eps) {
  check_same_shape(mu->value, logvar->value, "reparameterize");
  check_same_shape(mu->value, eps->value, "reparameterize");
  return add(mu, mul(vexp(scale(logvar, real(0.5))), eps));
}

// ---- backward -------------------------------------------------------------

/// Reverse sweep from a scalar root. Leaves' grads accumulate; call
/// zero_grad on parameters between steps.
inline void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, ci] = stack.back();
    if (ci < n->parents.size()) {
      Node* p = n->parents[ci++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  root->grad[0] = real(1);
  root->grad_set = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace tabgen::ag
