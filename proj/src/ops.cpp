#include "tryon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace tryon {

namespace detail {
void count_matmul_flops(uint64_t f);
}

namespace {

template <class F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::f32)
    f(float{});
  else
    f(double{});
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()) + ")");
}

void check_finite(const Tensor& t, const char* op) {
  const auto& im = t.impl();
  bool ok = true;
  dispatch(im.dtype, [&](auto tag) {
    using T = decltype(tag);
    const T* p = im.ptr<T>();
    const int64_t n = im.numel();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i])) {
        ok = false;
        return;
      }
    }
  });
  if (!ok) throw NumericError(std::string(op) + ": non-finite value in output");
}

// Attaches the autodiff node when gradients are flowing.
Tensor finalize(Tensor out, const char* op, std::vector<Tensor> inputs,
                std::function<void(TensorImpl&)> bw) {
  check_finite(out, op);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs)
      if (t.defined() && t.requires_grad()) needs = true;
  }
  if (needs) {
    out.impl().requires_grad = true;
    auto node = std::make_shared<Node>();
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
    out.impl().producer = std::move(node);
  }
  return out;
}

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// strides of `from` viewed as `to` (right-aligned), zero on broadcast dims
std::vector<int64_t> broadcast_strides(const Shape& from, const Shape& to) {
  auto fs = contiguous_strides(from);
  std::vector<int64_t> st(to.size(), 0);
  const size_t off = to.size() - from.size();
  for (size_t i = 0; i < from.size(); ++i)
    st[off + i] = (from[i] == 1 && to[off + i] != 1) ? 0 : fs[i];
  return st;
}

template <class T, class OpF>
void ew_binary_kernel(const TensorImpl& a, const TensorImpl& b, TensorImpl& out, OpF op) {
  const T* pa = a.ptr<T>();
  const T* pb = b.ptr<T>();
  T* po = out.ptr<T>();
  const int64_t n = out.numel();
  if (a.shape == b.shape) {
    for (int64_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i]);
    return;
  }
  if (a.shape == out.shape && b.numel() >= 1) {
    // trailing-suffix broadcast of b (covers bias and per-channel modulation)
    const size_t off = out.shape.size() - b.shape.size();
    bool suffix = true;
    for (size_t i = 0; i < b.shape.size(); ++i)
      if (b.shape[i] != out.shape[off + i]) suffix = false;
    if (suffix) {
      const int64_t bn = b.numel();
      for (int64_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i % bn]);
      return;
    }
  }
  // generic odometer walk
  const auto as = broadcast_strides(a.shape, out.shape);
  const auto bs = broadcast_strides(b.shape, out.shape);
  const int r = static_cast<int>(out.shape.size());
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t ao = 0, bo = 0;
  for (int64_t o = 0; o < n; ++o) {
    po[o] = op(pa[ao], pb[bo]);
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      ao += as[static_cast<size_t>(d)];
      bo += bs[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out.shape[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
      ao -= as[static_cast<size_t>(d)] * out.shape[static_cast<size_t>(d)];
      bo -= bs[static_cast<size_t>(d)] * out.shape[static_cast<size_t>(d)];
    }
  }
}

// Sums g down to `target` (right-aligned broadcast inverse).
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out = Tensor::zeros(target, g.dtype());
  const auto& gi = g.impl();
  auto& oi = out.impl();
  const auto ts = broadcast_strides(target, gi.shape);
  const int r = static_cast<int>(gi.shape.size());
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t to = 0;
  const int64_t n = gi.numel();
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = gi.ptr<T>();
    T* po = oi.ptr<T>();
    for (int64_t i = 0; i < n; ++i) {
      po[to] += pg[i];
      for (int d = r - 1; d >= 0; --d) {
        idx[static_cast<size_t>(d)]++;
        to += ts[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < gi.shape[static_cast<size_t>(d)]) break;
        idx[static_cast<size_t>(d)] = 0;
        to -= ts[static_cast<size_t>(d)] * gi.shape[static_cast<size_t>(d)];
      }
    }
  });
  return out;
}

// grad += delta, creating the accumulator on first touch
void acc_grad(const Tensor& input, const Tensor& delta) {
  auto& im = input.impl();
  if (!im.requires_grad) return;
  if (delta.shape() != im.shape)
    throw ContractError("gradient shape " + shape_str(delta.shape()) + " does not match tensor " +
                        shape_str(im.shape));
  if (!im.grad) im.grad = std::make_shared<TensorImpl>(im.shape, im.dtype);
  auto& gi = *im.grad;
  const auto& di = delta.impl();
  dispatch(im.dtype, [&](auto tag) {
    using T = decltype(tag);
    T* pg = gi.ptr<T>();
    const T* pd = di.ptr<T>();
    const int64_t n = gi.numel();
    for (int64_t i = 0; i < n; ++i) pg[i] += pd[i];
  });
}

Tensor grad_of(TensorImpl& out) { return Tensor::wrap(out.grad); }

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  check_same_dtype(a, b, name);
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(os, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    switch (kind) {
      case BinKind::Add:
        ew_binary_kernel<T>(a.impl(), b.impl(), out.impl(), [](T x, T y) { return x + y; });
        break;
      case BinKind::Sub:
        ew_binary_kernel<T>(a.impl(), b.impl(), out.impl(), [](T x, T y) { return x - y; });
        break;
      case BinKind::Mul:
        ew_binary_kernel<T>(a.impl(), b.impl(), out.impl(), [](T x, T y) { return x * y; });
        break;
    }
  });
  Tensor ta = a, tb = b;
  return finalize(std::move(out), name, {a, b}, [ta, tb, kind](TensorImpl& o) {
    Tensor g = grad_of(o);
    switch (kind) {
      case BinKind::Add:
        acc_grad(ta, reduce_to(g, ta.shape()));
        acc_grad(tb, reduce_to(g, tb.shape()));
        break;
      case BinKind::Sub:
        acc_grad(ta, reduce_to(g, ta.shape()));
        acc_grad(tb, reduce_to(scale(g, -1.0), tb.shape()));
        break;
      case BinKind::Mul:
        if (ta.requires_grad()) acc_grad(ta, reduce_to(mul(g, tb), ta.shape()));
        if (tb.requires_grad()) acc_grad(tb, reduce_to(mul(g, ta), tb.shape()));
        break;
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    const T tc = static_cast<T>(c);
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * tc;
  });
  Tensor ta = a;
  return finalize(std::move(out), "scale", {a},
                  [ta, c](TensorImpl& o) { acc_grad(ta, scale(grad_of(o), c)); });
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    const T tc = static_cast<T>(c);
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + tc;
  });
  Tensor ta = a;
  return finalize(std::move(out), "add_scalar", {a},
                  [ta](TensorImpl& o) { acc_grad(ta, grad_of(o)); });
}

// ---------------------------------------------------------------- matmul

namespace {

template <class T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t p) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = C + i * p;
    const T* arow = A + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = B + kk * p;
      for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
  const int64_t m = a.dim(-2), ka = a.dim(-1);
  const int64_t kb = b.dim(-2), p = b.dim(-1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape obatch = broadcast_shape(abatch, bbatch, "matmul");
  Shape os = obatch;
  os.push_back(m);
  os.push_back(p);
  Tensor out = Tensor::zeros(os, a.dtype());

  const int64_t nbatch = numel_of(obatch);
  const auto as = broadcast_strides(abatch, obatch);
  const auto bs = broadcast_strides(bbatch, obatch);
  const int br = static_cast<int>(obatch.size());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl().ptr<T>();
    const T* pb = b.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    std::vector<int64_t> idx(static_cast<size_t>(br), 0);
    int64_t ao = 0, bo = 0;
    for (int64_t n = 0; n < nbatch; ++n) {
      gemm_nn(pa + ao * m * ka, pb + bo * ka * p, po + n * m * p, m, ka, p);
      for (int d = br - 1; d >= 0; --d) {
        idx[static_cast<size_t>(d)]++;
        ao += as[static_cast<size_t>(d)];
        bo += bs[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < obatch[static_cast<size_t>(d)]) break;
        idx[static_cast<size_t>(d)] = 0;
        ao -= as[static_cast<size_t>(d)] * obatch[static_cast<size_t>(d)];
        bo -= bs[static_cast<size_t>(d)] * obatch[static_cast<size_t>(d)];
      }
    }
  });
  detail::count_matmul_flops(static_cast<uint64_t>(2 * m * ka * p * nbatch));

  Tensor ta = a, tb = b;
  return finalize(std::move(out), "matmul", {a, b}, [ta, tb](TensorImpl& o) {
    Tensor g = grad_of(o);
    if (ta.requires_grad()) acc_grad(ta, reduce_to(matmul(g, transpose_last2(tb)), ta.shape()));
    if (tb.requires_grad()) acc_grad(tb, reduce_to(matmul(transpose_last2(ta), g), tb.shape()));
  });
}

// batch strides above walk in units of one [m,k] / [k,p] matrix
// (ao, bo are matrix counts, converted at the gemm call)

// ---------------------------------------------------------------- layout ops

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes rank mismatch");
  std::vector<bool> hit(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || hit[static_cast<size_t>(a)]) throw ShapeError("permute: invalid axes");
    hit[static_cast<size_t>(a)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  Tensor out = Tensor::zeros(os, x.dtype());
  const auto xs = contiguous_strides(x.shape());
  std::vector<int64_t> ps(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) ps[static_cast<size_t>(i)] = xs[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t xo = 0;
    const int64_t n = x.numel();
    for (int64_t o = 0; o < n; ++o) {
      po[o] = px[xo];
      for (int d = r - 1; d >= 0; --d) {
        idx[static_cast<size_t>(d)]++;
        xo += ps[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
        idx[static_cast<size_t>(d)] = 0;
        xo -= ps[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
      }
    }
  });
  Tensor tx = x;
  std::vector<int> inv(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
  return finalize(std::move(out), "permute", {x},
                  [tx, inv](TensorImpl& o) { acc_grad(tx, permute(grad_of(o), inv)); });
}

Tensor transpose_last2(const Tensor& x) {
  const int r = x.rank();
  if (r < 2) throw ShapeError("transpose_last2: rank must be >= 2");
  std::vector<int> axes(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[static_cast<size_t>(r - 2)], axes[static_cast<size_t>(r - 1)]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out = Tensor::zeros(shape, x.dtype());
  std::memcpy(out.impl().buf.data(), x.impl().buf.data(), x.impl().buf.size());
  Tensor tx = x;
  Shape old = x.shape();
  return finalize(std::move(out), "reshape", {x},
                  [tx, old](TensorImpl& o) { acc_grad(tx, reshape(grad_of(o), old)); });
}

Tensor slice_lastdim(const Tensor& x, int64_t offset, int64_t size) {
  const int64_t n = x.dim(-1);
  if (offset < 0 || size < 1 || offset + size > n) throw ShapeError("slice_lastdim: bad range");
  Shape os = x.shape();
  os.back() = size;
  Tensor out = Tensor::zeros(os, x.dtype());
  const int64_t rows = x.numel() / n;
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(po + r * size, px + r * n + offset, static_cast<size_t>(size) * sizeof(T));
  });
  Tensor tx = x;
  return finalize(std::move(out), "slice_lastdim", {x}, [tx, offset, size, n](TensorImpl& o) {
    if (!tx.requires_grad()) return;
    Tensor g = grad_of(o);
    Tensor dx = Tensor::zeros(tx.shape(), tx.dtype());
    const int64_t rows = tx.numel() / n;
    dispatch(tx.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = g.impl().ptr<T>();
      T* pd = dx.impl().ptr<T>();
      for (int64_t r = 0; r < rows; ++r)
        std::memcpy(pd + r * n + offset, pg + r * size, static_cast<size_t>(size) * sizeof(T));
    });
    acc_grad(tx, dx);
  });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int64_t total = 0;
  for (const auto& t : parts) {
    check_same_dtype(parts[0], t, "concat_lastdim");
    Shape l = t.shape();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_lastdim: leading dims disagree");
    total += t.dim(-1);
  }
  Shape os = parts[0].shape();
  os.back() = total;
  Tensor out = Tensor::zeros(os, parts[0].dtype());
  const int64_t rows = out.numel() / total;
  dispatch(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* po = out.impl().ptr<T>();
    int64_t off = 0;
    for (const auto& t : parts) {
      const int64_t w = t.dim(-1);
      const T* pt = t.impl().ptr<T>();
      for (int64_t r = 0; r < rows; ++r)
        std::memcpy(po + r * total + off, pt + r * w, static_cast<size_t>(w) * sizeof(T));
      off += w;
    }
  });
  std::vector<Tensor> inputs = parts;
  return finalize(std::move(out), "concat_lastdim", parts, [inputs, total](TensorImpl& o) {
    Tensor g = grad_of(o);
    int64_t off = 0;
    for (const auto& t : inputs) {
      const int64_t w = t.dim(-1);
      if (t.requires_grad()) acc_grad(t, slice_lastdim(g, off, w));
      off += w;
    }
  });
}

// ---------------------------------------------------------------- gather / scatter

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected [rows, width]");
  const int64_t rows = x.dim(0), width = x.dim(1);
  for (int64_t i : idx)
    if (i < -1 || i >= rows) throw ContractError("gather_rows: index out of range");
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), width}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    for (size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] < 0) continue;  // padded slot stays zero
      std::memcpy(po + static_cast<int64_t>(j) * width, px + idx[j] * width,
                  static_cast<size_t>(width) * sizeof(T));
    }
  });
  Tensor tx = x;
  auto ids = idx;
  return finalize(std::move(out), "gather_rows", {x}, [tx, ids, width](TensorImpl& o) {
    if (!tx.requires_grad()) return;
    Tensor g = grad_of(o);
    Tensor dx = Tensor::zeros(tx.shape(), tx.dtype());
    dispatch(tx.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = g.impl().ptr<T>();
      T* pd = dx.impl().ptr<T>();
      for (size_t j = 0; j < ids.size(); ++j) {
        if (ids[j] < 0) continue;
        T* drow = pd + ids[j] * width;
        const T* grow = pg + static_cast<int64_t>(j) * width;
        for (int64_t c = 0; c < width; ++c) drow[c] += grow[c];
      }
    });
    acc_grad(tx, dx);
  });
}

Tensor scatter_add_rows(const Tensor& base, const Tensor& contrib,
                        const std::vector<int64_t>& idx) {
  check_same_dtype(base, contrib, "scatter_add_rows");
  if (base.rank() != 2 || contrib.rank() != 2 || base.dim(1) != contrib.dim(1))
    throw ShapeError("scatter_add_rows: expected [rows, width] operands of equal width");
  if (contrib.dim(0) != static_cast<int64_t>(idx.size()))
    throw ShapeError("scatter_add_rows: index count does not match contrib rows");
  const int64_t rows = base.dim(0), width = base.dim(1);
  for (int64_t i : idx)
    if (i < -1 || i >= rows) throw ContractError("scatter_add_rows: index out of range");
  Tensor out = Tensor::zeros(base.shape(), base.dtype());
  std::memcpy(out.impl().buf.data(), base.impl().buf.data(), base.impl().buf.size());
  dispatch(base.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pc = contrib.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    for (size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] < 0) continue;
      T* orow = po + idx[j] * width;
      const T* crow = pc + static_cast<int64_t>(j) * width;
      for (int64_t c = 0; c < width; ++c) orow[c] += crow[c];
    }
  });
  Tensor tb = base, tc = contrib;
  auto ids = idx;
  return finalize(std::move(out), "scatter_add_rows", {base, contrib},
                  [tb, tc, ids](TensorImpl& o) {
                    Tensor g = grad_of(o);
                    if (tb.requires_grad()) acc_grad(tb, g);
                    if (tc.requires_grad()) acc_grad(tc, gather_rows(g, ids));
                  });
}

// ---------------------------------------------------------------- softmax

Tensor softmax_lastdim(const Tensor& x, const Tensor* additive_mask) {
  const int64_t n = x.dim(-1);
  const int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());

  std::vector<int64_t> ms;
  if (additive_mask) {
    check_same_dtype(x, *additive_mask, "softmax_lastdim");
    if (additive_mask->requires_grad())
      throw ContractError("softmax_lastdim: mask must not require grad");
    // mask broadcasts right-aligned against x
    broadcast_shape(x.shape(), additive_mask->shape(), "softmax_lastdim");
    if (additive_mask->rank() > x.rank())
      throw ShapeError("softmax_lastdim: mask rank exceeds input rank");
    ms = broadcast_strides(additive_mask->shape(), x.shape());
  }

  const int r = x.rank();
  const auto& xshape = x.shape();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    const T* pm = additive_mask ? additive_mask->impl().ptr<T>() : nullptr;
    T* po = out.impl().ptr<T>();
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t mo = 0;
    for (int64_t row = 0; row < rows; ++row) {
      const T* xr = px + row * n;
      T* orow = po + row * n;
      // logits with additive mask; blocked entries drop out entirely
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (int64_t j = 0; j < n; ++j) {
        double mval = 0.0;
        if (pm) mval = static_cast<double>(pm[mo + j * ms[static_cast<size_t>(r - 1)]]);
        if (mval <= kMaskBlockThreshold) continue;
        const double l = static_cast<double>(xr[j]) + mval;
        if (l > mx) mx = l;
        any = true;
      }
      if (any) {
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          double mval = 0.0;
          if (pm) mval = static_cast<double>(pm[mo + j * ms[static_cast<size_t>(r - 1)]]);
          if (mval <= kMaskBlockThreshold) {
            orow[j] = static_cast<T>(0);
            continue;
          }
          const double e = std::exp(static_cast<double>(xr[j]) + mval - mx);
          orow[j] = static_cast<T>(e);
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < n; ++j) orow[j] = static_cast<T>(static_cast<double>(orow[j]) * inv);
      } else {
        for (int64_t j = 0; j < n; ++j) orow[j] = static_cast<T>(0);
      }
      // advance mask offset across leading dims
      if (pm) {
        for (int d = r - 2; d >= 0; --d) {
          idx[static_cast<size_t>(d)]++;
          mo += ms[static_cast<size_t>(d)];
          if (idx[static_cast<size_t>(d)] < xshape[static_cast<size_t>(d)]) break;
          idx[static_cast<size_t>(d)] = 0;
          mo -= ms[static_cast<size_t>(d)] * xshape[static_cast<size_t>(d)];
        }
      }
    }
  });

  Tensor tx = x;
  return finalize(std::move(out), "softmax_lastdim", {x}, [tx, n](TensorImpl& o) {
    if (!tx.requires_grad()) return;
    Tensor g = grad_of(o);
    Tensor dx = Tensor::zeros(tx.shape(), tx.dtype());
    const int64_t rows = tx.numel() / n;
    dispatch(tx.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* py = o.ptr<T>();
      const T* pg = g.impl().ptr<T>();
      T* pd = dx.impl().ptr<T>();
      for (int64_t row = 0; row < rows; ++row) {
        const T* y = py + row * n;
        const T* gr = pg + row * n;
        T* d = pd + row * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += static_cast<double>(gr[j]) * static_cast<double>(y[j]);
        for (int64_t j = 0; j < n; ++j)
          d[j] = static_cast<T>(static_cast<double>(y[j]) * (static_cast<double>(gr[j]) - dot));
      }
    });
    acc_grad(tx, dx);
  });
}

// ---------------------------------------------------------------- layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_same_dtype(x, gain, "layer_norm");
  check_same_dtype(x, bias, "layer_norm");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const int64_t d = x.dim(-1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    const T* pw = gain.impl().ptr<T>();
    const T* pb = bias.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = px + r * d;
      T* orow = po + r * d;
      double mean = 0.0;
      for (int64_t c = 0; c < d; ++c) mean += static_cast<double>(xr[c]);
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t c = 0; c < d; ++c) {
        const double s = static_cast<double>(xr[c]) - mean;
        var += s * s;
      }
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + eps);
      for (int64_t c = 0; c < d; ++c) {
        const double nrm = (static_cast<double>(xr[c]) - mean) * rstd;
        orow[c] = static_cast<T>(nrm * static_cast<double>(pw[c]) + static_cast<double>(pb[c]));
      }
    }
  });
  Tensor tx = x, tw = gain, tb = bias;
  return finalize(std::move(out), "layer_norm", {x, gain, bias}, [tx, tw, tb, eps, d](TensorImpl& o) {
    Tensor g = grad_of(o);
    const int64_t rows = tx.numel() / d;
    Tensor dx = Tensor::zeros(tx.shape(), tx.dtype());
    Tensor dw = Tensor::zeros(tw.shape(), tw.dtype());
    Tensor db = Tensor::zeros(tb.shape(), tb.dtype());
    dispatch(tx.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = tx.impl().ptr<T>();
      const T* pw = tw.impl().ptr<T>();
      const T* pg = g.impl().ptr<T>();
      T* pdx = dx.impl().ptr<T>();
      T* pdw = dw.impl().ptr<T>();
      T* pdb = db.impl().ptr<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        const T* gr = pg + r * d;
        T* dxr = pdx + r * d;
        double mean = 0.0;
        for (int64_t c = 0; c < d; ++c) mean += static_cast<double>(xr[c]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t c = 0; c < d; ++c) {
          const double s = static_cast<double>(xr[c]) - mean;
          var += s * s;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + eps);
        double dn_mean = 0.0, dnn_mean = 0.0;
        for (int64_t c = 0; c < d; ++c) {
          const double nrm = (static_cast<double>(xr[c]) - mean) * rstd;
          const double dn = static_cast<double>(pw[c]) * static_cast<double>(gr[c]);
          dn_mean += dn;
          dnn_mean += dn * nrm;
        }
        dn_mean /= static_cast<double>(d);
        dnn_mean /= static_cast<double>(d);
        for (int64_t c = 0; c < d; ++c) {
          const double nrm = (static_cast<double>(xr[c]) - mean) * rstd;
          const double dn = static_cast<double>(pw[c]) * static_cast<double>(gr[c]);
          pdb[c] += gr[c];
          pdw[c] += static_cast<T>(nrm * static_cast<double>(gr[c]));
          dxr[c] = static_cast<T>((dn - dn_mean - nrm * dnn_mean) * rstd);
        }
      }
    });
    acc_grad(tx, dx);
    acc_grad(tw, dw);
    acc_grad(tb, db);
  });
}

// ---------------------------------------------------------------- gelu / linear

namespace {
constexpr double kGeluCoef = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl().ptr<T>();
    T* po = out.impl().ptr<T>();
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double v = static_cast<double>(px[i]);
      const double u = kGeluCoef * (v + kGeluCubic * v * v * v);
      po[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
    }
  });
  Tensor tx = x;
  return finalize(std::move(out), "gelu", {x}, [tx](TensorImpl& o) {
    if (!tx.requires_grad()) return;
    Tensor g = grad_of(o);
    Tensor dx = Tensor::zeros(tx.shape(), tx.dtype());
    dispatch(tx.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = tx.impl().ptr<T>();
      const T* pg = g.impl().ptr<T>();
      T* pd = dx.impl().ptr<T>();
      for (int64_t i = 0; i < tx.numel(); ++i) {
        const double v = static_cast<double>(px[i]);
        const double u = kGeluCoef * (v + kGeluCubic * v * v * v);
        const double th = std::tanh(u);
        const double sech2 = 1.0 - th * th;
        const double du = kGeluCoef * (1.0 + 3.0 * kGeluCubic * v * v);
        const double dv = 0.5 * (1.0 + th) + 0.5 * v * sech2 * du;
        pd[i] = static_cast<T>(static_cast<double>(pg[i]) * dv);
      }
    });
    acc_grad(tx, dx);
  });
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  return add(matmul(x, W), b);
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros(Shape{}, x.dtype());
  double acc = 0.0;
  const auto& im = x.impl();
  for (int64_t i = 0; i < im.numel(); ++i) acc += im.get(i);
  out.impl().set(0, acc);
  Tensor tx = x;
  return finalize(std::move(out), "sum_all", {x}, [tx](TensorImpl& o) {
    if (!tx.requires_grad()) return;
    const double gv = o.grad->get(0);
    acc_grad(tx, Tensor::full(tx.shape(), gv, tx.dtype()));
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace tryon
