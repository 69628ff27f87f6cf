#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written as the dumbest possible route:
// triple loops, direct formulas, finite differences. None of it calls the
// code paths it verifies.

#include <cmath>
#include <functional>
#include <vector>

#include "tryon/tensor.hpp"

namespace oracles {

// dense [m,k] x [k,p] triple loop
inline std::vector<double> matmul_loops(const std::vector<double>& a, const std::vector<double>& b,
                                        int64_t m, int64_t k, int64_t p) {
  std::vector<double> c(static_cast<size_t>(m * p), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += a[static_cast<size_t>(i * k + kk)] * b[static_cast<size_t>(kk * p + j)];
      c[static_cast<size_t>(i * p + j)] = acc;
    }
  return c;
}

// direct exp/sum softmax of one row (no masking, no stabilization tricks)
inline std::vector<double> softmax_direct(const std::vector<double>& x) {
  double sum = 0.0;
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) sum += std::exp(x[i]);
  for (size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]) / sum;
  return y;
}

// direct mean/variance layer norm of one row
inline std::vector<double> layer_norm_direct(const std::vector<double>& x,
                                             const std::vector<double>& gain,
                                             const std::vector<double>& bias, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - mean) / std::sqrt(var + eps) * gain[i] + bias[i];
  return y;
}

// central finite difference of f with respect to coordinate i of `leaf`
inline double finite_diff(tryon::Tensor leaf, int64_t i,
                          const std::function<double()>& eval, double h = 1e-5) {
  auto& im = leaf.impl();
  const double orig = im.get(i);
  im.set(i, orig + h);
  const double fp = eval();
  im.set(i, orig - h);
  const double fm = eval();
  im.set(i, orig);
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor_ = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

// Exhaustive gradient check: analytic grads of `loss_fn()` versus central
// finite differences on up to `max_coords` coordinates of each leaf.
// Returns the max relative error encountered.
inline double grad_check(std::vector<tryon::Tensor> leaves,
                         const std::function<tryon::Tensor()>& loss_fn, tryon::Rng& pick,
                         int max_coords = 8, double h = 1e-5) {
  tryon::Tensor loss = loss_fn();
  for (auto& l : leaves) l.zero_grad();
  tryon::backward(loss);
  double worst = 0.0;
  auto eval = [&]() {
    tryon::NoGradGuard ng;
    return loss_fn().item();
  };
  for (auto& leaf : leaves) {
    tryon::Tensor g = leaf.grad();
    const int64_t n = leaf.numel();
    const int64_t count = std::min<int64_t>(n, max_coords);
    for (int64_t c = 0; c < count; ++c) {
      const int64_t i = count == n ? c : pick.uniform_int(0, n - 1);
      const double analytic = g.defined() ? g.impl().get(i) : 0.0;
      const double numeric = finite_diff(leaf, i, eval, h);
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

// Liang-Barsky style closed-interval clip: does the segment meet the axis
// aligned box [x0,x1]x[y0,y1]? Equivalent to Chebyshev distance from the box
// center to the segment being at most half the box size.
inline bool segment_meets_box(double ax, double ay, double bx, double by, double x0, double y0,
                              double x1, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = bx - ax, dy = by - ay;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {ax - x0, x1 - ax, ay - y0, y1 - ay};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;  // parallel and outside
    } else {
      const double r = q[i] / p[i];
      if (p[i] < 0.0) {
        if (r > t1) return false;
        if (r > t0) t0 = r;
      } else {
        if (r < t0) return false;
        if (r < t1) t1 = r;
      }
    }
  }
  return t0 <= t1;
}

// multi-head attention computed head by head, token by token, including the
// output projection; q/k/v are already-projected [S,d] rows for one batch
inline std::vector<double> attention_loops(const std::vector<double>& q,
                                           const std::vector<double>& k,
                                           const std::vector<double>& v,
                                           const std::vector<double>* mask,  // [Sq*Sk] additive
                                           const std::vector<double>& Wo,
                                           const std::vector<double>& bo, int64_t Sq, int64_t Sk,
                                           int64_t d, int heads, double block_threshold = -1e8) {
  const int64_t dh = d / heads;
  std::vector<double> merged(static_cast<size_t>(Sq * d), 0.0);
  for (int h = 0; h < heads; ++h) {
    const int64_t off = h * dh;
    for (int64_t i = 0; i < Sq; ++i) {
      std::vector<double> logits(static_cast<size_t>(Sk));
      std::vector<bool> blocked(static_cast<size_t>(Sk), false);
      bool any = false;
      for (int64_t j = 0; j < Sk; ++j) {
        const double mval = mask ? (*mask)[static_cast<size_t>(i * Sk + j)] : 0.0;
        if (mval <= block_threshold) {
          blocked[static_cast<size_t>(j)] = true;
          continue;
        }
        double dot = 0.0;
        for (int64_t c = 0; c < dh; ++c)
          dot += q[static_cast<size_t>(i * d + off + c)] * k[static_cast<size_t>(j * d + off + c)];
        logits[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh)) + mval;
        any = true;
      }
      if (!any) continue;  // fully blocked row stays zero
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < Sk; ++j)
        if (!blocked[static_cast<size_t>(j)]) mx = std::max(mx, logits[static_cast<size_t>(j)]);
      double sum = 0.0;
      for (int64_t j = 0; j < Sk; ++j)
        if (!blocked[static_cast<size_t>(j)]) sum += std::exp(logits[static_cast<size_t>(j)] - mx);
      for (int64_t j = 0; j < Sk; ++j) {
        if (blocked[static_cast<size_t>(j)]) continue;
        const double a = std::exp(logits[static_cast<size_t>(j)] - mx) / sum;
        for (int64_t c = 0; c < dh; ++c)
          merged[static_cast<size_t>(i * d + off + c)] += a * v[static_cast<size_t>(j * d + off + c)];
      }
    }
  }
  std::vector<double> out(static_cast<size_t>(Sq * d), 0.0);
  for (int64_t i = 0; i < Sq; ++i)
    for (int64_t o = 0; o < d; ++o) {
      double acc = bo[static_cast<size_t>(o)];
      for (int64_t c = 0; c < d; ++c)
        acc += merged[static_cast<size_t>(i * d + c)] * Wo[static_cast<size_t>(c * d + o)];
      out[static_cast<size_t>(i * d + o)] = acc;
    }
  return out;
}

}  // namespace oracles
