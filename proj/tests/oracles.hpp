#pragma once

// Test-side oracles, implemented independently of the library code they
// verify: direct nested-loop convolution, full 2D Gaussian blur, central
// finite differences, and small helpers for building test tensors.

#include <cmath>
#include <vector>

#include <doctest.h>

#include "facet/common.hpp"
#include "facet/tensor.hpp"

namespace oracles {

inline facet::Tensor make(std::vector<int> shape, const std::vector<double>& v) {
  facet::Tensor t = facet::Tensor::zeros(std::move(shape));
  REQUIRE(Eigen::Index(v.size()) == t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = v[std::size_t(i)];
  return t;
}

inline facet::Tensor random_tensor(std::vector<int> shape, facet::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
  facet::Tensor t = facet::Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = rng.uniform(lo, hi);
  return t;
}

// Direct (non-GEMM) convolution over explicit loops.
inline facet::Tensor conv2d_naive(const facet::Tensor& in, const facet::Tensor& k, int stride,
                                  int ph, int pw) {
  const int ci = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int ho = (h + 2 * ph - kh) / stride + 1;
  const int wo = (w + 2 * pw - kw) / stride + 1;
  facet::Tensor out = facet::Tensor::zeros({co, ho, wo});
  for (int o = 0; o < co; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - ph;
              const int ix = ox * stride + kx - pw;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += in.at({c, iy, ix}) * k.at({o, c, ky, kx});
            }
        out.at({o, oy, ox}) = acc;
      }
  return out;
}

inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

inline std::vector<double> gauss_weights(double sigma) {
  const int r = int(std::ceil(3.0 * sigma));
  std::vector<double> w(std::size_t(2 * r + 1));
  double s = 0.0;
  for (int k = -r; k <= r; ++k) {
    w[std::size_t(k + r)] = std::exp(-0.5 * k * k / (sigma * sigma));
    s += w[std::size_t(k + r)];
  }
  for (double& v : w) v /= s;
  return w;
}

// Full 2D Gaussian convolution (outer-product kernel), per-axis reflection.
inline facet::Tensor blur2d_naive(const facet::Tensor& in, double sigma) {
  const std::vector<double> w = gauss_weights(sigma);
  const int r = (int(w.size()) - 1) / 2;
  const int c = in.shape[0], h = in.shape[1], wd = in.shape[2];
  facet::Tensor out = facet::Tensor::zeros(in.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        double acc = 0.0;
        for (int ky = -r; ky <= r; ++ky)
          for (int kx = -r; kx <= r; ++kx)
            acc += w[std::size_t(ky + r)] * w[std::size_t(kx + r)] *
                   in.at({ch, reflect(y + ky, h), reflect(x + kx, wd)});
        out.at({ch, y, x}) = acc;
      }
  return out;
}

// Central finite difference of a scalar-loss graph w.r.t. one element of a
// leaf/parameter node, replaying the tape around the perturbation.
inline double fd_grad(facet::Graph& g, facet::NodeId loss, facet::NodeId node, Eigen::Index elem,
                      double eps = 1e-5) {
  facet::Array& vals = g.value_mut(node).values;
  const double orig = vals[elem];
  vals[elem] = orig + eps;
  g.recompute();
  const double lp = g.value(loss).values[0];
  vals[elem] = orig - eps;
  g.recompute();
  const double lm = g.value(loss).values[0];
  vals[elem] = orig;
  g.recompute();
  return (lp - lm) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom < 1e-6 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace oracles
