#include "facet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace facet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using MapConstRowMat = Eigen::Map<const RowMat>;

void check_chw(const Tensor& t, const char* what) {
  require(t.rank() == 3, std::string(what) + " must have shape [C,H,W]");
}

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

void im2col(const Tensor& in, int kh, int kw, int stride, int ph, int pw, int ho, int wo,
            Eigen::MatrixXd& cols) {
  const int c_in = in.dim(0), h = in.dim(1), w = in.dim(2);
  cols.setZero(c_in * kh * kw, ho * wo);
  const double* src = in.values.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - ph;
          if (iy < 0 || iy >= h) continue;
          const double* line = src + (c * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pw;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * wo + ox) = line[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Eigen::MatrixXd& cols, int c_in, int h, int w, int kh, int kw, int stride,
                int ph, int pw, int ho, int wo, Array& dst) {
  double* out = dst.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - ph;
          if (iy < 0 || iy >= h) continue;
          double* line = out + (c * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pw;
            if (ix < 0 || ix >= w) continue;
            line[ix] += cols(row, oy * wo + ox);
          }
        }
      }
    }
  }
}

std::vector<double> gaussian_weights(double sigma) {
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> w(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    double v = std::exp(-0.5 * double(k) * double(k) / (sigma * sigma));
    w[std::size_t(k + radius)] = v;
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

NodeId conv2d(Graph& g, NodeId input, NodeId kernel, int stride, Padding padding) {
  const Tensor& in = g.value(input);
  const Tensor& k = g.value(kernel);
  check_chw(in, "conv2d input");
  require(k.rank() == 4, "conv2d kernel must have shape [C_out,C_in,kh,kw]");
  require(stride >= 1, "conv2d stride must be >= 1");
  require(k.dim(1) == in.dim(0),
          "conv2d channel mismatch: input has " + std::to_string(in.dim(0)) +
              " channels, kernel expects " + std::to_string(k.dim(1)));
  const int c_out = k.dim(0), c_in = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int h = in.dim(1), w = in.dim(2);
  int ph = 0, pw = 0;
  if (padding == Padding::Same) {
    require(kh % 2 == 1 && kw % 2 == 1, "same-padding requires odd kernel dims");
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  } else {
    require(h >= kh && w >= kw, "valid conv needs input at least as large as kernel");
  }
  const int ho = (h + 2 * ph - kh) / stride + 1;
  const int wo = (w + 2 * pw - kw) / stride + 1;

  auto forward = [stride, ph, pw, ho, wo](Graph& gg, NodeId self) {
    const Tensor& x = gg.value(gg.node_inputs(self)[0]);
    const Tensor& kk = gg.value(gg.node_inputs(self)[1]);
    const int co = kk.dim(0), ci = kk.dim(1), fh = kk.dim(2), fw = kk.dim(3);
    Eigen::MatrixXd cols;
    im2col(x, fh, fw, stride, ph, pw, ho, wo, cols);
    MapConstRowMat km(kk.values.data(), co, ci * fh * fw);
    Tensor& out = gg.value_mut(self);
    MapRowMat om(out.values.data(), co, ho * wo);
    om.noalias() = km * cols;
  };
  auto backward = [stride, ph, pw, ho, wo](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    NodeId kin = gg.node_inputs(self)[1];
    const Tensor& x = gg.value(xin);
    const Tensor& kk = gg.value(kin);
    const int co = kk.dim(0), ci = kk.dim(1), fh = kk.dim(2), fw = kk.dim(3);
    Eigen::MatrixXd cols;
    im2col(x, fh, fw, stride, ph, pw, ho, wo, cols);
    MapConstRowMat go(gg.grad(self).data(), co, ho * wo);
    MapRowMat dk(gg.grad(kin).data(), co, ci * fh * fw);
    dk.noalias() += go * cols.transpose();
    MapConstRowMat km(kk.values.data(), co, ci * fh * fw);
    Eigen::MatrixXd dcols = km.transpose() * go;
    col2im_add(dcols, ci, x.dim(1), x.dim(2), fh, fw, stride, ph, pw, ho, wo, gg.grad(xin));
  };
  return g.add_op({input, kernel}, Tensor::zeros({c_out, ho, wo}), forward, backward, "conv2d");
}

NodeId add_bias(Graph& g, NodeId x, NodeId bias) {
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  require(bv.rank() == 1, "bias must be a vector");
  require(xv.dim(0) == bv.dim(0), "bias length must match leading dimension");
  require(xv.rank() == 3 || xv.rank() == 1, "add_bias expects [C,H,W] or [C]");

  auto forward = [](Graph& gg, NodeId self) {
    const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
    const Tensor& bb = gg.value(gg.node_inputs(self)[1]);
    Tensor& out = gg.value_mut(self);
    const Eigen::Index plane = xx.size() / bb.size();
    for (int c = 0; c < bb.dim(0); ++c)
      out.values.segment(c * plane, plane) = xx.values.segment(c * plane, plane) + bb.values[c];
  };
  auto backward = [](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    NodeId bin = gg.node_inputs(self)[1];
    const Array& go = gg.grad(self);
    gg.grad(xin) += go;
    Array& db = gg.grad(bin);
    const Eigen::Index plane = gg.value(xin).size() / db.size();
    for (Eigen::Index c = 0; c < db.size(); ++c) db[c] += go.segment(c * plane, plane).sum();
  };
  return g.add_op({x, bias}, Tensor::zeros(xv.shape), forward, backward, "add_bias");
}

NodeId linear(Graph& g, NodeId x, NodeId weight, NodeId bias) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  const Tensor& bv = g.value(bias);
  require(xv.rank() == 1, "linear input must be a vector");
  require(wv.rank() == 2, "linear weight must be [out,in]");
  require(wv.dim(1) == xv.dim(0), "linear weight columns must match input length");
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "linear bias must match output length");

  auto forward = [](Graph& gg, NodeId self) {
    const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
    const Tensor& ww = gg.value(gg.node_inputs(self)[1]);
    const Tensor& bb = gg.value(gg.node_inputs(self)[2]);
    MapConstRowMat wm(ww.values.data(), ww.dim(0), ww.dim(1));
    Tensor& out = gg.value_mut(self);
    out.values.matrix() = wm * xx.values.matrix() + bb.values.matrix();
  };
  auto backward = [](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    NodeId win = gg.node_inputs(self)[1];
    NodeId bin = gg.node_inputs(self)[2];
    const Tensor& xx = gg.value(xin);
    const Tensor& ww = gg.value(win);
    const Array& go = gg.grad(self);
    MapRowMat dw(gg.grad(win).data(), ww.dim(0), ww.dim(1));
    dw.noalias() += go.matrix() * xx.values.matrix().transpose();
    MapConstRowMat wm(ww.values.data(), ww.dim(0), ww.dim(1));
    gg.grad(xin).matrix().noalias() += wm.transpose() * go.matrix();
    gg.grad(bin) += go;
  };
  return g.add_op({x, weight, bias}, Tensor::zeros({wv.dim(0)}), forward, backward, "linear");
}

NodeId relu(Graph& g, NodeId x) {
  auto forward = [](Graph& gg, NodeId self) {
    gg.value_mut(self).values = gg.value(gg.node_inputs(self)[0]).values.max(0.0);
  };
  auto backward = [](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    gg.grad(xin) += gg.grad(self) * (gg.value(xin).values > 0.0).cast<double>();
  };
  return g.add_op({x}, Tensor::zeros(g.value(x).shape), forward, backward, "relu");
}

NodeId upsample(Graph& g, NodeId x, int factor, UpsampleMode mode) {
  const Tensor& in = g.value(x);
  check_chw(in, "upsample input");
  require(factor >= 1, "upsample factor must be >= 1");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int ho = h * factor, wo = w * factor;

  if (mode == UpsampleMode::Nearest) {
    auto forward = [factor, ho, wo](Graph& gg, NodeId self) {
      const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
      const int cc = xx.dim(0), hh = xx.dim(1), ww = xx.dim(2);
      Tensor& out = gg.value_mut(self);
      for (int ch = 0; ch < cc; ++ch)
        for (int y = 0; y < ho; ++y) {
          const double* line = xx.values.data() + (ch * hh + y / factor) * ww;
          double* dst = out.values.data() + (ch * ho + y) * wo;
          for (int xpos = 0; xpos < wo; ++xpos) dst[xpos] = line[xpos / factor];
        }
    };
    auto backward = [factor, ho, wo](Graph& gg, NodeId self) {
      NodeId xin = gg.node_inputs(self)[0];
      const Tensor& xx = gg.value(xin);
      const int cc = xx.dim(0), hh = xx.dim(1), ww = xx.dim(2);
      Array& dx = gg.grad(xin);
      const Array& go = gg.grad(self);
      for (int ch = 0; ch < cc; ++ch)
        for (int y = 0; y < ho; ++y) {
          const double* src = go.data() + (ch * ho + y) * wo;
          double* dst = dx.data() + (ch * hh + y / factor) * ww;
          for (int xpos = 0; xpos < wo; ++xpos) dst[xpos / factor] += src[xpos];
        }
    };
    return g.add_op({x}, Tensor::zeros({c, ho, wo}), forward, backward, "upsample_nearest");
  }

  // bilinear, half-pixel centers
  auto coeffs = [factor](int out_i, int n) {
    double src = (out_i + 0.5) / factor - 0.5;
    src = std::min(std::max(src, 0.0), double(n - 1));
    int lo = int(std::floor(src));
    int hi = std::min(lo + 1, n - 1);
    double t = src - lo;
    return std::tuple<int, int, double>(lo, hi, t);
  };
  auto forward = [factor, ho, wo, coeffs](Graph& gg, NodeId self) {
    const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
    const int cc = xx.dim(0), hh = xx.dim(1), ww = xx.dim(2);
    Tensor& out = gg.value_mut(self);
    for (int y = 0; y < ho; ++y) {
      auto [y0, y1, ty] = coeffs(y, hh);
      for (int xpos = 0; xpos < wo; ++xpos) {
        auto [x0, x1, tx] = coeffs(xpos, ww);
        for (int ch = 0; ch < cc; ++ch) {
          const double* p = xx.values.data() + ch * hh * ww;
          double v = (1 - ty) * ((1 - tx) * p[y0 * ww + x0] + tx * p[y0 * ww + x1]) +
                     ty * ((1 - tx) * p[y1 * ww + x0] + tx * p[y1 * ww + x1]);
          out.values[(ch * ho + y) * wo + xpos] = v;
        }
      }
    }
  };
  auto backward = [factor, ho, wo, coeffs](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    const Tensor& xx = gg.value(xin);
    const int cc = xx.dim(0), hh = xx.dim(1), ww = xx.dim(2);
    Array& dx = gg.grad(xin);
    const Array& go = gg.grad(self);
    for (int y = 0; y < ho; ++y) {
      auto [y0, y1, ty] = coeffs(y, hh);
      for (int xpos = 0; xpos < wo; ++xpos) {
        auto [x0, x1, tx] = coeffs(xpos, ww);
        for (int ch = 0; ch < cc; ++ch) {
          double gv = go[(ch * ho + y) * wo + xpos];
          double* p = dx.data() + ch * hh * ww;
          p[y0 * ww + x0] += (1 - ty) * (1 - tx) * gv;
          p[y0 * ww + x1] += (1 - ty) * tx * gv;
          p[y1 * ww + x0] += ty * (1 - tx) * gv;
          p[y1 * ww + x1] += ty * tx * gv;
        }
      }
    }
  };
  return g.add_op({x}, Tensor::zeros({c, ho, wo}), forward, backward, "upsample_bilinear");
}

NodeId concat_channels(Graph& g, const std::vector<NodeId>& xs) {
  require(!xs.empty(), "concat_channels needs at least one input");
  const Tensor& first = g.value(xs[0]);
  check_chw(first, "concat_channels input");
  int c_total = 0;
  for (NodeId id : xs) {
    const Tensor& t = g.value(id);
    check_chw(t, "concat_channels input");
    require(t.dim(1) == first.dim(1) && t.dim(2) == first.dim(2),
            "concat_channels spatial dims must match");
    c_total += t.dim(0);
  }
  auto forward = [](Graph& gg, NodeId self) {
    Tensor& out = gg.value_mut(self);
    Eigen::Index off = 0;
    for (NodeId id : gg.node_inputs(self)) {
      const Array& v = gg.value(id).values;
      out.values.segment(off, v.size()) = v;
      off += v.size();
    }
  };
  auto backward = [](Graph& gg, NodeId self) {
    const Array& go = gg.grad(self);
    Eigen::Index off = 0;
    for (NodeId id : gg.node_inputs(self)) {
      Array& dx = gg.grad(id);
      dx += go.segment(off, dx.size());
      off += dx.size();
    }
  };
  return g.add_op(xs, Tensor::zeros({c_total, first.dim(1), first.dim(2)}), forward, backward,
                  "concat_channels");
}

NodeId gaussian_blur(Graph& g, NodeId x, double sigma) {
  require(sigma > 0.0, "gaussian_blur sigma must be positive");
  const Tensor& in = g.value(x);
  check_chw(in, "gaussian_blur input");
  auto weights = std::make_shared<std::vector<double>>(gaussian_weights(sigma));

  auto forward = [weights](Graph& gg, NodeId self) {
    const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
    const int c = xx.dim(0), h = xx.dim(1), w = xx.dim(2);
    const int r = (int(weights->size()) - 1) / 2;
    Tensor& out = gg.value_mut(self);
    Array tmp(h * w);
    for (int ch = 0; ch < c; ++ch) {
      const double* src = xx.values.data() + ch * h * w;
      // horizontal pass
      for (int y = 0; y < h; ++y)
        for (int xx2 = 0; xx2 < w; ++xx2) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k)
            acc += (*weights)[std::size_t(k + r)] * src[y * w + reflect_index(xx2 + k, w)];
          tmp[y * w + xx2] = acc;
        }
      // vertical pass
      double* dst = out.values.data() + ch * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx2 = 0; xx2 < w; ++xx2) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k)
            acc += (*weights)[std::size_t(k + r)] * tmp[reflect_index(y + k, h) * w + xx2];
          dst[y * w + xx2] = acc;
        }
    }
  };
  auto backward = [weights](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    const Tensor& xx = gg.value(xin);
    const int c = xx.dim(0), h = xx.dim(1), w = xx.dim(2);
    const int r = (int(weights->size()) - 1) / 2;
    const Array& go = gg.grad(self);
    Array& dx = gg.grad(xin);
    Array tmp(h * w);
    for (int ch = 0; ch < c; ++ch) {
      const double* src = go.data() + ch * h * w;
      tmp.setZero();
      // adjoint of vertical pass: scatter
      for (int y = 0; y < h; ++y)
        for (int xx2 = 0; xx2 < w; ++xx2) {
          double gv = src[y * w + xx2];
          for (int k = -r; k <= r; ++k)
            tmp[reflect_index(y + k, h) * w + xx2] += (*weights)[std::size_t(k + r)] * gv;
        }
      // adjoint of horizontal pass
      double* dst = dx.data() + ch * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx2 = 0; xx2 < w; ++xx2) {
          double gv = tmp[y * w + xx2];
          for (int k = -r; k <= r; ++k)
            dst[y * w + reflect_index(xx2 + k, w)] += (*weights)[std::size_t(k + r)] * gv;
        }
    }
  };
  return g.add_op({x}, Tensor::zeros(in.shape), forward, backward, "gaussian_blur");
}

NodeId global_avg_pool(Graph& g, NodeId x) {
  const Tensor& in = g.value(x);
  check_chw(in, "global_avg_pool input");
  const int c = in.dim(0);
  auto forward = [](Graph& gg, NodeId self) {
    const Tensor& xx = gg.value(gg.node_inputs(self)[0]);
    const Eigen::Index plane = Eigen::Index(xx.dim(1)) * xx.dim(2);
    Tensor& out = gg.value_mut(self);
    for (int ch = 0; ch < xx.dim(0); ++ch)
      out.values[ch] = xx.values.segment(ch * plane, plane).mean();
  };
  auto backward = [](Graph& gg, NodeId self) {
    NodeId xin = gg.node_inputs(self)[0];
    const Tensor& xx = gg.value(xin);
    const Eigen::Index plane = Eigen::Index(xx.dim(1)) * xx.dim(2);
    Array& dx = gg.grad(xin);
    const Array& go = gg.grad(self);
    for (int ch = 0; ch < xx.dim(0); ++ch)
      dx.segment(ch * plane, plane) += go[ch] / double(plane);
  };
  return g.add_op({x}, Tensor::zeros({c}), forward, backward, "global_avg_pool");
}

NodeId mask_mul(Graph& g, NodeId x, const Array& mask) {
  const Tensor& in = g.value(x);
  require(in.size() == mask.size(), "mask length must match tensor size");
  auto m = std::make_shared<Array>(mask);
  auto forward = [m](Graph& gg, NodeId self) {
    gg.value_mut(self).values = gg.value(gg.node_inputs(self)[0]).values * (*m);
  };
  auto backward = [m](Graph& gg, NodeId self) {
    gg.grad(gg.node_inputs(self)[0]) += gg.grad(self) * (*m);
  };
  return g.add_op({x}, Tensor::zeros(in.shape), forward, backward, "mask_mul");
}

NodeId softmax_xent(Graph& g, NodeId logits, int label) {
  const Tensor& lv = g.value(logits);
  require(lv.rank() == 1, "softmax_xent expects a logits vector");
  require(label >= 0 && label < lv.dim(0),
          "label " + std::to_string(label) + " out of range for " + std::to_string(lv.dim(0)) +
              " classes");
  auto probs = std::make_shared<Array>();
  auto forward = [probs, label](Graph& gg, NodeId self) {
    const Array& l = gg.value(gg.node_inputs(self)[0]).values;
    double m = l.maxCoeff();
    *probs = (l - m).exp();
    double z = probs->sum();
    *probs /= z;
    gg.value_mut(self).values[0] = std::log(z) - (l[label] - m);
  };
  auto backward = [probs, label](Graph& gg, NodeId self) {
    NodeId lin = gg.node_inputs(self)[0];
    Array delta = *probs;
    delta[label] -= 1.0;
    gg.grad(lin) += gg.grad(self)[0] * delta;
  };
  return g.add_op({logits}, Tensor::zeros({1}), forward, backward, "softmax_xent");
}

NodeId weighted_sum(Graph& g, const std::vector<NodeId>& nodes,
                    const std::vector<double>& weights) {
  require(nodes.size() == weights.size(), "weighted_sum needs one weight per node");
  require(!nodes.empty(), "weighted_sum needs at least one term");
  for (NodeId id : nodes) require(g.value(id).size() == 1, "weighted_sum terms must be scalar");
  auto w = std::make_shared<std::vector<double>>(weights);
  auto forward = [w](Graph& gg, NodeId self) {
    double acc = 0.0;
    const auto& ins = gg.node_inputs(self);
    for (std::size_t i = 0; i < ins.size(); ++i) acc += (*w)[i] * gg.value(ins[i]).values[0];
    gg.value_mut(self).values[0] = acc;
  };
  auto backward = [w](Graph& gg, NodeId self) {
    const double go = gg.grad(self)[0];
    const auto& ins = gg.node_inputs(self);
    for (std::size_t i = 0; i < ins.size(); ++i) gg.grad(ins[i])[0] += (*w)[i] * go;
  };
  return g.add_op(nodes, Tensor::zeros({1}), forward, backward, "weighted_sum");
}

double check_gradients(Graph& g, NodeId loss, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, "finite-difference eps must lie in [1e-7, 1e-3]");
  require(g.value(loss).size() == 1, "check_gradients requires a scalar loss");
  g.backward(loss);

  std::vector<Array> analytic;
  analytic.reserve(g.parameters().size());
  for (NodeId p : g.parameters()) analytic.push_back(g.grad(p));

  const bool prev_freeze = g.freeze_selections;
  g.freeze_selections = true;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < g.parameters().size(); ++pi) {
    NodeId p = g.parameters()[pi];
    Array& vals = g.value_mut(p).values;
    for (Eigen::Index e = 0; e < vals.size(); ++e) {
      const double orig = vals[e];
      vals[e] = orig + eps;
      g.recompute();
      const double lp = g.value(loss).values[0];
      vals[e] = orig - eps;
      g.recompute();
      const double lm = g.value(loss).values[0];
      vals[e] = orig;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = analytic[pi][e];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom >= 1e-6) worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  g.recompute();
  g.freeze_selections = prev_freeze;
  return worst;
}

}  // namespace facet
