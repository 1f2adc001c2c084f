#include "facet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include <Eigen/Dense>

namespace facet {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MapConstRowMat =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_chw(const Tensor& t, const char* what) {
  require(t.rank() == 3, std::string(what) + " expects a [C,H,W] tensor");
}

/// 0/1 keep-mask over all channels: per channel the keep-count
/// largest-magnitude elements, ties to the earlier row-major index.
Array lmf_mask(const Tensor& x, double d_percent) {
  const int C = x.dim(0);
  const int plane = x.dim(1) * x.dim(2);
  const int keep = lmf_keep_count(plane, d_percent);
  Array mask = Array::Zero(x.size());
  std::vector<int> idx(static_cast<std::size_t>(plane));
  for (int c = 0; c < C; ++c) {
    const double* v = x.values.data() + Eigen::Index(c) * plane;
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), [&](int a, int b) {
      const double ma = std::abs(v[a]), mb = std::abs(v[b]);
      if (ma != mb) return ma > mb;
      return a < b;
    });
    for (int i = 0; i < keep; ++i) mask[Eigen::Index(c) * plane + idx[std::size_t(i)]] = 1.0;
  }
  return mask;
}

/// Column vectors of a [K,C,kh,kw] bank at kernel position p, as a K x C matrix.
MatrixXd bank_position_matrix(const Tensor& bank, int p) {
  const int K = bank.dim(0), C = bank.dim(1), P = bank.dim(2) * bank.dim(3);
  MatrixXd M(K, C);
  for (int i = 0; i < K; ++i)
    for (int c = 0; c < C; ++c) M(i, c) = bank.values[Eigen::Index(i * C + c) * P + p];
  return M;
}

/// Sum over ordered channel pairs of the squared cosine between flattened
/// spatial maps. Zero-norm channels contribute 0 and receive zero gradient.
NodeId cos2_pair_loss(Graph& g, NodeId x) {
  check_chw(g.value(x), "response diversity loss");
  auto forward = [](Graph& gg, NodeId self) {
    const Tensor& t = gg.value(gg.node_inputs(self)[0]);
    const int K = t.dim(0);
    const Eigen::Index plane = Eigen::Index(t.dim(1)) * t.dim(2);
    MapConstRowMat M(t.values.data(), K, plane);
    VectorXd n = M.rowwise().norm();
    MatrixXd N = MatrixXd::Zero(K, plane);
    for (int i = 0; i < K; ++i)
      if (n(i) > 0.0) N.row(i) = M.row(i) / n(i);
    MatrixXd Cm = N * N.transpose();
    double loss = 0.0;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (i != j) loss += Cm(i, j) * Cm(i, j);
    gg.value_mut(self).values[0] = loss;
  };
  auto backward = [](Graph& gg, NodeId self) {
    const NodeId xi = gg.node_inputs(self)[0];
    const Tensor& t = gg.value(xi);
    const int K = t.dim(0);
    const Eigen::Index plane = Eigen::Index(t.dim(1)) * t.dim(2);
    const double go = (*gg.value(self).grad)[0];
    MapConstRowMat M(t.values.data(), K, plane);
    VectorXd n = M.rowwise().norm();
    MatrixXd N = MatrixXd::Zero(K, plane);
    for (int i = 0; i < K; ++i)
      if (n(i) > 0.0) N.row(i) = M.row(i) / n(i);
    MatrixXd Cm = N * N.transpose();
    MatrixXd G = 2.0 * go * Cm;
    G.diagonal().setZero();
    // d(loss)/dN for loss = sum_{i!=j} C_ij^2 with symmetric C = N N^T.
    MatrixXd dN = 2.0 * G * N;
    Array& xg = gg.grad(xi);
    for (int i = 0; i < K; ++i) {
      if (n(i) == 0.0) continue;
      const double dot = dN.row(i).dot(N.row(i));
      for (Eigen::Index q = 0; q < plane; ++q)
        xg[Eigen::Index(i) * plane + q] += (dN(i, q) - dot * N(i, q)) / n(i);
    }
  };
  return g.add_op({x}, Tensor::zeros({1}), forward, backward, "cos2_pair_loss");
}

}  // namespace

int lmf_keep_count(int plane, double d_percent) {
  require(plane > 0, "plane size must be positive");
  require(d_percent >= 0.0 && d_percent < 100.0, "drop rate must lie in [0, 100)");
  long keep = std::lround((1.0 - d_percent / 100.0) * double(plane));
  if (keep < 1) keep = 1;
  if (keep > plane) keep = plane;
  return int(keep);
}

NodeId lmf(Graph& g, NodeId x, double d_percent) {
  const Tensor& xv = g.value(x);
  check_chw(xv, "lmf");
  lmf_keep_count(xv.dim(1) * xv.dim(2), d_percent);  // validates the rate
  auto mask = std::make_shared<Array>();
  auto forward = [d_percent, mask](Graph& gg, NodeId self) {
    const Tensor& in = gg.value(gg.node_inputs(self)[0]);
    if (!(gg.freeze_selections && mask->size() == in.size())) *mask = lmf_mask(in, d_percent);
    gg.value_mut(self).values = in.values * (*mask);
  };
  auto backward = [mask](Graph& gg, NodeId self) {
    const NodeId xi = gg.node_inputs(self)[0];
    gg.grad(xi) += *gg.value(self).grad * (*mask);
  };
  return g.add_op({x}, Tensor::zeros(xv.shape), forward, backward, "lmf");
}

Tensor lmf_tensor(const Tensor& x, double d_percent) {
  check_chw(x, "lmf");
  Tensor out = Tensor::zeros(x.shape);
  out.values = x.values * lmf_mask(x, d_percent);
  return out;
}

NodeId sad_filter_loss(Graph& g, NodeId bank) {
  require(g.value(bank).rank() == 4, "filter diversity loss expects a [K,C,kh,kw] bank");
  auto forward = [](Graph& gg, NodeId self) {
    const Tensor& b = gg.value(gg.node_inputs(self)[0]);
    const int K = b.dim(0), P = b.dim(2) * b.dim(3);
    MatrixXd S = MatrixXd::Zero(K, K);
    for (int p = 0; p < P; ++p) {
      MatrixXd M = bank_position_matrix(b, p);
      VectorXd n = M.rowwise().norm();
      for (int i = 0; i < K; ++i)
        require(n(i) > 0.0, "filter diversity loss: filter " + std::to_string(i) +
                                " has a zero column at kernel position " + std::to_string(p));
      MatrixXd N = n.cwiseInverse().asDiagonal() * M;
      S.noalias() += N * N.transpose();
    }
    double loss = 0.0;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (i != j) loss += std::abs(S(i, j));
    gg.value_mut(self).values[0] = loss;
  };
  auto backward = [](Graph& gg, NodeId self) {
    const NodeId bi = gg.node_inputs(self)[0];
    const Tensor& b = gg.value(bi);
    const int K = b.dim(0), C = b.dim(1), P = b.dim(2) * b.dim(3);
    const double go = (*gg.value(self).grad)[0];
    std::vector<MatrixXd> Ns(static_cast<std::size_t>(P));
    std::vector<VectorXd> ns(static_cast<std::size_t>(P));
    MatrixXd S = MatrixXd::Zero(K, K);
    for (int p = 0; p < P; ++p) {
      MatrixXd M = bank_position_matrix(b, p);
      ns[std::size_t(p)] = M.rowwise().norm();
      Ns[std::size_t(p)] = ns[std::size_t(p)].cwiseInverse().asDiagonal() * M;
      S.noalias() += Ns[std::size_t(p)] * Ns[std::size_t(p)].transpose();
    }
    MatrixXd G = MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (i != j && S(i, j) != 0.0) G(i, j) = S(i, j) > 0.0 ? go : -go;
    Array& bg = gg.grad(bi);
    for (int p = 0; p < P; ++p) {
      const MatrixXd& N = Ns[std::size_t(p)];
      const VectorXd& n = ns[std::size_t(p)];
      MatrixXd dN = 2.0 * G * N;  // G is symmetric because S is
      for (int i = 0; i < K; ++i) {
        const double dot = dN.row(i).dot(N.row(i));
        for (int c = 0; c < C; ++c)
          bg[Eigen::Index(i * C + c) * P + p] += (dN(i, c) - dot * N(i, c)) / n(i);
      }
    }
  };
  return g.add_op({bank}, Tensor::zeros({1}), forward, backward, "sad_filter_loss");
}

NodeId sad_response_loss(Graph& g, NodeId response, double d_percent, double sigma) {
  check_chw(g.value(response), "response diversity loss");
  NodeId selected = lmf(g, response, d_percent);
  NodeId smoothed = gaussian_blur(g, selected, sigma);
  return cos2_pair_loss(g, smoothed);
}

FeatureMask fad_mask(const std::vector<std::pair<Array, Array>>& pairs, FadMode mode, double t) {
  require(!pairs.empty(), "feature mask needs at least one clean/occluded pair");
  const Eigen::Index K = pairs.front().first.size();
  require(K > 0, "feature mask: empty feature vectors");
  Array m = Array::Zero(K);
  for (const auto& [f, fh] : pairs) {
    require(f.size() == K && fh.size() == K, "feature mask: pair length mismatch");
    m += (f - fh).abs();
  }
  m /= double(pairs.size());
  FeatureMask out;
  out.bits = Array::Zero(K);
  if (mode == FadMode::Count) {
    require(t >= 1.0 && t <= double(K) && t == std::floor(t),
            "count-mode threshold must be an integer in [1, feature length]");
    const int tc = int(t);
    std::vector<int> idx(static_cast<std::size_t>(K));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + tc, idx.end(), [&](int a, int b) {
      if (m[a] != m[b]) return m[a] < m[b];
      return a < b;
    });
    for (int i = 0; i < tc; ++i) out.bits[idx[std::size_t(i)]] = 1.0;
  } else {
    for (Eigen::Index i = 0; i < K; ++i) out.bits[i] = m[i] < t ? 1.0 : 0.0;
  }
  return out;
}

NodeId fad_loss(Graph& g, NodeId f, NodeId f_hat, const FeatureMask& mask) {
  const Tensor& fv = g.value(f);
  const Tensor& hv = g.value(f_hat);
  require(fv.rank() == 1 && hv.rank() == 1, "masked feature distance expects vectors");
  require(fv.same_shape(hv), "masked feature distance: branch shapes differ");
  require(mask.bits.size() == fv.size(), "masked feature distance: mask length mismatch");
  const Array tau = mask.bits;
  auto forward = [tau](Graph& gg, NodeId self) {
    const auto& in = gg.node_inputs(self);
    const Array& a = gg.value(in[0]).values;
    const Array& b = gg.value(in[1]).values;
    gg.value_mut(self).values[0] = (tau * (a - b).abs()).sum();
  };
  auto backward = [tau](Graph& gg, NodeId self) {
    const std::vector<NodeId> in = gg.node_inputs(self);
    const double go = (*gg.value(self).grad)[0];
    const Array s = (gg.value(in[0]).values - gg.value(in[1]).values).sign();
    gg.grad(in[0]) += go * tau * s;
    gg.grad(in[1]) -= go * tau * s;
  };
  return g.add_op({f, f_hat}, Tensor::zeros({1}), forward, backward, "fad_loss");
}

NodeId occluded_id_loss(Graph& g, NodeId f_hat, const FeatureMask& mask, NodeId fc_w, NodeId fc_b,
                        int label) {
  require(mask.bits.size() == g.value(f_hat).size(),
          "occluded identity loss: mask length mismatch");
  NodeId masked = mask_mul(g, f_hat, mask.bits);
  NodeId logits = linear(g, masked, fc_w, fc_b);
  return softmax_xent(g, logits, label);
}

NodeId total_loss(Graph& g, const std::vector<NodeId>& terms, const std::vector<double>& weights) {
  require(!terms.empty(), "total loss needs at least one term");
  require(terms.size() == weights.size(), "total loss: one weight per term required");
  for (double w : weights) require(w >= 0.0, "total loss: weights must be non-negative");
  return weighted_sum(g, terms, weights);
}

}  // namespace facet
