#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "facet/common.hpp"

namespace facet {

/// Dense N-dimensional array of doubles with an optional gradient slot.
/// Storage is flat row-major: for shape [C,H,W] element (c,h,w) lives at
/// (c*H + h)*W + w.
struct Tensor {
  std::vector<int> shape;
  Array values;
  std::optional<Array> grad;

  Tensor() = default;
  Tensor(std::vector<int> s, Array v) : shape(std::move(s)), values(std::move(v)) {
    require(values.size() == numel(shape), "tensor values length does not match shape");
  }

  static Eigen::Index numel(const std::vector<int>& s) {
    Eigen::Index n = 1;
    for (int d : s) {
      require(d > 0, "tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    Eigen::Index n = numel(s);
    return Tensor(std::move(s), Array::Zero(n));
  }

  static Tensor full(std::vector<int> s, double v) {
    Eigen::Index n = numel(s);
    return Tensor(std::move(s), Array::Constant(n, v));
  }

  Eigen::Index size() const { return values.size(); }
  int dim(int i) const { return shape.at(std::size_t(i)); }
  int rank() const { return int(shape.size()); }

  double& at(std::initializer_list<int> idx) { return values[flat(idx)]; }
  double at(std::initializer_list<int> idx) const { return values[flat(idx)]; }

  Eigen::Index flat(std::initializer_list<int> idx) const {
    require(idx.size() == shape.size(), "index rank mismatch");
    Eigen::Index off = 0;
    auto it = idx.begin();
    for (std::size_t d = 0; d < shape.size(); ++d, ++it) {
      require(*it >= 0 && *it < shape[d], "index out of range");
      off = off * shape[d] + *it;
    }
    return off;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const { return values.isFinite().all(); }
};

using NodeId = int;

enum class Padding { Same, Valid };
enum class UpsampleMode { Nearest, Bilinear };

/// Recorded computation graph. Operations evaluate eagerly as they are
/// recorded; the tape can replay all forwards (for finite-difference
/// probing) and runs backward exactly once per op in reverse order.
class Graph {
 public:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> forward;   // null for leaves
    std::function<void(Graph&, NodeId)> backward;  // null for leaves
    std::string name;
    bool is_param = false;
  };

  NodeId leaf(Tensor t, std::string name = "") {
    nodes_.push_back(Node{std::move(t), {}, nullptr, nullptr, std::move(name), false});
    return NodeId(nodes_.size() - 1);
  }

  NodeId parameter(Tensor t, std::string name) {
    require(!name.empty(), "parameters must be named");
    NodeId id = leaf(std::move(t), std::move(name));
    nodes_[std::size_t(id)].is_param = true;
    param_ids_.push_back(id);
    return id;
  }

  NodeId add_op(std::vector<NodeId> inputs, Tensor out,
                std::function<void(Graph&, NodeId)> forward,
                std::function<void(Graph&, NodeId)> backward, std::string name = "") {
    for (NodeId i : inputs)
      require(i >= 0 && i < NodeId(nodes_.size()), "op input does not precede it");
    nodes_.push_back(Node{std::move(out), std::move(inputs), std::move(forward),
                          std::move(backward), std::move(name), false});
    NodeId id = NodeId(nodes_.size() - 1);
    nodes_[std::size_t(id)].forward(*this, id);
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_.at(std::size_t(id)).value; }
  Tensor& value_mut(NodeId id) { return nodes_.at(std::size_t(id)).value; }

  Array& grad(NodeId id) {
    Tensor& t = nodes_.at(std::size_t(id)).value;
    if (!t.grad) t.grad = Array::Zero(t.values.size());
    return *t.grad;
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const { return param_ids_; }
  const std::vector<NodeId>& node_inputs(NodeId id) const {
    return nodes_.at(std::size_t(id)).inputs;
  }
  const std::string& name(NodeId id) const { return nodes_.at(std::size_t(id)).name; }
  bool is_param(NodeId id) const { return nodes_.at(std::size_t(id)).is_param; }

  /// Replay every recorded forward in insertion order (leaves keep their
  /// current values). Data-dependent selections (LMF keep-sets) are
  /// recomputed unless freeze_selections is set.
  void recompute() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].forward) nodes_[i].forward(*this, NodeId(i));
  }

  /// Reverse sweep from a scalar loss node. Gradients of all nodes are
  /// zeroed first; each op's backward runs exactly once.
  void backward(NodeId loss) {
    const Tensor& l = value(loss);
    require(l.size() == 1, "backward requires a scalar loss node");
    for (auto& n : nodes_)
      if (n.value.grad) n.value.grad->setZero();
    grad(loss)[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].backward && nodes_[i].value.grad) nodes_[i].backward(*this, NodeId(i));
    }
  }

  /// When set, ops with data-dependent selections reuse the masks cached
  /// by their last unfrozen forward. Used by finite-difference checks.
  bool freeze_selections = false;

 private:
  std::vector<Node> nodes_;
  std::vector<NodeId> param_ids_;
};

// ---- core differentiable operations ---------------------------------------

/// 2D convolution of input [C_in,H,W] with kernel [C_out,C_in,kh,kw].
NodeId conv2d(Graph& g, NodeId input, NodeId kernel, int stride, Padding padding);

/// Adds a per-channel bias [C] to a map [C,H,W], or elementwise to a vector [C].
NodeId add_bias(Graph& g, NodeId x, NodeId bias);

/// Fully-connected layer: logits[out] = W[out,in] * x[in] + b[out].
NodeId linear(Graph& g, NodeId x, NodeId weight, NodeId bias);

NodeId relu(Graph& g, NodeId x);

/// Spatial upsampling of [C,H,W] by an integer factor.
NodeId upsample(Graph& g, NodeId x, int factor, UpsampleMode mode);

NodeId concat_channels(Graph& g, const std::vector<NodeId>& xs);

/// Channel-wise Gaussian smoothing, reflect padding, kernel radius
/// ceil(3*sigma), truncated and renormalized.
NodeId gaussian_blur(Graph& g, NodeId x, double sigma);

/// Per-channel mean over the spatial map: [C,H,W] -> [C].
NodeId global_avg_pool(Graph& g, NodeId x);

/// Elementwise product with a constant 0/1 mask (no gradient to the mask).
NodeId mask_mul(Graph& g, NodeId x, const Array& mask);

/// Cross entropy of softmax(logits) against a class index, max-subtracted.
NodeId softmax_xent(Graph& g, NodeId logits, int label);

/// weights[i] * nodes[i] summed; every node must be scalar.
NodeId weighted_sum(Graph& g, const std::vector<NodeId>& nodes, const std::vector<double>& weights);

/// Central finite-difference check of every parameter's recorded gradient
/// against the loss. Selections are frozen during probing. Returns the
/// worst relative error.
double check_gradients(Graph& g, NodeId loss, double eps);

}  // namespace facet
