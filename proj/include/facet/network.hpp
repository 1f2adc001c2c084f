#pragma once

#include <string>
#include <vector>

#include "facet/common.hpp"
#include "facet/tensor.hpp"

namespace facet {

/// Architecture description for the configurable backbone. Blocks are runs
/// of 3x3 convs; each block's first conv carries the block stride. The
/// hypercolumn descriptor concatenates the block at hc_resolution with
/// every deeper block, nearest-upsampled back to hc_resolution and
/// projected by a 1x1 conv.
struct NetConfig {
  int input_size = 32;
  int in_channels = 1;
  std::vector<int> block_strides;               // first-conv stride per block
  std::vector<std::vector<int>> channel_widths; // per block, per conv output width
  int K = 32;              // response-bank size / feature length
  int hc_resolution = 8;   // must equal input_size / 4
  double d_percent = 75.0; // LMF drop rate
  int num_classes = 10;

  static NetConfig toy(int num_classes);
  static NetConfig paper(int num_classes);

  void validate() const;
  int num_blocks() const { return int(channel_widths.size()); }
  int block_resolution(int b) const;  // output resolution of block b
  int hc_block() const;               // last block whose resolution == hc_resolution
  int projection_width() const;       // 1x1 projection width for deep taps
  int phi_channels() const;
};

struct ForwardResult {
  Tensor phi;      // [C_hc, hc, hc]
  Tensor psi;      // [K, hc, hc]
  Tensor psi_lmf;  // [K, hc, hc]
  Tensor feature;  // [K]
  Tensor logits;   // [num_classes]
};

/// Weight container plus graph builders. Parameters live as plain tensors;
/// each training step declares them once in a fresh graph and records the
/// Siamese branches against those shared nodes.
class Model {
 public:
  struct GraphNodes {
    NodeId phi = -1, psi = -1, psi_lmf = -1, feature = -1, logits = -1;
  };

  static Model build(const NetConfig& cfg, Rng& rng);

  const NetConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor>& params_mut() { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  Eigen::Index num_parameters() const;
  int bank_index() const { return bank_index_; }
  int fc_w_index() const { return fc_w_index_; }
  int fc_b_index() const { return fc_b_index_; }

  /// Declares every parameter as a trainable node; ids parallel params().
  std::vector<NodeId> declare_params(Graph& g) const;

  /// Records one image's forward pass against shared parameter nodes.
  GraphNodes forward_graph(Graph& g, NodeId image,
                           const std::vector<NodeId>& param_nodes) const;

  /// Convenience single-image evaluation on the stored weights.
  ForwardResult forward(const Tensor& image) const;

 private:
  struct Conv {
    int w = -1, b = -1;  // parameter indices
    int stride = 1;
  };

  NetConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::vector<std::vector<Conv>> blocks_;
  std::vector<Conv> projections_;  // one per block deeper than the hc block
  int bank_index_ = -1, fc_w_index_ = -1, fc_b_index_ = -1;
};

/// Text header (config echo, parameter names and shapes) followed by the
/// raw little-endian double arrays in storage order; byte-exact round trip.
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace facet
