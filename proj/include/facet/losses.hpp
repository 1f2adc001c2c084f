#pragma once

#include <utility>
#include <vector>

#include "facet/tensor.hpp"

namespace facet {

// ---- Large Magnitude Filtering ----------------------------------------------

/// Keep count for a spatial plane under a drop rate d in [0,100):
/// round((1 - d/100) * plane), at least 1.
int lmf_keep_count(int plane, double d_percent);

/// Per channel, keeps the keep-count largest-magnitude elements and zeroes
/// the rest (ties keep the earlier element in row-major order). Gradient
/// flows only through kept elements. The kept-set is recomputed each forward
/// unless the graph's freeze_selections flag is set (finite-difference mode).
NodeId lmf(Graph& g, NodeId x, double d_percent);

/// Non-graph variant for analysis over fixed tensors.
Tensor lmf_tensor(const Tensor& x, double d_percent);

// ---- diversity losses --------------------------------------------------------

/// Filter-bank diversity penalty: with F_i^p the bank's per-position column
/// vectors, loss = sum over ordered pairs i != j of
/// | sum_p <F_i^p, F_j^p> / (||F_i^p|| * ||F_j^p||) |.
/// Throws (with the filter index) if any per-position column is zero.
NodeId sad_filter_loss(Graph& g, NodeId bank);

/// Response-map decorrelation: psi' = blur(lmf(response, d), sigma); loss =
/// sum over ordered pairs of squared cosine between flattened channels.
/// Channels whose smoothed map has zero norm contribute 0 to all pairs.
NodeId sad_response_loss(Graph& g, NodeId response, double d_percent, double sigma);

// ---- feature-activation diversity --------------------------------------------

enum class FadMode { Count, Value };

/// Binary selection mask over feature elements, chosen from clean/occluded
/// feature differences: count mode keeps the t elements with the smallest
/// mean |f - f_hat| (exactly t bits, ties to the lower index); value mode
/// keeps every element with mean difference strictly below t.
struct FeatureMask {
  Array bits;  // 0.0 or 1.0 per element
  int count() const { return int(bits.sum()); }
};

FeatureMask fad_mask(const std::vector<std::pair<Array, Array>>& pairs, FadMode mode, double t);

/// Masked L1 between the two feature branches: sum_i tau_i * |f_i - f_hat_i|.
NodeId fad_loss(Graph& g, NodeId f, NodeId f_hat, const FeatureMask& mask);

/// Identity loss of the masked occluded feature through the shared
/// classifier: softmax_xent(fc_w * (tau .* f_hat) + fc_b, label).
NodeId occluded_id_loss(Graph& g, NodeId f_hat, const FeatureMask& mask, NodeId fc_w, NodeId fc_b,
                        int label);

/// Weighted combination of the five loss terms; weights must be >= 0.
NodeId total_loss(Graph& g, const std::vector<NodeId>& terms, const std::vector<double>& weights);

}  // namespace facet
