#pragma once

#include <span>
#include <vector>

#include "cytocon/tensor.hpp"

namespace cytocon {

inline constexpr double kUnitNormTolerance = 1e-5;

template <typename T>
struct LossResult {
  double value = 0.0;
  // Per-anchor terms; anchors without a same-label partner hold 0.
  std::vector<double> per_anchor;
  // Number of anchors that have at least one positive (the averaging count).
  std::size_t active_anchors = 0;
  BasicTensor<T> grad;
};

// Label-supervised contrastive loss over unit rows z (N x D):
//   L_i = logsumexp_{k != i}(<z_i, z_k> / tau) - mean_{j in P(i)} <z_i, z_j> / tau
// where P(i) are the other rows sharing y_i. L averages L_i over anchors with
// non-empty P(i); anchors without positives contribute nothing.
// `check_unit_rows` = false skips the unit-norm contract (finite-difference
// probes step off the sphere).
template <typename T>
LossResult<T> supervised_contrastive_loss(const BasicTensor<T>& z, std::span<const int> labels,
                                          double temperature, bool check_unit_rows = true);

// Mean over rows of -log softmax(logits)[label]; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace cytocon
