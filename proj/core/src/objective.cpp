#include "cytocon/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cytocon/error.hpp"

namespace cytocon {

template <typename T>
LossResult<T> supervised_contrastive_loss(const BasicTensor<T>& z, std::span<const int> labels,
                                          double temperature, bool check_unit_rows) {
  if (!(temperature > 0.0)) {
    throw ParameterError("contrastive loss: temperature must be > 0, got " + std::to_string(temperature));
  }
  if (z.rank() != 2) throw ShapeError("contrastive loss: z must be N x D, got " + shape_string(z.shape()));
  const std::size_t n = z.dim(0), d = z.dim(1);
  if (n < 2) throw ShapeError("contrastive loss: needs N >= 2");
  if (labels.size() != n) {
    throw ShapeError("contrastive loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; check_unit_rows && i < n; ++i) {
    const double norm = l2_norm<T>(z.values().subspan(i * d, d));
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw ParameterError("contrastive loss: row " + std::to_string(i) + " has norm " +
                           std::to_string(norm) + ", expected unit norm");
    }
  }

  // Scaled similarity matrix.
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(z[i * d + c]) * z[k * d + c];
      sim[i * n + k] = dot / temperature;
    }
  }

  LossResult<T> result;
  result.per_anchor.assign(n, 0.0);
  std::vector<double> positives(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) positives[i] += 1.0;
    }
    if (positives[i] > 0.0) ++result.active_anchors;
  }

  // Coefficients A_ik = dL/ds_ik.
  std::vector<double> coeff(n * n, 0.0);
  const double scale = result.active_anchors ? 1.0 / static_cast<double>(result.active_anchors) : 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i] == 0.0) continue;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) peak = std::max(peak, sim[i * n + k]);
    }
    double mass = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) mass += std::exp(sim[i * n + k] - peak);
    }
    const double lse = peak + std::log(mass);
    double positive_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) positive_sum += sim[i * n + j];
    }
    const double li = lse - positive_sum / positives[i];
    result.per_anchor[i] = li;
    total += li;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double p = std::exp(sim[i * n + k] - lse);
      const double target = labels[k] == labels[i] ? 1.0 / positives[i] : 0.0;
      coeff[i * n + k] = scale * (p - target);
    }
  }
  result.value = total * scale;

  // dL/dz = (A + A^T) z / tau
  std::vector<double> grad(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double w = (coeff[i * n + k] + coeff[k * n + i]) / temperature;
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) grad[i * d + c] += w * z[k * d + c];
    }
  }
  result.grad = BasicTensor<T>(z.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) result.grad[i] = static_cast<T>(grad[i]);
  return result;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross entropy: logits must be N x C, got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (n == 0) throw ShapeError("cross entropy: empty batch");
  if (labels.size() != n) throw ShapeError("cross entropy: label count does not match rows");
  LossResult<T> result;
  result.per_anchor.assign(n, 0.0);
  result.active_anchors = n;
  result.grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ParameterError("cross entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(c) + ")");
    }
    const T* row = logits.data() + i * c;
    double peak = row[0];
    for (std::size_t k = 1; k < c; ++k) peak = std::max(peak, static_cast<double>(row[k]));
    double mass = 0.0;
    for (std::size_t k = 0; k < c; ++k) mass += std::exp(row[k] - peak);
    const double lse = peak + std::log(mass);
    const double li = lse - row[labels[i]];
    result.per_anchor[i] = li;
    total += li;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(row[k] - lse);
      const double onehot = static_cast<std::size_t>(labels[i]) == k ? 1.0 : 0.0;
      result.grad[i * c + k] = static_cast<T>((p - onehot) / static_cast<double>(n));
    }
  }
  result.value = total / static_cast<double>(n);
  return result;
}

template LossResult<float> supervised_contrastive_loss(const Tensor&, std::span<const int>, double, bool);
template LossResult<double> supervised_contrastive_loss(const TensorD&, std::span<const int>, double, bool);
template LossResult<float> softmax_cross_entropy(const Tensor&, std::span<const int>);
template LossResult<double> softmax_cross_entropy(const TensorD&, std::span<const int>);

}  // namespace cytocon
