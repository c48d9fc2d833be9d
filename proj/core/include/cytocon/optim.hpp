#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytocon/params.hpp"

namespace cytocon {

enum class OptimizerKind { kLars, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kLars;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double trust_eps = 1e-9;
  // Tensors whose name contains one of these skip the trust ratio.
  std::vector<std::string> exempt_patterns{".bias", ".gamma", ".beta"};
  // Forces the trust ratio to 1 everywhere (reduces LARS to momentum SGD).
  bool unit_trust = false;
};

struct OptimState {
  OptimizerConfig config;
  ModelParams momentum;
  std::uint64_t step = 0;
};

// 0.01 * N / 128, constant over training.
double scaled_lr(int batch_size);

OptimState make_optim_state(const ModelParams& params, const OptimizerConfig& config);

bool is_trust_exempt(const OptimizerConfig& config, const std::string& name);

// Trust ratio ||w|| / (||g|| + wd ||w|| + eps).
double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay, double eps);

// v <- mu v + lambda eta (g + wd w); w <- w - v. Only tensors present in
// `grads` are touched.
void lars_step(ModelParams& params, const ModelParams& grads, OptimState& state);

// v <- mu v + g + wd w; w <- w - eta v.
void sgd_step(ModelParams& params, const ModelParams& grads, OptimState& state);

// Dispatches on state.config.kind.
void optimizer_step(ModelParams& params, const ModelParams& grads, OptimState& state);

}  // namespace cytocon
