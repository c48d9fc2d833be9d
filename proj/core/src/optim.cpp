#include "cytocon/optim.hpp"

#include <cmath>

#include "cytocon/error.hpp"

namespace cytocon {

namespace {

void check_gradient(const ModelParams& params, const ModelParams::Entry& g) {
  if (!params.contains(g.name)) throw OptimizerError("gradient for unknown tensor " + g.name);
  if (params[g.name].shape() != g.value.shape()) {
    throw OptimizerError("gradient for " + g.name + " has shape " + shape_string(g.value.shape()) +
                         ", parameter is " + shape_string(params[g.name].shape()));
  }
  if (!g.value.all_finite()) throw OptimizerError("non-finite gradient in tensor " + g.name);
}

Tensor& momentum_for(OptimState& state, const std::string& name, const Shape& shape) {
  if (!state.momentum.contains(name)) state.momentum.add(name, Tensor(shape));
  return state.momentum[name];
}

}  // namespace

double scaled_lr(int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  return 0.01 * batch_size / 128.0;
}

OptimState make_optim_state(const ModelParams& params, const OptimizerConfig& config) {
  OptimState state;
  state.config = config;
  state.momentum = params.zeros_like_trainable();
  return state;
}

bool is_trust_exempt(const OptimizerConfig& config, const std::string& name) {
  for (const auto& pattern : config.exempt_patterns) {
    if (name.find(pattern) != std::string::npos) return true;
  }
  return false;
}

double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay, double eps) {
  return weight_norm / (grad_norm + weight_decay * weight_norm + eps);
}

void lars_step(ModelParams& params, const ModelParams& grads, OptimState& state) {
  const auto& cfg = state.config;
  for (const auto& g : grads.entries()) check_gradient(params, g);
  for (const auto& g : grads.entries()) {
    auto& w = params[g.name];
    auto& v = momentum_for(state, g.name, w.shape());
    double trust = 1.0;
    if (!cfg.unit_trust && !is_trust_exempt(cfg, g.name)) {
      trust = lars_trust_ratio(l2_norm<float>(w.values()), l2_norm<float>(g.value.values()),
                               cfg.weight_decay, cfg.trust_eps);
    }
    const double step = trust * cfg.learning_rate;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double update = cfg.momentum * v[i] + step * (g.value[i] + cfg.weight_decay * w[i]);
      v[i] = static_cast<float>(update);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
  ++state.step;
}

void sgd_step(ModelParams& params, const ModelParams& grads, OptimState& state) {
  const auto& cfg = state.config;
  for (const auto& g : grads.entries()) check_gradient(params, g);
  for (const auto& g : grads.entries()) {
    auto& w = params[g.name];
    auto& v = momentum_for(state, g.name, w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double velocity = cfg.momentum * v[i] + g.value[i] + cfg.weight_decay * w[i];
      v[i] = static_cast<float>(velocity);
      w[i] = static_cast<float>(w[i] - cfg.learning_rate * velocity);
    }
  }
  ++state.step;
}

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimState& state) {
  if (state.config.kind == OptimizerKind::kLars) {
    lars_step(params, grads, state);
  } else {
    sgd_step(params, grads, state);
  }
}

}  // namespace cytocon
