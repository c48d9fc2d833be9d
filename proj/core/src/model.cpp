#include "cytocon/model.hpp"

#include <cmath>
#include <sstream>

#include "cytocon/error.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace {

std::string unit_prefix(int block, int unit) {
  return "encoder.block" + std::to_string(block) + ".conv" + std::to_string(unit);
}

std::string bn_prefix(int block, int unit) {
  return "encoder.block" + std::to_string(block) + ".bn" + std::to_string(unit);
}

bool is_stem(int block, int unit) { return block == 1 && unit == 1; }

nn::ConvGeometry unit_geometry(const EncoderConfig& c, int block, int unit) {
  return is_stem(block, unit) ? nn::ConvGeometry{c.stem_stride, c.stem_padding}
                              : nn::ConvGeometry{1, c.padding};
}

int unit_kernel(const EncoderConfig& c, int block, int unit) {
  return is_stem(block, unit) ? c.stem_kernel : c.kernel;
}

int unit_in_channels(const EncoderConfig& c, int block, int unit) {
  if (is_stem(block, unit)) return c.input_channels;
  return unit == 1 ? c.filters[block - 2] : c.filters[block - 1];
}

template <typename T>
void accumulate(BasicParams<T>& grads, const std::string& name, const BasicTensor<T>& g) {
  auto& dst = grads[name];
  if (dst.shape() != g.shape()) {
    throw ShapeError("gradient for " + name + " has shape " + shape_string(g.shape()) +
                     ", parameter is " + shape_string(dst.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
void add_batchnorm(BasicParams<T>& params, const std::string& prefix, std::size_t channels) {
  params.add(prefix + ".gamma", BasicTensor<T>({channels}, T{1}));
  params.add(prefix + ".beta", BasicTensor<T>({channels}, T{0}));
  params.add(prefix + ".running_mean", BasicTensor<T>({channels}, T{0}), false);
  params.add(prefix + ".running_var", BasicTensor<T>({channels}, T{1}), false);
}

template <typename T>
BasicTensor<T> bn_forward(const BasicParams<T>& params, const std::string& prefix,
                          const BasicTensor<T>& x, const ForwardOptions& options,
                          nn::BatchNormContext<T>* ctx, std::vector<NamedStats>* stats) {
  nn::BatchNormStats batch_stats;
  const bool train = options.mode == nn::Mode::kTrain;
  auto y = nn::batchnorm(x, params[prefix + ".gamma"], params[prefix + ".beta"],
                         params[prefix + ".running_mean"], params[prefix + ".running_var"],
                         options.mode, ctx, train && stats ? &batch_stats : nullptr,
                         train ? options.reducer : nullptr);
  if (train && stats) stats->push_back(NamedStats{prefix, std::move(batch_stats)});
  return y;
}

template <typename T>
BasicTensor<T> bn_backward(const BasicParams<T>& params, const std::string& prefix,
                           const BasicTensor<T>& grad, nn::BatchNormContext<T>& ctx,
                           BasicParams<T>& grads) {
  auto g = nn::batchnorm_backward(grad, params[prefix + ".gamma"], ctx);
  accumulate(grads, prefix + ".gamma", g.gamma);
  accumulate(grads, prefix + ".beta", g.beta);
  return std::move(g.input);
}

}  // namespace

void EncoderConfig::validate() const {
  if (filters.empty()) throw ConfigError("encoder needs at least one block");
  for (const int f : filters) {
    if (f < 1) throw ConfigError("encoder filter counts must be positive");
  }
  if (stem_kernel < 1 || stem_stride < 1 || stem_padding < 0 || kernel < 1 || padding < 0) {
    throw ConfigError("encoder kernel/stride/padding out of range");
  }
  if (input_channels < 1) throw ConfigError("encoder input channels must be positive");
}

std::vector<int> encoder_spatial_trace(const EncoderConfig& config, int side) {
  config.validate();
  std::vector<int> trace;
  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << "encoder: input side " << side << " incompatible; trace";
    for (const int s : trace) msg << ' ' << s << " ->";
    msg << ' ' << why;
    throw ShapeError(msg.str());
  };
  if (side + 2 * config.stem_padding < config.stem_kernel) fail("stem kernel exceeds padded input");
  int s = nn::conv_output_extent(side, config.stem_kernel, {config.stem_stride, config.stem_padding});
  for (int b = 1; b <= config.blocks(); ++b) {
    if (s + 2 * config.padding < config.kernel) {
      fail("block " + std::to_string(b) + " conv needs extent >= " +
           std::to_string(config.kernel - 2 * config.padding));
    }
    s = nn::conv_output_extent(s, config.kernel, {1, config.padding});
    trace.push_back(s);
    if (b < config.blocks()) {
      if (s < 2) fail("pool after block " + std::to_string(b) + " needs extent >= 2");
      s /= 2;
    }
  }
  return trace;
}

template <typename T>
BasicParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  const auto& enc = config.encoder;
  enc.validate();
  BasicParams<T> params;
  Rng rng(derive_seed(seed, {0x1417}));
  for (int b = 1; b <= enc.blocks(); ++b) {
    for (int u = 1; u <= 2; ++u) {
      const auto in = static_cast<std::size_t>(unit_in_channels(enc, b, u));
      const auto out = static_cast<std::size_t>(enc.filters[b - 1]);
      const auto k = static_cast<std::size_t>(unit_kernel(enc, b, u));
      params.add(unit_prefix(b, u) + ".weight", kaiming_normal<T>({out, in, k, k}, in * k * k, rng));
      params.add(unit_prefix(b, u) + ".bias", BasicTensor<T>({out}));
      add_batchnorm(params, bn_prefix(b, u), out);
    }
  }
  const auto features = static_cast<std::size_t>(enc.feature_dim());
  const auto hidden = static_cast<std::size_t>(config.projection.hidden_dim);
  const auto proj_out = static_cast<std::size_t>(config.projection.output_dim);
  if (hidden < 1 || proj_out < 1) throw ConfigError("projection dimensions must be positive");
  params.add("projection.fc1.weight", kaiming_normal<T>({features, hidden}, features, rng));
  params.add("projection.fc1.bias", BasicTensor<T>({hidden}));
  add_batchnorm(params, "projection.bn", hidden);
  params.add("projection.fc2.weight", kaiming_normal<T>({hidden, proj_out}, hidden, rng));
  params.add("projection.fc2.bias", BasicTensor<T>({proj_out}));
  if (config.classes > 0) {
    init_linear_head(params, enc.feature_dim(), config.classes, derive_seed(seed, {0x4ead}));
  }
  return params;
}

template <typename T>
void init_linear_head(BasicParams<T>& params, int feature_dim, int classes, std::uint64_t seed) {
  if (classes < 1 || feature_dim < 1) throw ConfigError("linear head needs positive dimensions");
  Rng rng(seed);
  const auto in = static_cast<std::size_t>(feature_dim);
  const auto out = static_cast<std::size_t>(classes);
  auto weight = kaiming_normal<T>({in, out}, in, rng);
  BasicTensor<T> bias({out});
  if (params.contains("head.weight")) {
    params["head.weight"] = std::move(weight);
    params["head.bias"] = std::move(bias);
  } else {
    params.add("head.weight", std::move(weight));
    params.add("head.bias", std::move(bias));
  }
}

template <typename T>
BasicTensor<T> encoder_forward(const BasicParams<T>& params, const EncoderConfig& config,
                               const BasicTensor<T>& input, const ForwardOptions& options,
                               EncoderTape<T>* tape, std::vector<NamedStats>* stats) {
  if (input.rank() != 4 || input.dim(1) != static_cast<std::size_t>(config.input_channels) ||
      input.dim(2) != input.dim(3)) {
    throw ShapeError("encoder: expected N x " + std::to_string(config.input_channels) +
                     " x P x P input, got " + shape_string(input.shape()));
  }
  encoder_spatial_trace(config, static_cast<int>(input.dim(2)));
  if (tape) {
    tape->units.assign(static_cast<std::size_t>(2 * config.blocks()), {});
    tape->pools.assign(static_cast<std::size_t>(config.blocks() - 1), {});
  }
  BasicTensor<T> x = input;
  for (int b = 1; b <= config.blocks(); ++b) {
    for (int u = 1; u <= 2; ++u) {
      auto* unit = tape ? &tape->units[static_cast<std::size_t>(2 * (b - 1) + (u - 1))] : nullptr;
      const auto prefix = unit_prefix(b, u);
      x = nn::conv2d(x, params[prefix + ".weight"], params[prefix + ".bias"],
                     unit_geometry(config, b, u), unit ? &unit->conv : nullptr);
      x = bn_forward(params, bn_prefix(b, u), x, options, unit ? &unit->bn : nullptr, stats);
      x = nn::relu(x, unit ? &unit->relu : nullptr);
    }
    if (b < config.blocks()) {
      x = nn::maxpool2d(x, tape ? &tape->pools[static_cast<std::size_t>(b - 1)] : nullptr);
    }
  }
  return nn::global_avg_pool(x, tape ? &tape->gap : nullptr);
}

template <typename T>
BasicTensor<T> encoder_backward(const BasicParams<T>& params, const EncoderConfig& config,
                                const BasicTensor<T>& grad_h, EncoderTape<T>& tape,
                                BasicParams<T>& grads) {
  BasicTensor<T> g = nn::global_avg_pool_backward(grad_h, tape.gap);
  for (int b = config.blocks(); b >= 1; --b) {
    if (b < config.blocks()) g = nn::maxpool2d_backward(g, tape.pools[static_cast<std::size_t>(b - 1)]);
    for (int u = 2; u >= 1; --u) {
      auto& unit = tape.units[static_cast<std::size_t>(2 * (b - 1) + (u - 1))];
      g = nn::relu_backward(g, unit.relu);
      g = bn_backward(params, bn_prefix(b, u), g, unit.bn, grads);
      const auto prefix = unit_prefix(b, u);
      auto cg = nn::conv2d_backward(g, params[prefix + ".weight"], unit.conv);
      accumulate(grads, prefix + ".weight", cg.weight);
      accumulate(grads, prefix + ".bias", cg.bias);
      g = std::move(cg.input);
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> projection_forward(const BasicParams<T>& params, const BasicTensor<T>& h,
                                  const ForwardOptions& options, ProjectionTape<T>* tape,
                                  std::vector<NamedStats>* stats) {
  auto x = nn::dense(h, params["projection.fc1.weight"], params["projection.fc1.bias"],
                     tape ? &tape->fc1 : nullptr);
  x = bn_forward(params, std::string("projection.bn"), x, options, tape ? &tape->bn : nullptr, stats);
  x = nn::relu(x, tape ? &tape->relu : nullptr);
  x = nn::dense(x, params["projection.fc2.weight"], params["projection.fc2.bias"],
                tape ? &tape->fc2 : nullptr);
  return nn::l2_normalize(x, tape ? &tape->normalize : nullptr);
}

template <typename T>
BasicTensor<T> projection_backward(const BasicParams<T>& params, const BasicTensor<T>& grad_z,
                                   ProjectionTape<T>& tape, BasicParams<T>& grads) {
  auto g = nn::l2_normalize_backward(grad_z, tape.normalize);
  auto d2 = nn::dense_backward(g, params["projection.fc2.weight"], tape.fc2);
  accumulate(grads, "projection.fc2.weight", d2.weight);
  accumulate(grads, "projection.fc2.bias", d2.bias);
  g = nn::relu_backward(d2.input, tape.relu);
  g = bn_backward(params, std::string("projection.bn"), g, tape.bn, grads);
  auto d1 = nn::dense_backward(g, params["projection.fc1.weight"], tape.fc1);
  accumulate(grads, "projection.fc1.weight", d1.weight);
  accumulate(grads, "projection.fc1.bias", d1.bias);
  return std::move(d1.input);
}

template <typename T>
BasicTensor<T> linear_head_forward(const BasicParams<T>& params, const BasicTensor<T>& h,
                                   nn::DenseContext<T>* ctx) {
  return nn::dense(h, params["head.weight"], params["head.bias"], ctx);
}

template <typename T>
BasicTensor<T> linear_head_backward(const BasicParams<T>& params, const BasicTensor<T>& grad_logits,
                                    nn::DenseContext<T>& ctx, BasicParams<T>& grads) {
  auto d = nn::dense_backward(grad_logits, params["head.weight"], ctx);
  accumulate(grads, "head.weight", d.weight);
  accumulate(grads, "head.bias", d.bias);
  return std::move(d.input);
}

template <typename T>
void apply_running_stats(BasicParams<T>& params, const std::vector<NamedStats>& stats,
                         double momentum) {
  for (const auto& s : stats) {
    nn::update_running_stats(params[s.prefix + ".running_mean"], params[s.prefix + ".running_var"],
                             s.stats, momentum);
  }
}

Tensor make_batch(const std::vector<std::vector<float>>& images, int side) {
  const auto plane = static_cast<std::size_t>(side) * side;
  Tensor batch({images.size(), 1, static_cast<std::size_t>(side), static_cast<std::size_t>(side)});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != plane) {
      throw ShapeError("make_batch: image " + std::to_string(i) + " is not " + std::to_string(side) +
                       "x" + std::to_string(side));
    }
    std::copy(images[i].begin(), images[i].end(), batch.data() + i * plane);
  }
  return batch;
}

#define CYTOCON_INSTANTIATE_MODEL(T)                                                              \
  template BasicParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                     \
  template void init_linear_head<T>(BasicParams<T>&, int, int, std::uint64_t);                   \
  template BasicTensor<T> encoder_forward(const BasicParams<T>&, const EncoderConfig&,           \
                                          const BasicTensor<T>&, const ForwardOptions&,          \
                                          EncoderTape<T>*, std::vector<NamedStats>*);            \
  template BasicTensor<T> encoder_backward(const BasicParams<T>&, const EncoderConfig&,          \
                                           const BasicTensor<T>&, EncoderTape<T>&,               \
                                           BasicParams<T>&);                                     \
  template BasicTensor<T> projection_forward(const BasicParams<T>&, const BasicTensor<T>&,       \
                                             const ForwardOptions&, ProjectionTape<T>*,          \
                                             std::vector<NamedStats>*);                          \
  template BasicTensor<T> projection_backward(const BasicParams<T>&, const BasicTensor<T>&,      \
                                              ProjectionTape<T>&, BasicParams<T>&);              \
  template BasicTensor<T> linear_head_forward(const BasicParams<T>&, const BasicTensor<T>&,      \
                                              nn::DenseContext<T>*);                             \
  template BasicTensor<T> linear_head_backward(const BasicParams<T>&, const BasicTensor<T>&,     \
                                               nn::DenseContext<T>&, BasicParams<T>&);           \
  template void apply_running_stats(BasicParams<T>&, const std::vector<NamedStats>&, double);

CYTOCON_INSTANTIATE_MODEL(float)
CYTOCON_INSTANTIATE_MODEL(double)

#undef CYTOCON_INSTANTIATE_MODEL

}  // namespace cytocon
