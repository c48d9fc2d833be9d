#include "cytocon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cytocon/model.hpp"
#include "cytocon/nn.hpp"
#include "cytocon/objective.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace {

constexpr double kDoubleTolerance = 1e-4;
constexpr double kFloatTolerance = 1e-3;

TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal(0.0, scale);
  return t;
}

// Values bounded away from zero so ReLU kinks stay out of reach of the step.
TensorD away_from_zero(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.storage()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Distinct values spaced well beyond the step so pooling argmaxes stay put.
TensorD distinct_values(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 0.01 * static_cast<double>(order[i]) + rng.uniform(0.0, 0.002);
  }
  return t;
}

TensorD unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  TensorD z = random_tensor({n, d}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += z[i * d + j] * z[i * d + j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] /= norm;
  }
  return z;
}

template <typename T>
double dot(const BasicTensor<T>& a, const TensorD& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

struct Probe {
  TensorD* input;
  TensorD analytic;
};

// Largest relative error over the probed tensors for one trial. Tensors whose
// true gradient vanishes (e.g. a bias feeding batch norm) are compared
// against a floor of 1e-3 times the largest gradient norm in the trial, so
// finite-difference round-off does not read as a 100% error.
// When `pattern` is given, the objective stores its activation pattern there;
// coordinates whose +-step evaluations change it straddle a kink and are
// skipped.
double compare(std::vector<Probe>& probes, const std::function<double()>& objective, Rng& rng,
               const GradcheckOptions& options, const std::uint64_t* pattern = nullptr) {
  std::uint64_t base = 0;
  if (pattern) {
    objective();
    base = *pattern;
  }
  std::vector<std::vector<double>> analytic(probes.size()), numeric(probes.size());
  double largest = 0.0;
  for (std::size_t t = 0; t < probes.size(); ++t) {
    auto& p = probes[t];
    std::vector<std::size_t> coords(p.input->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coordinates) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(options.max_coordinates);
    }
    for (const auto c : coords) {
      double& x = (*p.input)[c];
      const double saved = x;
      x = saved + options.step;
      const double plus = objective();
      const bool plus_smooth = !pattern || *pattern == base;
      x = saved - options.step;
      const double minus = objective();
      const bool minus_smooth = !pattern || *pattern == base;
      x = saved;
      if (!plus_smooth || !minus_smooth) continue;
      numeric[t].push_back((plus - minus) / (2.0 * options.step));
      analytic[t].push_back(p.analytic[c]);
    }
    largest = std::max({largest, l2_norm<double>(analytic[t]), l2_norm<double>(numeric[t])});
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < probes.size(); ++t) {
    worst = std::max(worst, gradient_relative_error(analytic[t], numeric[t], 1e-3 * largest));
  }
  return worst;
}

template <typename T>
TensorD widen(const BasicTensor<T>& t) {
  return t.template cast<double>();
}

using TrialFn = std::function<double(Rng&)>;

GradcheckResult run_op(const std::string& name, double tolerance, const TrialFn& trial,
                       const GradcheckOptions& options, std::uint64_t tag) {
  GradcheckResult r{name, options.trials, 0.0, tolerance};
  for (int t = 0; t < options.trials; ++t) {
    Rng rng(derive_seed(options.seed, {tag, static_cast<std::uint64_t>(t)}));
    r.max_relative_error = std::max(r.max_relative_error, trial(rng));
  }
  return r;
}

double conv_trial(Rng& rng, const GradcheckOptions& o, std::size_t channels, std::size_t side,
                  std::size_t kernel, nn::ConvGeometry geometry) {
  TensorD x = random_tensor({2, channels, side, side}, rng);
  TensorD w = random_tensor({3, channels, kernel, kernel}, rng, 0.5);
  TensorD b = random_tensor({3}, rng);
  nn::Conv2dContext<double> ctx;
  const TensorD y = nn::conv2d(x, w, b, geometry, &ctx);
  const TensorD r = random_tensor(y.shape(), rng);
  const auto g = nn::conv2d_backward(r, w, ctx);
  std::vector<Probe> probes{{&x, g.input}, {&w, g.weight}, {&b, g.bias}};
  return compare(probes, [&] { return dot(nn::conv2d(x, w, b, geometry), r); }, rng, o);
}

double batchnorm_trial(Rng& rng, const GradcheckOptions& o, nn::Mode mode) {
  const std::size_t c = 3;
  TensorD x = random_tensor({4, c, 3, 2}, rng, 2.0);
  TensorD gamma = random_tensor({c}, rng);
  TensorD beta = random_tensor({c}, rng);
  TensorD rmean = random_tensor({c}, rng);
  TensorD rvar({c});
  for (auto& v : rvar.storage()) v = rng.uniform(0.5, 2.0);
  nn::BatchNormContext<double> ctx;
  const TensorD y = nn::batchnorm(x, gamma, beta, rmean, rvar, mode, &ctx);
  const TensorD r = random_tensor(y.shape(), rng);
  const auto g = nn::batchnorm_backward(r, gamma, ctx);
  std::vector<Probe> probes{{&x, g.input}, {&gamma, g.gamma}, {&beta, g.beta}};
  return compare(probes, [&] { return dot(nn::batchnorm(x, gamma, beta, rmean, rvar, mode), r); },
                 rng, o);
}

template <typename T>
std::uint64_t activation_pattern(const EncoderTape<T>& encoder, const ProjectionTape<T>* projection) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (const auto& u : encoder.units) {
    for (const auto m : u.relu.mask) feed(m);
  }
  for (const auto& p : encoder.pools) {
    for (const auto a : p.argmax) feed(a);
  }
  if (projection) {
    for (const auto m : projection->relu.mask) feed(m);
  }
  return h;
}

// Tiny encoder -> projection -> contrastive loss; analytic gradients in T.
template <typename T>
double chain_trial(Rng& rng, const GradcheckOptions& o) {
  ModelConfig config;
  config.encoder.filters = {3, 4};
  config.encoder.stem_stride = 2;
  config.encoder.input_side = 12;
  config.projection = ProjectionConfig{5, 4};
  const auto seed = rng.engine()();
  BasicParams<double> params = init_params<double>(config, seed);
  for (auto& e : params.entries()) {
    if (e.name.ends_with(".bias") || e.name.ends_with(".beta")) {
      for (auto& v : e.value.storage()) v = rng.normal(0.0, 0.1);
    }
  }
  TensorD x = random_tensor({6, 1, 12, 12}, rng);
  const std::vector<int> labels{0, 1, 0, 2, 1, 0};
  const double tau = rng.uniform(0.2, 1.0);
  const ForwardOptions train{nn::Mode::kTrain, nullptr};

  std::uint64_t pattern = 0;
  auto loss_of = [&](const BasicParams<double>& p, const TensorD& input) {
    EncoderTape<double> et;
    ProjectionTape<double> pt;
    const TensorD h = encoder_forward(p, config.encoder, input, train, &et);
    const TensorD z = projection_forward(p, h, train, &pt);
    pattern = activation_pattern(et, &pt);
    return supervised_contrastive_loss(z, labels, tau, false).value;
  };

  const BasicParams<T> pt = params.template cast<T>();
  const BasicTensor<T> xt = x.template cast<T>();
  EncoderTape<T> etape;
  ProjectionTape<T> ptape;
  const BasicTensor<T> h = encoder_forward(pt, config.encoder, xt, train, &etape);
  const BasicTensor<T> z = projection_forward(pt, h, train, &ptape);
  const auto loss = supervised_contrastive_loss(z, labels, tau, false);
  BasicParams<T> grads = pt.zeros_like_trainable();
  const BasicTensor<T> gh = projection_backward(pt, loss.grad, ptape, grads);
  const BasicTensor<T> gx = encoder_backward(pt, config.encoder, gh, etape, grads);

  std::vector<Probe> probes;
  probes.push_back({&x, widen(gx)});
  for (auto& e : params.entries()) {
    if (e.trainable) probes.push_back({&e.value, widen(grads[e.name])});
  }
  return compare(probes, [&] { return loss_of(params, x); }, rng, o, &pattern);
}

}  // namespace

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor) {
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn_ += numeric[i] * numeric[i];
  }
  diff = std::sqrt(diff);
  const double scale = std::max({std::sqrt(na), std::sqrt(nn_), floor});
  return scale < 1e-10 ? diff : diff / scale;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& o) {
  std::vector<GradcheckResult> out;
  const double tol = kDoubleTolerance;

  out.push_back(run_op("conv2d", tol, [&](Rng& rng) {
    return conv_trial(rng, o, 2, 6, 3, nn::ConvGeometry{1, 1});
  }, o, 1));
  out.push_back(run_op("conv2d_stem", tol, [&](Rng& rng) {
    return conv_trial(rng, o, 1, 11, 5, nn::ConvGeometry{2, 2});
  }, o, 2));

  out.push_back(run_op("maxpool2d", tol, [&](Rng& rng) {
    TensorD x = distinct_values({2, 2, 5, 6}, rng);
    nn::MaxPoolContext<double> ctx;
    const TensorD y = nn::maxpool2d(x, &ctx);
    const TensorD r = random_tensor(y.shape(), rng);
    std::vector<Probe> probes{{&x, nn::maxpool2d_backward(r, ctx)}};
    return compare(probes, [&] { return dot(nn::maxpool2d(x), r); }, rng, o);
  }, o, 3));

  out.push_back(run_op("batchnorm_train", tol, [&](Rng& rng) {
    return batchnorm_trial(rng, o, nn::Mode::kTrain);
  }, o, 4));
  out.push_back(run_op("batchnorm_eval", tol, [&](Rng& rng) {
    return batchnorm_trial(rng, o, nn::Mode::kEval);
  }, o, 5));

  out.push_back(run_op("relu", tol, [&](Rng& rng) {
    TensorD x = away_from_zero({4, 7}, rng);
    nn::ReluContext<double> ctx;
    const TensorD y = nn::relu(x, &ctx);
    const TensorD r = random_tensor(y.shape(), rng);
    std::vector<Probe> probes{{&x, nn::relu_backward(r, ctx)}};
    return compare(probes, [&] { return dot(nn::relu(x), r); }, rng, o);
  }, o, 6));

  out.push_back(run_op("dense", tol, [&](Rng& rng) {
    TensorD x = random_tensor({5, 4}, rng);
    TensorD w = random_tensor({4, 3}, rng);
    TensorD b = random_tensor({3}, rng);
    nn::DenseContext<double> ctx;
    const TensorD y = nn::dense(x, w, b, &ctx);
    const TensorD r = random_tensor(y.shape(), rng);
    const auto g = nn::dense_backward(r, w, ctx);
    std::vector<Probe> probes{{&x, g.input}, {&w, g.weight}, {&b, g.bias}};
    return compare(probes, [&] { return dot(nn::dense(x, w, b), r); }, rng, o);
  }, o, 7));

  out.push_back(run_op("global_avg_pool", tol, [&](Rng& rng) {
    TensorD x = random_tensor({2, 3, 4, 5}, rng);
    nn::GlobalAvgPoolContext<double> ctx;
    const TensorD y = nn::global_avg_pool(x, &ctx);
    const TensorD r = random_tensor(y.shape(), rng);
    std::vector<Probe> probes{{&x, nn::global_avg_pool_backward(r, ctx)}};
    return compare(probes, [&] { return dot(nn::global_avg_pool(x), r); }, rng, o);
  }, o, 8));

  out.push_back(run_op("l2_normalize", tol, [&](Rng& rng) {
    TensorD x = random_tensor({5, 6}, rng);
    nn::L2NormalizeContext<double> ctx;
    const TensorD y = nn::l2_normalize(x, &ctx);
    const TensorD r = random_tensor(y.shape(), rng);
    std::vector<Probe> probes{{&x, nn::l2_normalize_backward(r, ctx)}};
    return compare(probes, [&] { return dot(nn::l2_normalize(x), r); }, rng, o);
  }, o, 9));

  out.push_back(run_op("projection_head", tol, [&](Rng& rng) {
    ModelConfig config;
    config.encoder.filters = {3, 6};
    config.projection = ProjectionConfig{5, 4};
    BasicParams<double> all = init_params<double>(config, rng.engine()());
    BasicParams<double> params = all.subset("projection.");
    // Non-zero biases keep rows whose hidden units are all clipped away from
    // the origin, where normalization is singular.
    for (auto& e : params.entries()) {
      if (e.name.ends_with(".bias") || e.name.ends_with(".beta")) {
        for (auto& v : e.value.storage()) v = rng.normal(0.0, 0.5);
      }
    }
    TensorD h = random_tensor({6, 6}, rng);
    const ForwardOptions train{nn::Mode::kTrain, nullptr};
    std::uint64_t pattern = 0;
    ProjectionTape<double> tape;
    const TensorD z = projection_forward(params, h, train, &tape);
    const TensorD r = random_tensor(z.shape(), rng);
    BasicParams<double> grads = params.zeros_like_trainable();
    const TensorD gh = projection_backward(params, r, tape, grads);
    std::vector<Probe> probes{{&h, gh}};
    for (auto& e : params.entries()) {
      if (e.trainable) probes.push_back({&e.value, grads[e.name]});
    }
    return compare(probes, [&] {
      ProjectionTape<double> t;
      const double v = dot(projection_forward(params, h, train, &t), r);
      pattern = 0;
      for (const auto m : t.relu.mask) pattern = pattern * 3 + m;
      return v;
    }, rng, o, &pattern);
  }, o, 10));

  out.push_back(run_op("contrastive_loss", tol, [&](Rng& rng) {
    TensorD z = unit_rows(7, 4, rng);
    const std::vector<int> labels{0, 1, 0, 2, 1, 0, 3};
    const double tau = rng.uniform(0.1, 1.0);
    std::vector<Probe> probes{{&z, supervised_contrastive_loss(z, labels, tau).grad}};
    return compare(probes, [&] { return supervised_contrastive_loss(z, labels, tau, false).value; },
                   rng, o);
  }, o, 11));

  out.push_back(run_op("cross_entropy", tol, [&](Rng& rng) {
    TensorD logits = random_tensor({5, 4}, rng, 2.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    std::vector<Probe> probes{{&logits, softmax_cross_entropy(logits, labels).grad}};
    return compare(probes, [&] { return softmax_cross_entropy(logits, labels).value; }, rng, o);
  }, o, 12));

  out.push_back(run_op("encoder_chain_f64", tol, [&](Rng& rng) { return chain_trial<double>(rng, o); },
                       o, 13));
  out.push_back(run_op("encoder_chain_f32", kFloatTolerance,
                       [&](Rng& rng) { return chain_trial<float>(rng, o); }, o, 14));
  return out;
}

}  // namespace cytocon
