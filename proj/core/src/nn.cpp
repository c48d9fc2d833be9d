#include "cytocon/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cytocon/error.hpp"
#include "gemm.hpp"

namespace cytocon::nn {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(shape));
  }
}

void require_shape(const Shape& actual, const Shape& expected, const char* op, const char* what) {
  if (actual != expected) {
    throw ShapeError(std::string(op) + ": " + what + " expected " + shape_string(expected) +
                     ", got " + shape_string(actual));
  }
}

// Channel axis 1; everything after it is spatial.
struct ChannelLayout {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t spatial = 1;
};

ChannelLayout channel_layout(const Shape& shape, const char* op) {
  if (shape.size() < 2) {
    throw ShapeError(std::string(op) + ": input needs a channel axis, got " + shape_string(shape));
  }
  ChannelLayout l{shape[0], shape[1], 1};
  for (std::size_t i = 2; i < shape.size(); ++i) l.spatial *= shape[i];
  return l;
}

template <typename T>
void im2col(const T* image, std::size_t channels, int height, int width, int kernel,
            ConvGeometry g, int out_h, int out_w, T* col) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = image + c * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, T{});
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            row[ox] = (ix < 0 || ix >= width) ? T{} : src[iy * width + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, int height, int width, int kernel, ConvGeometry g,
            int out_h, int out_w, T* image) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = image + c * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < width) dst[iy * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

void ContextGuard::consume(const char* op) {
  if (!recorded) throw Error(std::string(op) + ": backward called without a recorded forward");
  if (consumed) throw Error(std::string(op) + ": backward called twice for one forward");
  consumed = true;
}

int conv_output_extent(int extent, int kernel, ConvGeometry g) {
  return (extent + 2 * g.padding - kernel) / g.stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvGeometry g, Conv2dContext<T>* ctx) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const std::size_t o = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  require_shape(weight.shape(), {o, c, static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                "conv2d", "weight");
  require_shape(bias.shape(), {o}, "conv2d", "bias");
  if (g.stride < 1 || g.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (h + 2 * g.padding < k || w + 2 * g.padding < k) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " with padding " +
                     std::to_string(g.padding) + " smaller than kernel " + std::to_string(k));
  }
  const int oh = conv_output_extent(h, k, g), ow = conv_output_extent(w, k, g);
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t col_rows = c * k * k;

  BasicTensor<T> out({n, o, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  std::vector<T> col(col_rows * plane);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.data() + s * c * h * w, c, h, w, k, g, oh, ow, col.data());
    T* dst = out.data() + s * o * plane;
    for (std::size_t oc = 0; oc < o; ++oc) std::fill(dst + oc * plane, dst + (oc + 1) * plane, bias[oc]);
    detail::gemm_nn(o, plane, col_rows, weight.data(), col.data(), dst);
  }
  if (ctx) {
    ctx->input = input;
    ctx->geometry = g;
    ctx->guard.record();
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& weight,
                               Conv2dContext<T>& ctx) {
  ctx.guard.consume("conv2d");
  const auto& input = ctx.input;
  const ConvGeometry g = ctx.geometry;
  const std::size_t n = input.dim(0), c = input.dim(1);
  const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const std::size_t o = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  const int oh = conv_output_extent(h, k, g), ow = conv_output_extent(w, k, g);
  require_shape(grad_output.shape(), {n, o, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)},
                "conv2d backward", "grad_output");
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t col_rows = c * k * k;

  Conv2dGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
                       BasicTensor<T>({o})};
  std::vector<T> col(col_rows * plane);
  std::vector<T> col_t(plane * col_rows);
  std::vector<T> dcol(col_rows * plane);
  // Parameter gradients reduce over batch and plane; accumulate wide so the
  // result barely depends on how the batch is sharded.
  std::vector<double> dweight(o * col_rows, 0.0);
  std::vector<double> dbias(o, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* gout = grad_output.data() + s * o * plane;
    im2col(input.data() + s * c * h * w, c, h, w, k, g, oh, ow, col.data());
    for (std::size_t r = 0; r < col_rows; ++r) {
      for (std::size_t p = 0; p < plane; ++p) col_t[p * col_rows + r] = col[r * plane + p];
    }
    detail::gemm_nn(o, col_rows, plane, gout, col_t.data(), dweight.data());
    for (std::size_t oc = 0; oc < o; ++oc) {
      for (std::size_t p = 0; p < plane; ++p) dbias[oc] += gout[oc * plane + p];
    }
    std::fill(dcol.begin(), dcol.end(), T{});
    detail::gemm_tn(o, plane, col_rows, weight.data(), gout, dcol.data());
    col2im(dcol.data(), c, h, w, k, g, oh, ow, grads.input.data() + s * c * h * w);
  }
  for (std::size_t i = 0; i < dweight.size(); ++i) grads.weight[i] = static_cast<T>(dweight[i]);
  for (std::size_t oc = 0; oc < o; ++oc) grads.bias[oc] = static_cast<T>(dbias[oc]);
  return grads;
}

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, MaxPoolContext<T>* ctx) {
  require_rank(input.shape(), 4, "maxpool2d", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2d: spatial extent " + shape_string(input.shape()) + " below 2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  std::size_t idx = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
        std::size_t best = base + 2 * oy * w + 2 * ox;
        // Row-major scan; strict comparison keeps the first maximum on ties.
        for (const std::size_t cand : {best + 1, best + w, best + w + 1}) {
          if (input[cand] > input[best]) best = cand;
        }
        out[idx] = input[best];
        argmax[idx] = best;
      }
    }
  }
  if (ctx) {
    ctx->input_shape = input.shape();
    ctx->argmax = std::move(argmax);
    ctx->guard.record();
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_output, MaxPoolContext<T>& ctx) {
  ctx.guard.consume("maxpool2d");
  if (grad_output.size() != ctx.argmax.size()) {
    throw ShapeError("maxpool2d backward: grad_output " + shape_string(grad_output.shape()) +
                     " does not match forward output");
  }
  BasicTensor<T> grad(ctx.input_shape);
  for (std::size_t i = 0; i < ctx.argmax.size(); ++i) grad[ctx.argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                         const BasicTensor<T>& running_var, Mode mode, BatchNormContext<T>* ctx,
                         BatchNormStats* stats, StatReducer* reducer, double eps) {
  const auto l = channel_layout(input.shape(), "batchnorm");
  for (const auto* t : {&gamma, &beta, &running_mean, &running_var}) {
    require_shape(t->shape(), {l.channels}, "batchnorm", "per-channel parameter");
  }
  std::vector<double> mean(l.channels), var(l.channels);
  std::size_t count = l.batch * l.spatial;
  if (mode == Mode::kTrain) {
    // Two passes (mean, then centered squares), each summed across workers.
    std::vector<double> buffer(l.channels + 1, 0.0);
    for (std::size_t s = 0; s < l.batch; ++s) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        const T* x = input.data() + (s * l.channels + c) * l.spatial;
        double acc = 0.0;
        for (std::size_t i = 0; i < l.spatial; ++i) acc += x[i];
        buffer[c] += acc;
      }
    }
    buffer[l.channels] = static_cast<double>(count);
    if (reducer) reducer->allreduce_sum(buffer);
    count = static_cast<std::size_t>(buffer[l.channels]);
    if (count < 2) {
      throw StatisticsError("batchnorm: training mode needs >= 2 values per channel, got " +
                            std::to_string(count));
    }
    for (std::size_t c = 0; c < l.channels; ++c) mean[c] = buffer[c] / static_cast<double>(count);
    std::vector<double> squares(l.channels, 0.0);
    for (std::size_t s = 0; s < l.batch; ++s) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        const T* x = input.data() + (s * l.channels + c) * l.spatial;
        double acc = 0.0;
        for (std::size_t i = 0; i < l.spatial; ++i) {
          const double d = x[i] - mean[c];
          acc += d * d;
        }
        squares[c] += acc;
      }
    }
    if (reducer) reducer->allreduce_sum(squares);
    for (std::size_t c = 0; c < l.channels; ++c) var[c] = squares[c] / static_cast<double>(count);
    if (stats) *stats = BatchNormStats{mean, var, count};
  } else {
    for (std::size_t c = 0; c < l.channels; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }
  std::vector<double> inv_std(l.channels);
  for (std::size_t c = 0; c < l.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  BasicTensor<T> out(input.shape());
  BasicTensor<T> normalized;
  if (ctx) normalized = BasicTensor<T>(input.shape());
  for (std::size_t s = 0; s < l.batch; ++s) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (s * l.channels + c) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double xhat = (input[base + i] - mean[c]) * inv_std[c];
        if (ctx) normalized[base + i] = static_cast<T>(xhat);
        out[base + i] = static_cast<T>(gamma[c] * xhat + beta[c]);
      }
    }
  }
  if (ctx) {
    ctx->normalized = std::move(normalized);
    ctx->inv_std = std::move(inv_std);
    ctx->mode = mode;
    ctx->count = count;
    ctx->reducer = reducer;
    ctx->guard.record();
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& gamma,
                                     BatchNormContext<T>& ctx) {
  ctx.guard.consume("batchnorm");
  require_shape(grad_output.shape(), ctx.normalized.shape(), "batchnorm backward", "grad_output");
  const auto l = channel_layout(grad_output.shape(), "batchnorm backward");
  const auto& xhat = ctx.normalized;
  BatchNormGrads<T> grads{BasicTensor<T>(grad_output.shape()), BasicTensor<T>({l.channels}),
                          BasicTensor<T>({l.channels})};
  // Local sums of dy and dy * xhat.
  std::vector<double> sums(2 * l.channels, 0.0);
  for (std::size_t s = 0; s < l.batch; ++s) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (s * l.channels + c) * l.spatial;
      double dy_sum = 0.0, dy_xhat = 0.0;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        dy_sum += grad_output[base + i];
        dy_xhat += static_cast<double>(grad_output[base + i]) * xhat[base + i];
      }
      sums[c] += dy_sum;
      sums[l.channels + c] += dy_xhat;
    }
  }
  for (std::size_t c = 0; c < l.channels; ++c) {
    grads.beta[c] = static_cast<T>(sums[c]);
    grads.gamma[c] = static_cast<T>(sums[l.channels + c]);
  }
  if (ctx.mode == Mode::kEval) {
    for (std::size_t s = 0; s < l.batch; ++s) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t base = (s * l.channels + c) * l.spatial;
        const double scale = gamma[c] * ctx.inv_std[c];
        for (std::size_t i = 0; i < l.spatial; ++i) {
          grads.input[base + i] = static_cast<T>(grad_output[base + i] * scale);
        }
      }
    }
    return grads;
  }
  if (ctx.reducer) ctx.reducer->allreduce_sum(sums);
  const double count = static_cast<double>(ctx.count);
  for (std::size_t s = 0; s < l.batch; ++s) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (s * l.channels + c) * l.spatial;
      // dxhat = dy * gamma, so its sums are gamma times the dy sums.
      const double g = gamma[c];
      const double mean_dxhat = g * sums[c] / count;
      const double mean_dxhat_xhat = g * sums[l.channels + c] / count;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double dxhat = grad_output[base + i] * g;
        grads.input[base + i] = static_cast<T>(
            ctx.inv_std[c] * (dxhat - mean_dxhat - xhat[base + i] * mean_dxhat_xhat));
      }
    }
  }
  return grads;
}

template <typename T>
void update_running_stats(BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                          const BatchNormStats& stats, double momentum) {
  if (running_mean.size() != stats.mean.size() || running_var.size() != stats.var.size()) {
    throw ShapeError("update_running_stats: channel count mismatch");
  }
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * stats.mean[c]);
    running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * stats.var[c]);
  }
}

BatchNormStats average_stats(std::span<const BatchNormStats> shards) {
  if (shards.empty()) throw StatisticsError("average_stats: no shards");
  BatchNormStats out{std::vector<double>(shards[0].mean.size(), 0.0),
                     std::vector<double>(shards[0].var.size(), 0.0), 0};
  for (const auto& s : shards) {
    if (s.mean.size() != out.mean.size()) throw StatisticsError("average_stats: channel mismatch");
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      out.mean[c] += s.mean[c];
      out.var[c] += s.var[c];
    }
    out.count += s.count;
  }
  for (std::size_t c = 0; c < out.mean.size(); ++c) {
    out.mean[c] /= static_cast<double>(shards.size());
    out.var[c] /= static_cast<double>(shards.size());
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input, ReluContext<T>* ctx) {
  BasicTensor<T> out(input.shape());
  std::vector<unsigned char> mask;
  if (ctx) mask.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool on = input[i] > T{};
    out[i] = on ? input[i] : T{};
    if (ctx) mask[i] = on;
  }
  if (ctx) {
    ctx->mask = std::move(mask);
    ctx->guard.record();
  }
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_output, ReluContext<T>& ctx) {
  ctx.guard.consume("relu");
  if (grad_output.size() != ctx.mask.size()) throw ShapeError("relu backward: size mismatch");
  BasicTensor<T> grad(grad_output.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = ctx.mask[i] ? grad_output[i] : T{};
  return grad;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias, DenseContext<T>* ctx) {
  require_rank(input.shape(), 2, "dense", "input");
  require_rank(weight.shape(), 2, "dense", "weight");
  const std::size_t n = input.dim(0), in = input.dim(1), out_dim = weight.dim(1);
  require_shape(weight.shape(), {in, out_dim}, "dense", "weight");
  require_shape(bias.shape(), {out_dim}, "dense", "bias");
  BasicTensor<T> out({n, out_dim});
  for (std::size_t s = 0; s < n; ++s) std::copy(bias.data(), bias.data() + out_dim, out.data() + s * out_dim);
  detail::gemm_nn(n, out_dim, in, input.data(), weight.data(), out.data());
  if (ctx) {
    ctx->input = input;
    ctx->guard.record();
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& weight,
                             DenseContext<T>& ctx) {
  ctx.guard.consume("dense");
  const auto& input = ctx.input;
  const std::size_t n = input.dim(0), in = input.dim(1), out_dim = weight.dim(1);
  require_shape(grad_output.shape(), {n, out_dim}, "dense backward", "grad_output");
  DenseGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
                      BasicTensor<T>({out_dim})};
  std::vector<double> dweight(in * out_dim, 0.0);
  std::vector<double> dbias(out_dim, 0.0);
  detail::gemm_tn(n, out_dim, in, input.data(), grad_output.data(), dweight.data());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < out_dim; ++j) dbias[j] += grad_output[s * out_dim + j];
  }
  for (std::size_t i = 0; i < dweight.size(); ++i) grads.weight[i] = static_cast<T>(dweight[i]);
  for (std::size_t j = 0; j < out_dim; ++j) grads.bias[j] = static_cast<T>(dbias[j]);
  detail::gemm_nt(n, in, out_dim, grad_output.data(), weight.data(), grads.input.data());
  return grads;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input, GlobalAvgPoolContext<T>* ctx) {
  require_rank(input.shape(), 4, "global_avg_pool", "input");
  const auto l = channel_layout(input.shape(), "global_avg_pool");
  if (l.spatial == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  BasicTensor<T> out({l.batch, l.channels});
  for (std::size_t i = 0; i < l.batch * l.channels; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < l.spatial; ++p) acc += input[i * l.spatial + p];
    out[i] = static_cast<T>(acc / static_cast<double>(l.spatial));
  }
  if (ctx) {
    ctx->input_shape = input.shape();
    ctx->guard.record();
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_output,
                                        GlobalAvgPoolContext<T>& ctx) {
  ctx.guard.consume("global_avg_pool");
  const auto l = channel_layout(ctx.input_shape, "global_avg_pool backward");
  require_shape(grad_output.shape(), {l.batch, l.channels}, "global_avg_pool backward",
                "grad_output");
  BasicTensor<T> grad(ctx.input_shape);
  const double scale = 1.0 / static_cast<double>(l.spatial);
  for (std::size_t i = 0; i < l.batch * l.channels; ++i) {
    const T v = static_cast<T>(grad_output[i] * scale);
    std::fill(grad.data() + i * l.spatial, grad.data() + (i + 1) * l.spatial, v);
  }
  return grad;
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& input, L2NormalizeContext<T>* ctx, double eps) {
  require_rank(input.shape(), 2, "l2_normalize", "input");
  const std::size_t n = input.dim(0), d = input.dim(1);
  BasicTensor<T> out(input.shape());
  std::vector<double> norms(n);
  for (std::size_t s = 0; s < n; ++s) {
    const T* row = input.data() + s * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += static_cast<double>(row[j]) * row[j];
    norms[s] = std::sqrt(sq);
    const double denom = std::max(norms[s], eps);
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] = static_cast<T>(row[j] / denom);
  }
  if (ctx) {
    ctx->output = out;
    ctx->norms = std::move(norms);
    ctx->eps = eps;
    ctx->guard.record();
  }
  return out;
}

template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& grad_output, L2NormalizeContext<T>& ctx) {
  ctx.guard.consume("l2_normalize");
  require_shape(grad_output.shape(), ctx.output.shape(), "l2_normalize backward", "grad_output");
  const std::size_t n = grad_output.dim(0), d = grad_output.dim(1);
  BasicTensor<T> grad(grad_output.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const T* y = ctx.output.data() + s * d;
    const T* dy = grad_output.data() + s * d;
    if (ctx.norms[s] < ctx.eps) {
      for (std::size_t j = 0; j < d; ++j) grad[s * d + j] = static_cast<T>(dy[j] / ctx.eps);
      continue;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(y[j]) * dy[j];
    for (std::size_t j = 0; j < d; ++j) {
      grad[s * d + j] = static_cast<T>((dy[j] - y[j] * dot) / ctx.norms[s]);
    }
  }
  return grad;
}

#define CYTOCON_INSTANTIATE_NN(T)                                                                 \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, ConvGeometry, Conv2dContext<T>*);        \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                          Conv2dContext<T>&);                                    \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&, MaxPoolContext<T>*);                  \
  template BasicTensor<T> maxpool2d_backward(const BasicTensor<T>&, MaxPoolContext<T>&);         \
  template BasicTensor<T> batchnorm(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                    const BasicTensor<T>&, const BasicTensor<T>&,                \
                                    const BasicTensor<T>&, Mode, BatchNormContext<T>*,           \
                                    BatchNormStats*, StatReducer*, double);                      \
  template BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                BatchNormContext<T>&);                           \
  template void update_running_stats(BasicTensor<T>&, BasicTensor<T>&, const BatchNormStats&,    \
                                     double);                                                    \
  template BasicTensor<T> relu(const BasicTensor<T>&, ReluContext<T>*);                          \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, ReluContext<T>&);                 \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                const BasicTensor<T>&, DenseContext<T>*);                        \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                        DenseContext<T>&);                                       \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&, GlobalAvgPoolContext<T>*);      \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&,                        \
                                                   GlobalAvgPoolContext<T>&);                    \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, L2NormalizeContext<T>*, double);   \
  template BasicTensor<T> l2_normalize_backward(const BasicTensor<T>&, L2NormalizeContext<T>&);

CYTOCON_INSTANTIATE_NN(float)
CYTOCON_INSTANTIATE_NN(double)

#undef CYTOCON_INSTANTIATE_NN

}  // namespace cytocon::nn
