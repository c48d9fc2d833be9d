#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytocon/nn.hpp"
#include "cytocon/params.hpp"

namespace cytocon {

// Six blocks of two conv-BN-ReLU units; the first unit of block 1 is the
// strided stem. Max-pooling follows every block except the last, and global
// average pooling reduces the final map to h.
struct EncoderConfig {
  std::vector<int> filters{16, 32, 64, 64, 128, 128};
  int stem_kernel = 5;
  int stem_stride = 4;
  int stem_padding = 2;
  int kernel = 3;
  int padding = 1;
  int input_channels = 1;
  int input_side = 128;

  int blocks() const { return static_cast<int>(filters.size()); }
  int feature_dim() const { return filters.empty() ? 0 : filters.back(); }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ProjectionConfig {
  int hidden_dim = 128;
  int output_dim = 128;
  friend bool operator==(const ProjectionConfig&, const ProjectionConfig&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  ProjectionConfig projection;
  // Linear head width; 0 means no head.
  int classes = 0;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Spatial extent each block operates at. Throws ShapeError carrying the trace
// up to the failing layer.
std::vector<int> encoder_spatial_trace(const EncoderConfig& config, int side);

template <typename T>
BasicParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Adds (or replaces) a freshly initialized linear head.
template <typename T>
void init_linear_head(BasicParams<T>& params, int feature_dim, int classes, std::uint64_t seed);

struct NamedStats {
  std::string prefix;
  nn::BatchNormStats stats;
};

struct ForwardOptions {
  nn::Mode mode = nn::Mode::kTrain;
  // Shared-statistics batch norm across simulated workers; null = local.
  nn::StatReducer* reducer = nullptr;
};

template <typename T>
struct ConvUnitTape {
  nn::Conv2dContext<T> conv;
  nn::BatchNormContext<T> bn;
  nn::ReluContext<T> relu;
};

template <typename T>
struct EncoderTape {
  std::vector<ConvUnitTape<T>> units;
  std::vector<nn::MaxPoolContext<T>> pools;
  nn::GlobalAvgPoolContext<T> gap;
};

template <typename T>
struct ProjectionTape {
  nn::DenseContext<T> fc1;
  nn::BatchNormContext<T> bn;
  nn::ReluContext<T> relu;
  nn::DenseContext<T> fc2;
  nn::L2NormalizeContext<T> normalize;
};

// input N x C x P x P -> h: N x D_e. Training-mode batch statistics are
// appended to `stats` when given.
template <typename T>
BasicTensor<T> encoder_forward(const BasicParams<T>& params, const EncoderConfig& config,
                               const BasicTensor<T>& input, const ForwardOptions& options,
                               EncoderTape<T>* tape = nullptr,
                               std::vector<NamedStats>* stats = nullptr);

// Accumulates parameter gradients into `grads`; returns d/d input.
template <typename T>
BasicTensor<T> encoder_backward(const BasicParams<T>& params, const EncoderConfig& config,
                                const BasicTensor<T>& grad_h, EncoderTape<T>& tape,
                                BasicParams<T>& grads);

// h -> unit-norm z: dense - BN - ReLU - dense - l2_normalize.
template <typename T>
BasicTensor<T> projection_forward(const BasicParams<T>& params, const BasicTensor<T>& h,
                                  const ForwardOptions& options, ProjectionTape<T>* tape = nullptr,
                                  std::vector<NamedStats>* stats = nullptr);

template <typename T>
BasicTensor<T> projection_backward(const BasicParams<T>& params, const BasicTensor<T>& grad_z,
                                   ProjectionTape<T>& tape, BasicParams<T>& grads);

template <typename T>
BasicTensor<T> linear_head_forward(const BasicParams<T>& params, const BasicTensor<T>& h,
                                   nn::DenseContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> linear_head_backward(const BasicParams<T>& params, const BasicTensor<T>& grad_logits,
                                    nn::DenseContext<T>& ctx, BasicParams<T>& grads);

// Folds batch statistics into the running buffers named by each prefix.
template <typename T>
void apply_running_stats(BasicParams<T>& params, const std::vector<NamedStats>& stats,
                         double momentum = nn::kBatchNormMomentum);

// Converts patches (side x side) into an N x 1 x side x side batch.
Tensor make_batch(const std::vector<std::vector<float>>& images, int side);

}  // namespace cytocon
