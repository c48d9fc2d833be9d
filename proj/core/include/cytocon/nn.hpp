#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cytocon/tensor.hpp"

// Differentiable operators with explicit forward/backward pairs. Every forward
// optionally records what its backward needs in an op context; each context
// may be consumed by exactly one backward call.
namespace cytocon::nn {

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kL2NormalizeEps = 1e-12;
inline constexpr double kBatchNormMomentum = 0.1;

// Throws if the context has already been used by a backward call.
struct ContextGuard {
  bool recorded = false;
  bool consumed = false;
  void record() {
    recorded = true;
    consumed = false;
  }
  void consume(const char* op);
};

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

int conv_output_extent(int extent, int kernel, ConvGeometry geometry);

template <typename T>
struct Conv2dContext {
  BasicTensor<T> input;
  ConvGeometry geometry;
  ContextGuard guard;
};

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

// input N x C x H x W, weight O x C x K x K, bias O. Cross-correlation.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvGeometry geometry,
                      Conv2dContext<T>* ctx = nullptr);

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& weight,
                               Conv2dContext<T>& ctx);

template <typename T>
struct MaxPoolContext {
  Shape input_shape;
  std::vector<std::size_t> argmax;
  ContextGuard guard;
};

// 2x2 window, stride 2, floor semantics for odd extents.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, MaxPoolContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_output, MaxPoolContext<T>& ctx);

// Cross-worker summation used by synchronized batch norm. Implementations
// must return identical sums to every participant.
class StatReducer {
 public:
  virtual ~StatReducer() = default;
  virtual void allreduce_sum(std::span<double> values) = 0;
};

// Per-channel statistics of one training-mode forward (biased variance).
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  std::size_t count = 0;
};

template <typename T>
struct BatchNormContext {
  BasicTensor<T> normalized;
  std::vector<double> inv_std;
  Mode mode = Mode::kTrain;
  std::size_t count = 0;
  StatReducer* reducer = nullptr;
  ContextGuard guard;
};

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};

// Channel axis 1; works on N x C and N x C x H x W. In training mode the batch
// statistics are written to `stats` when given; running statistics are never
// touched here (see update_running_stats). With a reducer the statistics span
// every participant's batch.
template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                         const BasicTensor<T>& running_var, Mode mode,
                         BatchNormContext<T>* ctx = nullptr, BatchNormStats* stats = nullptr,
                         StatReducer* reducer = nullptr, double eps = kBatchNormEps);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& gamma,
                                     BatchNormContext<T>& ctx);

// running <- (1 - momentum) * running + momentum * batch.
template <typename T>
void update_running_stats(BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                          const BatchNormStats& stats, double momentum = kBatchNormMomentum);

// Element-wise mean of several workers' statistics, in the given order.
BatchNormStats average_stats(std::span<const BatchNormStats> shards);

template <typename T>
struct ReluContext {
  std::vector<unsigned char> mask;
  ContextGuard guard;
};

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input, ReluContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_output, ReluContext<T>& ctx);

template <typename T>
struct DenseContext {
  BasicTensor<T> input;
  ContextGuard guard;
};

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

// input N x I, weight I x O, bias O.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias, DenseContext<T>* ctx = nullptr);

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_output, const BasicTensor<T>& weight,
                             DenseContext<T>& ctx);

template <typename T>
struct GlobalAvgPoolContext {
  Shape input_shape;
  ContextGuard guard;
};

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input, GlobalAvgPoolContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_output,
                                        GlobalAvgPoolContext<T>& ctx);

template <typename T>
struct L2NormalizeContext {
  BasicTensor<T> output;
  std::vector<double> norms;
  double eps = kL2NormalizeEps;
  ContextGuard guard;
};

// Rows divided by max(||row||, eps).
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& input, L2NormalizeContext<T>* ctx = nullptr,
                            double eps = kL2NormalizeEps);

template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& grad_output, L2NormalizeContext<T>& ctx);

}  // namespace cytocon::nn
