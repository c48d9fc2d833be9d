#include "cytocon/trainer.hpp"

#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "cytocon/augment.hpp"
#include "cytocon/checkpoint.hpp"
#include "cytocon/error.hpp"
#include "cytocon/objective.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace {

constexpr std::uint64_t kInitTag = 0x1d17;
constexpr std::uint64_t kHeadTag = 0x4ead;
constexpr std::uint64_t kEpochTag = 0xe90c;
constexpr std::uint64_t kAugmentTag = 0xa06;
constexpr int kEvalBatch = 64;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Shared-memory collective for K lockstep worker threads. Every rank sums the
// contributions itself in rank order, so all ranks see identical results.
class Communicator {
 public:
  explicit Communicator(int workers) : barrier_(workers), slots_(workers) {}

  void allreduce_sum(int rank, std::span<double> values) {
    slots_[rank].assign(values.begin(), values.end());
    barrier_.arrive_and_wait();
    for (std::size_t i = 0; i < values.size(); ++i) {
      double sum = 0.0;
      for (const auto& slot : slots_) sum += slot[i];
      values[i] = sum;
    }
    barrier_.arrive_and_wait();
  }

  // A failing worker leaves so the others do not wait forever.
  void drop() { barrier_.arrive_and_drop(); }

 private:
  std::barrier<> barrier_;
  std::vector<std::vector<double>> slots_;
};

class WorkerReducer final : public nn::StatReducer {
 public:
  WorkerReducer(Communicator& comm, int rank) : comm_(&comm), rank_(rank) {}
  void allreduce_sum(std::span<double> values) override { comm_->allreduce_sum(rank_, values); }

 private:
  Communicator* comm_;
  int rank_;
};

template <typename Fn>
void run_workers(int workers, Communicator& comm, Fn&& fn) {
  if (workers == 1) {
    fn(0);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (int k = 0; k < workers; ++k) {
      threads.emplace_back([&, k] {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
          comm.drop();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = count;
  Tensor out(shape);
  std::copy(t.data() + begin * row, t.data() + (begin + count) * row, out.data());
  return out;
}

// Zero gradients for the trainable tensors the objective reaches.
ModelParams zero_grads(const ModelParams& params, const std::string& skip_prefix) {
  ModelParams out;
  for (const auto& e : params.entries()) {
    if (e.trainable && e.name.rfind(skip_prefix, 0) != 0) out.add(e.name, Tensor(e.value.shape()));
  }
  return out;
}

struct WorkerState {
  EncoderTape<float> encoder;
  ProjectionTape<float> projection;
  nn::DenseContext<float> head;
  std::vector<NamedStats> stats;
  Tensor z;
  Tensor grad_logits;
  double loss = 0.0;
  ModelParams grads;
};

int steps_per_epoch(const TrainConfig& config, int classes) {
  const long samples = static_cast<long>(config.samples_per_class) * classes;
  const long steps = samples / config.batch_size;
  if (steps < 1) {
    throw ConfigError("samples-per-class x classes = " + std::to_string(samples) +
                      " is smaller than batch-size " + std::to_string(config.batch_size));
  }
  return static_cast<int>(steps);
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch training_batch(const Corpus& corpus, std::span<const std::size_t> entries,
                     const TrainConfig& config, int epoch, std::size_t first_position) {
  std::vector<std::vector<float>> images;
  Batch batch;
  images.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::uint64_t sample_seed =
        derive_seed(config.seed, {kAugmentTag, static_cast<std::uint64_t>(epoch), first_position + i});
    images.push_back(training_view(corpus, entries[i], config, sample_seed).pixels);
    batch.labels.push_back(corpus.manifest().entries[entries[i]].label);
  }
  batch.images = make_batch(images, config.model.encoder.input_side);
  return batch;
}

using StepFn = std::function<double(ModelParams&, OptimState&, const Batch&)>;

TrainResult run_epochs(const TrainConfig& config, const Corpus& corpus, const SplitSpec& split,
                       const TrainControl& control, Arm arm, int epochs, TrainResult start,
                       const StepFn& step) {
  config.validate();
  split.validate(corpus.manifest());
  int first_epoch = 0;
  TrainResult result = std::move(start);
  if (!control.resume_from.empty()) {
    auto resumed = load_training_checkpoint(control.resume_from, config, arm);
    result = std::move(resumed.state);
    first_epoch = resumed.completed_epochs;
  }
  const int classes = corpus.manifest().class_count;
  const int steps = epochs > 0 ? steps_per_epoch(config, classes) : 0;
  const std::size_t n = static_cast<std::size_t>(config.batch_size);

  for (int epoch = first_epoch; epoch < epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = sample_balanced_epoch(
        corpus.manifest(), split, config.samples_per_class,
        derive_seed(config.seed, {kEpochTag, static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    for (int s = 0; s < steps; ++s) {
      const std::span<const std::size_t> entries(order.data() + s * n, n);
      const Batch batch = training_batch(corpus, entries, config, epoch, s * n);
      const double loss = step(result.params, result.optim, batch);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                            std::to_string(s + 1) + " (global step " +
                            std::to_string(static_cast<long>(epoch) * steps + s + 1) + ")");
      }
      loss_sum += loss;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const EpochRecord record{epoch + 1, loss_sum / steps, result.optim.config.learning_rate, seconds};
    result.log.epochs.push_back(record);
    if (control.on_epoch) control.on_epoch(record);

    const bool last = epoch + 1 == epochs || epoch + 1 == control.stop_after_epoch;
    const bool periodic = control.checkpoint_every > 0 && (epoch + 1) % control.checkpoint_every == 0;
    if (!control.checkpoint_path.empty() && (last || periodic)) {
      save_training_checkpoint(control.checkpoint_path, result, epoch + 1);
    }
    if (epoch + 1 == control.stop_after_epoch) break;
  }
  return result;
}

OptimState fresh_optimizer(const TrainConfig& config, const ModelParams& trainable) {
  OptimState state;
  state.config = config.optimizer;
  state.config.learning_rate = config.learning_rate();
  state.momentum = trainable.zeros_like_trainable();
  return state;
}

}  // namespace

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::kContrastive: return "contrastive";
    case Arm::kScratch: return "scratch";
    case Arm::kProbe: return "probe";
  }
  return "?";
}

std::string to_string(BnMode mode) { return mode == BnMode::kSync ? "sync" : "local"; }

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch-size must be >= 2");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (batch_size % workers != 0) {
    throw ConfigError("batch-size " + std::to_string(batch_size) + " is not divisible by workers " +
                      std::to_string(workers));
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (contrastive_epochs < 0 || probe_epochs < 0 || scratch_epochs < 0) {
    throw ConfigError("epoch counts must be >= 0");
  }
  if (scratch_epochs != contrastive_epochs + probe_epochs) {
    throw ConfigError("scratch-epochs " + std::to_string(scratch_epochs) +
                      " must equal contrastive-epochs + probe-epochs = " +
                      std::to_string(contrastive_epochs + probe_epochs));
  }
  if (samples_per_class < 1) throw ConfigError("samples-per-class must be >= 1");
  if (optimizer.learning_rate < 0.0) throw ConfigError("learning-rate must be positive");
  model.encoder.validate();
  try {
    encoder_spatial_trace(model.encoder, model.encoder.input_side);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("input-side: ") + e.what());
  }
}

double TrainConfig::learning_rate() const {
  return optimizer.learning_rate > 0.0 ? optimizer.learning_rate : scaled_lr(batch_size);
}

std::string TrainConfig::describe() const {
  std::ostringstream out;
  const auto& e = model.encoder;
  out << "filters=";
  for (std::size_t i = 0; i < e.filters.size(); ++i) out << (i ? "," : "") << e.filters[i];
  out << "\nstem=" << e.stem_kernel << "/" << e.stem_stride << "/" << e.stem_padding
      << "\nkernel=" << e.kernel << "/" << e.padding << "\ninput_channels=" << e.input_channels
      << "\ninput_side=" << e.input_side << "\nprojection=" << model.projection.hidden_dim << "/"
      << model.projection.output_dim << "\nclasses=" << model.classes
      << "\nbatch_size=" << batch_size << "\ntemperature=" << format_double(temperature)
      << "\nworkers=" << workers << "\nbn_mode=" << to_string(bn_mode)
      << "\nepochs=" << contrastive_epochs << "/" << probe_epochs << "/" << scratch_epochs
      << "\nsamples_per_class=" << samples_per_class << "\nseed=" << seed
      << "\noptimizer=" << (optimizer.kind == OptimizerKind::kLars ? "lars" : "sgd")
      << "\nlearning_rate=" << format_double(learning_rate())
      << "\nmomentum=" << format_double(optimizer.momentum)
      << "\nweight_decay=" << format_double(optimizer.weight_decay)
      << "\ntrust_eps=" << format_double(optimizer.trust_eps)
      << "\nunit_trust=" << optimizer.unit_trust << "\nexempt=";
  for (const auto& p : optimizer.exempt_patterns) out << p << ";";
  out << "\naugment=" << augment << "\nflip_sharpen_sign=" << flip_sharpen_sign << "\n";
  return out.str();
}

std::string TrainConfig::hash() const { return fnv1a_hex(describe()); }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.model.encoder.input_side = 64;
  c.model.encoder.stem_stride = 2;
  return c;
}

TrainConfig TrainConfig::canonical() {
  TrainConfig c;
  c.model.encoder.input_side = 1129;
  c.model.encoder.stem_stride = 4;
  c.batch_size = 4096;
  c.workers = 32;
  c.contrastive_epochs = 150;
  c.probe_epochs = 30;
  c.scratch_epochs = 180;
  return c;
}

TrainConfig TrainConfig::from_settings(const Settings& s) {
  TrainConfig c = TrainConfig::desk();
  c.model.encoder.input_side = s.get_int("input-side");
  c.model.encoder.stem_stride = s.get_int("stem-stride");
  c.batch_size = s.get_int("batch-size");
  c.temperature = s.get_double("temperature");
  c.workers = s.get_int("workers");
  const auto& bn = s.get("bn-mode");
  if (bn == "local") {
    c.bn_mode = BnMode::kLocal;
  } else if (bn == "sync") {
    c.bn_mode = BnMode::kSync;
  } else {
    throw ConfigError("bn-mode: expected local or sync, got '" + bn + "'");
  }
  c.contrastive_epochs = s.get_int("contrastive-epochs");
  c.probe_epochs = s.get_int("probe-epochs");
  c.scratch_epochs = s.get("scratch-epochs") == "auto" ? c.contrastive_epochs + c.probe_epochs
                                                       : s.get_int("scratch-epochs");
  c.samples_per_class = s.get_int("samples-per-class");
  c.seed = s.get_u64("seed");
  const auto& opt = s.get("optimizer");
  if (opt == "lars") {
    c.optimizer.kind = OptimizerKind::kLars;
  } else if (opt == "sgd") {
    c.optimizer.kind = OptimizerKind::kSgd;
  } else {
    throw ConfigError("optimizer: expected lars or sgd, got '" + opt + "'");
  }
  c.optimizer.learning_rate = s.get("learning-rate") == "auto" ? 0.0 : s.get_double("learning-rate");
  if (s.get("learning-rate") != "auto" && !(c.optimizer.learning_rate > 0.0)) {
    throw ConfigError("learning-rate must be positive");
  }
  c.optimizer.momentum = s.get_double("momentum");
  c.optimizer.weight_decay = s.get_double("weight-decay");
  c.augment = s.get_bool("augment");
  c.flip_sharpen_sign = s.get_bool("flip-sharpen-sign");
  c.validate();
  return c;
}

std::string RunLog::csv() const {
  std::string out = "epoch,loss,lr,seconds\n";
  char buf[128];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.8f,%.8g,%.3f\n", e.epoch, e.loss, e.lr, e.seconds);
    out += buf;
  }
  return out;
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << csv();
}

std::string RunLog::hash() const {
  std::string text = arm + "\n" + config_hash + "\n";
  for (const auto& e : epochs) {
    text += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.lr) + "\n";
  }
  return fnv1a_hex(text);
}

Patch training_view(const Corpus& corpus, std::size_t entry, const TrainConfig& config,
                    std::uint64_t sample_seed) {
  const Patch source = corpus.patch(entry);
  const int side = config.model.encoder.input_side;
  if (!config.augment) return center_crop(source, side);
  return apply_pipeline(source, draw_params(sample_seed),
                        PipelineOptions{side, config.flip_sharpen_sign});
}

Patch evaluation_view(const Corpus& corpus, std::size_t entry, int input_side) {
  return center_crop(corpus.patch(entry), input_side);
}

StepResult data_parallel_gradients(const ModelParams& params, const ModelConfig& model,
                                   const Tensor& batch, std::span<const int> labels,
                                   Objective objective, double temperature, int workers,
                                   BnMode bn_mode) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const std::size_t n_total = batch.dim(0);
  if (labels.size() != n_total) throw ShapeError("data_parallel: label count does not match batch");
  if (n_total % static_cast<std::size_t>(workers) != 0) {
    throw ConfigError("batch of " + std::to_string(n_total) + " is not divisible by " +
                      std::to_string(workers) + " workers");
  }
  const std::size_t shard = n_total / workers;
  const bool contrastive = objective == Objective::kContrastive;
  const bool shared_stats = bn_mode == BnMode::kSync && workers > 1;

  Communicator comm(workers);
  std::vector<WorkerReducer> reducers;
  reducers.reserve(workers);
  for (int k = 0; k < workers; ++k) reducers.emplace_back(comm, k);
  std::vector<WorkerState> state(workers);

  run_workers(workers, comm, [&](int k) {
    auto& w = state[k];
    const ForwardOptions options{nn::Mode::kTrain, shared_stats ? &reducers[k] : nullptr};
    const Tensor images = slice_rows(batch, k * shard, shard);
    const Tensor h = encoder_forward(params, model.encoder, images, options, &w.encoder, &w.stats);
    if (contrastive) {
      w.z = projection_forward(params, h, options, &w.projection, &w.stats);
    } else {
      const Tensor logits = linear_head_forward(params, h, &w.head);
      auto ce = softmax_cross_entropy(logits, labels.subspan(k * shard, shard));
      w.loss = ce.value;
      w.grad_logits = std::move(ce.grad);
    }
  });

  StepResult result;
  Tensor grad_z;
  if (contrastive) {
    const std::size_t dim = state[0].z.dim(1);
    Tensor z({n_total, dim});
    for (int k = 0; k < workers; ++k) {
      std::copy(state[k].z.data(), state[k].z.data() + shard * dim, z.data() + k * shard * dim);
    }
    auto loss = supervised_contrastive_loss(z, labels, temperature);
    result.loss = loss.value;
    grad_z = std::move(loss.grad);
  } else {
    for (const auto& w : state) result.loss += w.loss;
    result.loss /= workers;
  }

  run_workers(workers, comm, [&](int k) {
    auto& w = state[k];
    w.grads = zero_grads(params, contrastive ? "head." : "projection.");
    Tensor grad_h;
    if (contrastive) {
      // Worker gradients are averaged, so each carries K times its share.
      Tensor rows = slice_rows(grad_z, k * shard, shard);
      for (auto& v : rows.storage()) v *= static_cast<float>(workers);
      grad_h = projection_backward(params, rows, w.projection, w.grads);
    } else {
      grad_h = linear_head_backward(params, w.grad_logits, w.head, w.grads);
    }
    encoder_backward(params, model.encoder, grad_h, w.encoder, w.grads);
  });

  result.grads = zero_grads(params, contrastive ? "head." : "projection.");
  for (auto& entry : result.grads.entries()) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      double sum = 0.0;
      for (int k = 0; k < workers; ++k) sum += state[k].grads[entry.name][i];
      entry.value[i] = static_cast<float>(sum / workers);
    }
  }

  if (workers == 1 || shared_stats) {
    result.stats = std::move(state[0].stats);
  } else {
    for (std::size_t j = 0; j < state[0].stats.size(); ++j) {
      std::vector<nn::BatchNormStats> shards;
      for (int k = 0; k < workers; ++k) shards.push_back(state[k].stats[j].stats);
      result.stats.push_back(NamedStats{state[0].stats[j].prefix, nn::average_stats(shards)});
    }
  }
  return result;
}

StepResult data_parallel_step(ModelParams& params, OptimState& optim, const ModelConfig& model,
                              const Tensor& batch, std::span<const int> labels, Objective objective,
                              double temperature, int workers, BnMode bn_mode) {
  auto result =
      data_parallel_gradients(params, model, batch, labels, objective, temperature, workers, bn_mode);
  apply_running_stats(params, result.stats);
  optimizer_step(params, result.grads, optim);
  return result;
}

TrainResult pretrain_contrastive(const TrainConfig& config, const Corpus& corpus,
                                 const SplitSpec& split, const TrainControl& control) {
  ModelConfig model = config.model;
  model.classes = 0;
  TrainResult start;
  start.params = init_params<float>(model, derive_seed(config.seed, {kInitTag}));
  start.optim = fresh_optimizer(config, start.params);
  start.log.arm = to_string(Arm::kContrastive);
  start.log.config_hash = config.hash();
  return run_epochs(config, corpus, split, control, Arm::kContrastive, config.contrastive_epochs,
                    std::move(start), [&](ModelParams& params, OptimState& optim, const Batch& b) {
                      return data_parallel_step(params, optim, model, b.images, b.labels,
                                                Objective::kContrastive, config.temperature,
                                                config.workers, config.bn_mode)
                          .loss;
                    });
}

TrainResult train_probe(const TrainConfig& config, const Corpus& corpus, const SplitSpec& split,
                        const ModelParams& pretrained, const TrainControl& control) {
  const int classes = corpus.manifest().class_count;
  TrainResult start;
  for (const auto& e : pretrained.entries()) {
    if (e.name.rfind("encoder.", 0) == 0) start.params.add(e.name, e.value, e.trainable);
  }
  // Shape check against the configured encoder.
  const auto expected = init_params<float>(ModelConfig{config.model.encoder, {}, 0}, 0).subset("encoder.");
  for (const auto& e : expected.entries()) {
    if (!start.params.contains(e.name) || start.params[e.name].shape() != e.value.shape()) {
      throw ConfigError("pretrained parameters do not match the encoder config at " + e.name);
    }
  }
  init_linear_head(start.params, config.model.encoder.feature_dim(), classes,
                   derive_seed(config.seed, {kHeadTag}));
  start.optim = fresh_optimizer(config, start.params.subset("head."));
  start.log.arm = to_string(Arm::kProbe);
  start.log.config_hash = config.hash();
  const EncoderConfig encoder = config.model.encoder;
  return run_epochs(config, corpus, split, control, Arm::kProbe, config.probe_epochs,
                    std::move(start), [&](ModelParams& params, OptimState& optim, const Batch& b) {
                      const Tensor h =
                          encoder_forward(params, encoder, b.images, ForwardOptions{nn::Mode::kEval});
                      nn::DenseContext<float> ctx;
                      const Tensor logits = linear_head_forward(params, h, &ctx);
                      auto ce = softmax_cross_entropy(logits, b.labels);
                      ModelParams grads = params.subset("head.").zeros_like_trainable();
                      linear_head_backward(params, ce.grad, ctx, grads);
                      optimizer_step(params, grads, optim);
                      return ce.value;
                    });
}

TrainResult train_scratch(const TrainConfig& config, const Corpus& corpus, const SplitSpec& split,
                          const TrainControl& control) {
  ModelConfig model = config.model;
  model.classes = corpus.manifest().class_count;
  TrainResult start;
  ModelParams full = init_params<float>(model, derive_seed(config.seed, {kInitTag}));
  for (const auto& e : full.entries()) {
    if (e.name.rfind("projection.", 0) != 0) start.params.add(e.name, e.value, e.trainable);
  }
  start.optim = fresh_optimizer(config, start.params);
  start.log.arm = to_string(Arm::kScratch);
  start.log.config_hash = config.hash();
  return run_epochs(config, corpus, split, control, Arm::kScratch, config.scratch_epochs,
                    std::move(start), [&](ModelParams& params, OptimState& optim, const Batch& b) {
                      return data_parallel_step(params, optim, model, b.images, b.labels,
                                                Objective::kCrossEntropy, config.temperature,
                                                config.workers, config.bn_mode)
                          .loss;
                    });
}

std::vector<std::size_t> evaluation_entries(const CorpusManifest& manifest, const SplitSpec& split,
                                            const std::string& dataset) {
  std::vector<std::size_t> out;
  if (dataset == "test") {
    out = entries_in_sections(manifest, split.test_sections);
  } else if (dataset == "train") {
    out = entries_in_sections(manifest, split.train_sections);
  } else if (dataset == "unseen") {
    if (!split.holdout_brain) throw ConfigError("dataset unseen: the split has no holdout brain");
    out = entries_of_brain(manifest, *split.holdout_brain);
  } else {
    throw ConfigError("dataset: expected test, unseen or train, got '" + dataset + "'");
  }
  if (out.empty()) throw ConfigError("dataset " + dataset + " is empty");
  return out;
}

Tensor encode_entries(const ModelParams& params, const EncoderConfig& encoder, const Corpus& corpus,
                      std::span<const std::size_t> entries) {
  const std::size_t dim = static_cast<std::size_t>(encoder.feature_dim());
  Tensor out({entries.size(), dim});
  for (std::size_t begin = 0; begin < entries.size(); begin += kEvalBatch) {
    const std::size_t count = std::min<std::size_t>(kEvalBatch, entries.size() - begin);
    std::vector<std::vector<float>> images;
    for (std::size_t i = 0; i < count; ++i) {
      images.push_back(evaluation_view(corpus, entries[begin + i], encoder.input_side).pixels);
    }
    const Tensor h = encoder_forward(params, encoder, make_batch(images, encoder.input_side),
                                     ForwardOptions{nn::Mode::kEval});
    std::copy(h.data(), h.data() + h.size(), out.data() + begin * dim);
  }
  return out;
}

Tensor logits_for_entries(const ModelParams& params, const EncoderConfig& encoder,
                          const Corpus& corpus, std::span<const std::size_t> entries) {
  if (!params.contains("head.weight")) throw ConfigError("parameters have no linear head");
  return linear_head_forward(params, encode_entries(params, encoder, corpus, entries));
}

void save_training_checkpoint(const std::filesystem::path& path, const TrainResult& state,
                              int completed_epochs) {
  Checkpoint ck;
  ck.metadata["kind"] = "training";
  ck.metadata["arm"] = state.log.arm;
  ck.metadata["config_hash"] = state.log.config_hash;
  ck.metadata["completed_epochs"] = std::to_string(completed_epochs);
  ck.metadata["optimizer_step"] = std::to_string(state.optim.step);
  ck.metadata["learning_rate"] = format_double(state.optim.config.learning_rate);
  for (std::size_t i = 0; i < state.log.epochs.size(); ++i) {
    const auto& e = state.log.epochs[i];
    char key[32];
    std::snprintf(key, sizeof key, "log.%04zu", i);
    ck.metadata[key] = std::to_string(e.epoch) + "," + format_double(e.loss) + "," +
                       format_double(e.lr) + "," + format_double(e.seconds);
  }
  for (const auto& e : state.params.entries()) ck.tensors.add("param/" + e.name, e.value, e.trainable);
  for (const auto& e : state.optim.momentum.entries()) {
    ck.tensors.add("momentum/" + e.name, e.value, true);
  }
  write_checkpoint(ck, path);
}

ResumeState load_training_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                                     Arm arm) {
  const Checkpoint ck = read_checkpoint(path);
  if (!ck.metadata.contains("kind") || ck.meta("kind") != "training") {
    throw CheckpointError(path.string() + " is not a training checkpoint");
  }
  if (ck.meta("arm") != to_string(arm)) {
    throw CheckpointError("checkpoint arm " + ck.meta("arm") + " cannot resume " + to_string(arm));
  }
  if (ck.meta("config_hash") != config.hash()) {
    throw CheckpointError("config hash mismatch: checkpoint " + ck.meta("config_hash") +
                          ", current config " + config.hash());
  }
  ResumeState out;
  auto& st = out.state;
  for (const auto& e : ck.tensors.entries()) {
    if (e.name.rfind("param/", 0) == 0) {
      st.params.add(e.name.substr(6), e.value, e.trainable);
    } else if (e.name.rfind("momentum/", 0) == 0) {
      st.optim.momentum.add(e.name.substr(9), e.value, true);
    }
  }
  st.optim.config = config.optimizer;
  st.optim.config.learning_rate = config.learning_rate();
  st.optim.step = std::stoull(ck.meta("optimizer_step"));
  st.log.arm = ck.meta("arm");
  st.log.config_hash = ck.meta("config_hash");
  for (const auto& [key, value] : ck.metadata) {
    if (key.rfind("log.", 0) != 0) continue;
    EpochRecord r;
    std::istringstream in(value);
    std::string field;
    std::getline(in, field, ',');
    r.epoch = std::stoi(field);
    std::getline(in, field, ',');
    r.loss = std::stod(field);
    std::getline(in, field, ',');
    r.lr = std::stod(field);
    std::getline(in, field, ',');
    r.seconds = std::stod(field);
    st.log.epochs.push_back(r);
  }
  out.completed_epochs = std::stoi(ck.meta("completed_epochs"));
  return out;
}

ModelParams read_model_params(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  ModelParams params;
  for (const auto& e : ck.tensors.entries()) {
    if (e.name.rfind("param/", 0) == 0) params.add(e.name.substr(6), e.value, e.trainable);
  }
  if (params.size() == 0) throw CheckpointError(path.string() + " holds no model parameters");
  return params;
}

}  // namespace cytocon
