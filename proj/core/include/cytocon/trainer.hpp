#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cytocon/config.hpp"
#include "cytocon/corpus.hpp"
#include "cytocon/evaluate.hpp"
#include "cytocon/model.hpp"
#include "cytocon/optim.hpp"

namespace cytocon {

enum class Arm { kContrastive, kScratch, kProbe };
enum class BnMode { kLocal, kSync };
enum class Objective { kContrastive, kCrossEntropy };

std::string to_string(Arm arm);
std::string to_string(BnMode mode);

struct TrainConfig {
  ModelConfig model;  // model.classes is taken from the corpus
  int batch_size = 64;
  double temperature = 0.07;
  int workers = 1;
  BnMode bn_mode = BnMode::kLocal;
  int contrastive_epochs = 10;
  int probe_epochs = 5;
  int scratch_epochs = 15;
  int samples_per_class = 160;
  std::uint64_t seed = 7;
  // learning_rate <= 0 means scaled_lr(batch_size).
  OptimizerConfig optimizer{.learning_rate = 0.0};
  bool augment = true;
  bool flip_sharpen_sign = false;

  // scratch epochs = contrastive + probe epochs; N divisible by K.
  void validate() const;
  double learning_rate() const;
  // Stable text of every field; the config hash is computed from it.
  std::string describe() const;
  std::string hash() const;

  static TrainConfig desk();
  static TrainConfig canonical();
  static TrainConfig from_settings(const Settings& settings);
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::string arm;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::optional<MetricBlock> final_metrics;

  // `epoch,loss,lr,seconds`
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  // Hash over arm, config hash, epochs, losses and learning rates (not timings).
  std::string hash() const;
};

// Everything here is excluded from the config hash.
struct TrainControl {
  std::filesystem::path checkpoint_path;  // empty: no training checkpoints
  int checkpoint_every = 0;               // epochs; 0 = only after the last epoch run
  int stop_after_epoch = -1;              // stop early (for resumption tests)
  std::filesystem::path resume_from;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  OptimState optim;
  RunLog log;
};

// Pixels of an entry: augmented crop (training) or centered crop.
Patch training_view(const Corpus& corpus, std::size_t entry, const TrainConfig& config,
                    std::uint64_t sample_seed);
Patch evaluation_view(const Corpus& corpus, std::size_t entry, int input_side);

struct StepResult {
  double loss = 0.0;
  ModelParams grads;
  // Running-statistics update applied for this step (already reduced).
  std::vector<NamedStats> stats;
};

// Splits the batch into K equal shards processed by K lockstep worker threads.
// Contrastive: projections are all-gathered and the loss is taken over the
// global batch; each worker backpropagates its own rows. Gradients are the
// arithmetic mean of the worker gradients, reduced in worker order. In kLocal
// mode each shard normalizes with its own batch statistics and the running
// statistics follow the mean of shard statistics; in kSync mode the shards
// share sufficient statistics before normalizing.
StepResult data_parallel_gradients(const ModelParams& params, const ModelConfig& model,
                                   const Tensor& batch, std::span<const int> labels,
                                   Objective objective, double temperature, int workers,
                                   BnMode bn_mode);

// Gradients, running-statistics update and one optimizer step on the single
// parameter copy.
StepResult data_parallel_step(ModelParams& params, OptimState& optim, const ModelConfig& model,
                              const Tensor& batch, std::span<const int> labels, Objective objective,
                              double temperature, int workers, BnMode bn_mode);

TrainResult pretrain_contrastive(const TrainConfig& config, const Corpus& corpus,
                                 const SplitSpec& split, const TrainControl& control = {});

// Encoder frozen in evaluation mode; only head.* is trained. Returned params
// hold the encoder and head; the projection head is dropped.
TrainResult train_probe(const TrainConfig& config, const Corpus& corpus, const SplitSpec& split,
                        const ModelParams& pretrained, const TrainControl& control = {});

TrainResult train_scratch(const TrainConfig& config, const Corpus& corpus, const SplitSpec& split,
                          const TrainControl& control = {});

// Entries of a named evaluation set: "test" (held-out sections), "unseen"
// (every entry of the holdout brain) or "train".
std::vector<std::size_t> evaluation_entries(const CorpusManifest& manifest, const SplitSpec& split,
                                            const std::string& dataset);

// Evaluation-mode forward over the entries in batches.
Tensor encode_entries(const ModelParams& params, const EncoderConfig& encoder, const Corpus& corpus,
                      std::span<const std::size_t> entries);
Tensor logits_for_entries(const ModelParams& params, const EncoderConfig& encoder,
                          const Corpus& corpus, std::span<const std::size_t> entries);

// Training checkpoint: params, optimizer momentum and step, run log, config hash.
void save_training_checkpoint(const std::filesystem::path& path, const TrainResult& state,
                              int completed_epochs);
struct ResumeState {
  TrainResult state;
  int completed_epochs = 0;
};
// Refuses (CheckpointError) when the stored config hash differs.
ResumeState load_training_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                                     Arm arm);

// The model parameters stored in a training checkpoint.
ModelParams read_model_params(const std::filesystem::path& path);

}  // namespace cytocon
