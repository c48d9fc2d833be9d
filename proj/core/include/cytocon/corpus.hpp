#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cytocon {

inline constexpr double kCanonicalResolutionUm = 2.0;

// Square single-channel image, intensities in [0,1], row-major with top-left
// origin.
struct Patch {
  int side = 0;
  double resolution_um = kCanonicalResolutionUm;
  std::vector<float> pixels;

  Patch() = default;
  Patch(int side_px, double resolution, float fill = 0.0f);
  Patch(int side_px, double resolution, std::vector<float> values);

  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * side + col]; }
  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * side + col]; }
  double mean() const;

  // Throws FormatError when the patch is not square, too small, or has an
  // intensity outside [0,1].
  void validate() const;

  friend bool operator==(const Patch&, const Patch&) = default;
};

struct LabeledPatch {
  Patch patch;
  int label = 0;
  int brain_id = 0;
  int section_id = 0;
};

struct ManifestEntry {
  std::uint64_t offset = 0;
  int label = 0;
  int brain_id = 0;
  int section_id = 0;
  int side = 0;

  std::uint64_t byte_size() const { return static_cast<std::uint64_t>(side) * side; }
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CorpusManifest {
  int class_count = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;
  double resolution_um = kCanonicalResolutionUm;
  std::uint64_t generator_seed = 0;

  // Throws FormatError naming the first offending entry.
  void validate(std::uint64_t store_size) const;
  std::set<int> sections() const;
  std::set<int> brains() const;
  int brain_of_section(int section_id) const;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

// Manifest plus the packed u8 patch store it indexes.
class Corpus {
 public:
  Corpus() = default;
  Corpus(CorpusManifest manifest, std::vector<std::uint8_t> store);

  const CorpusManifest& manifest() const { return manifest_; }
  const std::vector<std::uint8_t>& store() const { return store_; }
  std::size_t size() const { return manifest_.entries.size(); }

  // Dequantized (value / 255) patch for entry `index`.
  Patch patch(std::size_t index) const;
  LabeledPatch labeled(std::size_t index) const;

  // Appends a patch (quantized to u8) and its provenance. Entries must be added
  // in (section_id, offset) order.
  void append(const Patch& patch, int label, int brain_id, int section_id);

  std::uint64_t store_hash() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;

 private:
  CorpusManifest manifest_;
  std::vector<std::uint8_t> store_;
};

struct SynthConfig {
  int classes = 5;
  int patches_per_class = 100;
  int side = 96;
  int brains = 2;
  int sections_per_brain = 5;
  std::uint64_t seed = 7;
  double resolution_um = 2.0;
  // Ratio of inter-class parameter spacing to intra-class jitter amplitude.
  double separability = 4.0;
  // Maximum per-brain global gain/offset perturbation.
  double brain_gain_jitter = 0.02;
  double brain_offset_jitter = 0.01;
};

// Renders class-specific cell textures. Deterministic in (config, seed).
Corpus generate_synthetic_corpus(const SynthConfig& config);

struct SplitSpec {
  std::set<int> train_sections;
  std::set<int> test_sections;
  std::optional<int> holdout_brain;

  // Throws ConfigError on overlapping sets or a holdout section in training.
  void validate(const CorpusManifest& manifest) const;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

SplitSpec split_by_section(const CorpusManifest& manifest, double train_fraction,
                           std::optional<int> holdout_brain = std::nullopt,
                           std::uint64_t seed = 0);

// Entry indices belonging to the given section set, in manifest order.
std::vector<std::size_t> entries_in_sections(const CorpusManifest& manifest,
                                             const std::set<int>& sections);
// Every entry of `brain`.
std::vector<std::size_t> entries_of_brain(const CorpusManifest& manifest, int brain);

// Exactly per_class entry indices per class from the training sections,
// oversampling (with replacement beyond full passes) small classes; output is
// shuffled. Throws ConfigError naming a class with no training patches.
std::vector<std::size_t> sample_balanced_epoch(const CorpusManifest& manifest,
                                               const SplitSpec& split, int per_class,
                                               std::uint64_t seed);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kStoreFile = "patches.bin";

}  // namespace cytocon
