#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "cytocon/corpus.hpp"
#include "cytocon/error.hpp"

namespace fs = std::filesystem;
using namespace cytocon;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cytocon_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthConfig small_config(int classes, int per_class, int side) {
  SynthConfig c;
  c.classes = classes;
  c.patches_per_class = per_class;
  c.side = side;
  return c;
}

}  // namespace

TEST(Synth, SameSeedGivesIdenticalStores) {
  const auto a = generate_synthetic_corpus(small_config(2, 4, 64));
  const auto b = generate_synthetic_corpus(small_config(2, 4, 64));
  EXPECT_EQ(a.store(), b.store());
  EXPECT_EQ(a.store_hash(), b.store_hash());
  auto other = small_config(2, 4, 64);
  other.seed = 8;
  EXPECT_NE(generate_synthetic_corpus(other).store_hash(), a.store_hash());
}

TEST(Synth, SingleClassCorpus) {
  const auto c = generate_synthetic_corpus(small_config(1, 6, 32));
  EXPECT_EQ(c.manifest().class_count, 1);
  for (const auto& e : c.manifest().entries) EXPECT_EQ(e.label, 0);
}

TEST(Synth, RejectsInvalidDimensions) {
  EXPECT_THROW(generate_synthetic_corpus(small_config(0, 4, 64)), ConfigError);
  EXPECT_THROW(generate_synthetic_corpus(small_config(2, 1, 64)), ConfigError);
  EXPECT_THROW(generate_synthetic_corpus(small_config(2, 4, 31)), ConfigError);
  auto weak = small_config(2, 4, 64);
  weak.separability = 2.0;
  EXPECT_THROW(generate_synthetic_corpus(weak), ConfigError);
}

TEST(Synth, ManifestValidatesAndPixelsInRange) {
  const auto c = generate_synthetic_corpus(small_config(3, 10, 48));
  EXPECT_NO_THROW(c.manifest().validate(c.store().size()));
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NO_THROW(c.patch(i).validate());
  EXPECT_EQ(c.manifest().sections().size(), 10u);
  EXPECT_EQ(c.manifest().brains().size(), 2u);
}

// Oracle: nearest class mean on raw pixels.
TEST(Synth, NearestCentroidSeparatesClasses) {
  const auto c = generate_synthetic_corpus(small_config(5, 100, 64));
  const std::size_t plane = 64 * 64;
  std::vector<std::vector<double>> means(5, std::vector<double>(plane, 0.0));
  std::vector<int> counts(5, 0);
  std::vector<Patch> patches;
  for (std::size_t i = 0; i < c.size(); ++i) {
    patches.push_back(c.patch(i));
    const int y = c.manifest().entries[i].label;
    ++counts[y];
    for (std::size_t p = 0; p < plane; ++p) means[y][p] += patches.back().pixels[p];
  }
  for (int y = 0; y < 5; ++y) {
    for (auto& v : means[y]) v /= counts[y];
  }
  int correct = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    int best = -1;
    double best_d = 0.0;
    for (int y = 0; y < 5; ++y) {
      double d = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        const double diff = patches[i].pixels[p] - means[y][p];
        d += diff * diff;
      }
      if (best < 0 || d < best_d) {
        best = y;
        best_d = d;
      }
    }
    correct += best == c.manifest().entries[i].label;
  }
  EXPECT_GT(static_cast<double>(correct) / c.size(), 0.90);
}

TEST(BalancedSampling, OversamplesSmallClass) {
  Corpus c(CorpusManifest{1, {"a"}, {}, 2.0, 0}, {});
  for (int i = 0; i < 3; ++i) c.append(Patch(8, 2.0, 0.1f * i), 0, 0, i);
  const SplitSpec split{{0, 1, 2}, {}, std::nullopt};
  const auto picks = sample_balanced_epoch(c.manifest(), split, 6, 3);
  ASSERT_EQ(picks.size(), 6u);
  std::map<std::size_t, int> seen;
  for (const auto p : picks) ++seen[p];
  EXPECT_EQ(seen.size(), 3u);
  for (const auto& [entry, n] : seen) EXPECT_EQ(n, 2);  // two full passes
}

TEST(BalancedSampling, ExactPerClassIsPermutation) {
  const auto c = generate_synthetic_corpus(small_config(3, 10, 32));
  SplitSpec split;
  split.train_sections = c.manifest().sections();
  const auto picks = sample_balanced_epoch(c.manifest(), split, 10, 5);
  std::vector<std::size_t> sorted = picks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(BalancedSampling, HistogramIsExact) {
  const auto c = generate_synthetic_corpus(small_config(3, 20, 32));
  SplitSpec split;
  split.train_sections = c.manifest().sections();
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto picks = sample_balanced_epoch(c.manifest(), split, 1200, seed);
    std::vector<int> hist(3, 0);
    for (const auto p : picks) ++hist[c.manifest().entries[p].label];
    EXPECT_EQ(hist, (std::vector<int>{1200, 1200, 1200}));
  }
  EXPECT_EQ(sample_balanced_epoch(c.manifest(), split, 7, 9),
            sample_balanced_epoch(c.manifest(), split, 7, 9));
}

TEST(BalancedSampling, MissingClassIsNamed) {
  Corpus c(CorpusManifest{2, {"hOc1", "hOc2"}, {}, 2.0, 0}, {});
  c.append(Patch(8, 2.0), 0, 0, 0);
  c.append(Patch(8, 2.0), 1, 0, 1);
  const SplitSpec split{{0}, {1}, std::nullopt};
  try {
    sample_balanced_epoch(c.manifest(), split, 2, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("hOc2"), std::string::npos);
  }
}

TEST(Split, EightyPercentOfTenSections) {
  const auto c = generate_synthetic_corpus(small_config(2, 10, 32));
  const auto split = split_by_section(c.manifest(), 0.8, std::nullopt, 1);
  EXPECT_EQ(split.train_sections.size(), 8u);
  EXPECT_EQ(split.test_sections.size(), 2u);
  for (const int s : split.test_sections) EXPECT_FALSE(split.train_sections.contains(s));
}

TEST(Split, SectionsNeverShared) {
  const auto c = generate_synthetic_corpus(small_config(2, 10, 32));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const double f : {0.3, 0.5, 0.8}) {
      const auto split = split_by_section(c.manifest(), f, std::nullopt, seed);
      for (const int s : split.test_sections) EXPECT_FALSE(split.train_sections.contains(s));
      EXPECT_NO_THROW(split.validate(c.manifest()));
    }
  }
}

TEST(Split, HoldoutBrainIsInNeitherSet) {
  const auto c = generate_synthetic_corpus(small_config(2, 10, 32));
  const auto split = split_by_section(c.manifest(), 0.8, 1, 1);
  for (const auto& e : c.manifest().entries) {
    if (e.brain_id == 1) {
      EXPECT_FALSE(split.train_sections.contains(e.section_id));
      EXPECT_FALSE(split.test_sections.contains(e.section_id));
    }
  }
  EXPECT_EQ(split.train_sections.size() + split.test_sections.size(), 5u);
}

TEST(Split, RejectsDegenerateFractions) {
  const auto c = generate_synthetic_corpus(small_config(2, 10, 32));
  EXPECT_THROW(split_by_section(c.manifest(), 0.0, std::nullopt, 1), ConfigError);
  EXPECT_THROW(split_by_section(c.manifest(), 1.0, std::nullopt, 1), ConfigError);
  EXPECT_THROW(split_by_section(c.manifest(), 0.01, std::nullopt, 1), ConfigError);
  EXPECT_THROW(split_by_section(c.manifest(), 0.99, std::nullopt, 1), ConfigError);
  EXPECT_THROW(split_by_section(c.manifest(), 0.8, 5, 1), ConfigError);
}

TEST(Split, ClassOnlyInTestSectionsFailsSampling) {
  Corpus c(CorpusManifest{2, {"a", "b"}, {}, 2.0, 0}, {});
  c.append(Patch(8, 2.0), 0, 0, 0);
  c.append(Patch(8, 2.0), 0, 0, 1);
  c.append(Patch(8, 2.0), 1, 0, 2);
  const SplitSpec split{{0, 1}, {2}, std::nullopt};
  EXPECT_THROW(sample_balanced_epoch(c.manifest(), split, 4, 0), ConfigError);
}

TEST(CorpusIo, RoundTripIsByteIdentical) {
  const auto dir = scratch_dir("roundtrip");
  const auto c = generate_synthetic_corpus(small_config(2, 10, 32));
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  EXPECT_EQ(back.manifest(), c.manifest());
  EXPECT_EQ(back.store(), c.store());
  const auto split = split_by_section(c.manifest(), 0.8, 1, 2);
  save_split(split, dir / "split.txt");
  EXPECT_EQ(load_split(dir / "split.txt"), split);
}

TEST(CorpusIo, TruncatedStoreNamesFirstBadEntry) {
  const auto dir = scratch_dir("truncated");
  const auto c = generate_synthetic_corpus(small_config(2, 4, 32));
  save_corpus(c, dir);
  fs::resize_file(dir / kStoreFile, c.store().size() - 100);
  try {
    load_corpus(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("entry 7"), std::string::npos) << e.what();
  }
}

TEST(CorpusIo, EmptyCorpusKeepsClassCount) {
  const auto dir = scratch_dir("empty");
  const Corpus c(CorpusManifest{4, {"a", "b", "c", "d"}, {}, 2.0, 0}, {});
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.manifest().class_count, 4);
}

TEST(CorpusIo, MalformedManifestIsFormatError) {
  const auto dir = scratch_dir("malformed");
  const auto c = generate_synthetic_corpus(small_config(2, 4, 32));
  save_corpus(c, dir);
  std::ofstream(dir / kManifestFile) << "{ not json";
  EXPECT_THROW(load_corpus(dir), FormatError);
}

TEST(Patch, RejectsOutOfRangeIntensity) {
  Patch p(8, 2.0, 0.5f);
  p.at(3, 4) = 1.5f;
  EXPECT_THROW(p.validate(), FormatError);
  EXPECT_THROW(Patch(4, 2.0).validate(), FormatError);
}
