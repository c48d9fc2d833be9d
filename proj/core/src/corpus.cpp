#include "cytocon/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cytocon/error.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace fs = std::filesystem;

Patch::Patch(int side_px, double resolution, float fill)
    : side(side_px),
      resolution_um(resolution),
      pixels(static_cast<std::size_t>(side_px) * side_px, fill) {}

Patch::Patch(int side_px, double resolution, std::vector<float> values)
    : side(side_px), resolution_um(resolution), pixels(std::move(values)) {
  if (pixels.size() != static_cast<std::size_t>(side) * side) {
    throw FormatError("patch of side " + std::to_string(side) + " needs " +
                      std::to_string(side * side) + " pixels, got " +
                      std::to_string(pixels.size()));
  }
}

double Patch::mean() const {
  double sum = 0.0;
  for (const float v : pixels) sum += v;
  return pixels.empty() ? 0.0 : sum / static_cast<double>(pixels.size());
}

void Patch::validate() const {
  if (side < 8) throw FormatError("patch side " + std::to_string(side) + " is below 8");
  if (pixels.size() != static_cast<std::size_t>(side) * side) {
    throw FormatError("patch is not square: side " + std::to_string(side) + ", " +
                      std::to_string(pixels.size()) + " pixels");
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(pixels[i] >= 0.0f && pixels[i] <= 1.0f)) {
      throw FormatError("pixel " + std::to_string(i) + " intensity " + std::to_string(pixels[i]) +
                        " outside [0,1]");
    }
  }
}

void CorpusManifest::validate(std::uint64_t store_size) const {
  if (class_count < 1) throw FormatError("manifest class_count must be >= 1");
  if (class_names.size() != static_cast<std::size_t>(class_count)) {
    throw FormatError("manifest lists " + std::to_string(class_names.size()) +
                      " class names for class_count " + std::to_string(class_count));
  }
  if (!(resolution_um > 0.0)) throw FormatError("manifest resolution_um must be positive");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string where = "manifest entry " + std::to_string(i) + ": ";
    if (e.label < 0 || e.label >= class_count) {
      throw FormatError(where + "label " + std::to_string(e.label) + " outside [0, " +
                        std::to_string(class_count) + ")");
    }
    if (e.side < 8) throw FormatError(where + "patch side " + std::to_string(e.side) + " below 8");
    if (e.offset + e.byte_size() > store_size) {
      throw FormatError(where + "bytes [" + std::to_string(e.offset) + ", " +
                        std::to_string(e.offset + e.byte_size()) + ") exceed store size " +
                        std::to_string(store_size));
    }
    if (i > 0) {
      const auto& p = entries[i - 1];
      if (std::pair(p.section_id, p.offset) >= std::pair(e.section_id, e.offset)) {
        throw FormatError(where + "entries not sorted by (section_id, offset)");
      }
    }
  }
  std::vector<std::size_t> by_offset(entries.size());
  for (std::size_t i = 0; i < by_offset.size(); ++i) by_offset[i] = i;
  std::sort(by_offset.begin(), by_offset.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].offset < entries[b].offset; });
  for (std::size_t k = 1; k < by_offset.size(); ++k) {
    const auto& prev = entries[by_offset[k - 1]];
    if (prev.offset + prev.byte_size() > entries[by_offset[k]].offset) {
      throw FormatError("manifest entry " + std::to_string(by_offset[k]) +
                        ": overlaps entry " + std::to_string(by_offset[k - 1]));
    }
  }
}

std::set<int> CorpusManifest::sections() const {
  std::set<int> out;
  for (const auto& e : entries) out.insert(e.section_id);
  return out;
}

std::set<int> CorpusManifest::brains() const {
  std::set<int> out;
  for (const auto& e : entries) out.insert(e.brain_id);
  return out;
}

int CorpusManifest::brain_of_section(int section_id) const {
  for (const auto& e : entries) {
    if (e.section_id == section_id) return e.brain_id;
  }
  throw ConfigError("unknown section " + std::to_string(section_id));
}

Corpus::Corpus(CorpusManifest manifest, std::vector<std::uint8_t> store)
    : manifest_(std::move(manifest)), store_(std::move(store)) {
  manifest_.validate(store_.size());
}

Patch Corpus::patch(std::size_t index) const {
  const auto& e = manifest_.entries.at(index);
  Patch p(e.side, manifest_.resolution_um);
  const std::uint8_t* src = store_.data() + e.offset;
  for (std::size_t i = 0; i < p.pixels.size(); ++i) p.pixels[i] = static_cast<float>(src[i]) / 255.0f;
  return p;
}

LabeledPatch Corpus::labeled(std::size_t index) const {
  const auto& e = manifest_.entries.at(index);
  return LabeledPatch{patch(index), e.label, e.brain_id, e.section_id};
}

void Corpus::append(const Patch& patch, int label, int brain_id, int section_id) {
  patch.validate();
  if (label < 0 || label >= manifest_.class_count) {
    throw FormatError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(manifest_.class_count) + ")");
  }
  if (!manifest_.entries.empty() && manifest_.entries.back().section_id > section_id) {
    throw FormatError("patches must be appended in section order");
  }
  ManifestEntry e{store_.size(), label, brain_id, section_id, patch.side};
  store_.reserve(store_.size() + patch.pixels.size());
  for (const float v : patch.pixels) {
    store_.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
  }
  manifest_.entries.push_back(e);
}

std::uint64_t Corpus::store_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::uint8_t b : store_) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

struct ClassTexture {
  double density = 0.0;     // cell centers per pixel
  double radius = 0.0;      // blob std-dev in px
  double period = 0.0;      // layering period in px
  double background = 0.0;  // tissue intensity between cells
};

// Class parameters sit on a grid of C levels per attribute; each attribute
// uses its own seeded permutation so classes differ in several cues at once.
std::vector<ClassTexture> class_textures(int classes, std::uint64_t seed) {
  auto level_permutation = [&](std::uint64_t attribute) {
    std::vector<int> perm(classes);
    for (int c = 0; c < classes; ++c) perm[c] = c;
    Rng rng(derive_seed(seed, {0xc1a55, attribute}));
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    return perm;
  };
  const auto pd = level_permutation(0);
  const auto pr = level_permutation(1);
  const auto pp = level_permutation(2);
  std::vector<ClassTexture> out(classes);
  for (int c = 0; c < classes; ++c) {
    auto level = [&](int rank) { return (rank + 0.5) / classes; };
    out[c].density = 0.004 + 0.010 * level(pd[c]);
    out[c].radius = 0.9 + 1.6 * level(pr[c]);
    out[c].period = 6.0 + 20.0 * level(pp[c]);
    out[c].background = 0.92 - 0.30 * level(c);
  }
  return out;
}

Patch render_patch(const ClassTexture& base, const SynthConfig& cfg, double gain, double offset,
                   std::uint64_t seed) {
  Rng rng(seed);
  // Jitter amplitude is spacing / separability on every normalized attribute.
  const double jitter = 1.0 / (cfg.classes * cfg.separability);
  auto jittered = [&](double value, double span) {
    return value + span * rng.uniform(-jitter, jitter);
  };
  const double density = jittered(base.density, 0.010);
  const double radius = jittered(base.radius, 1.6);
  const double period = jittered(base.period, 20.0);
  const double background = jittered(base.background, 0.30);
  const double phase = rng.uniform(-0.15, 0.15);
  constexpr double kModulation = 0.7;
  constexpr double kCellDarkness = 0.55;

  const int side = cfg.side;
  std::vector<double> image(static_cast<std::size_t>(side) * side, background);
  const int reach = static_cast<int>(std::ceil(3.0 * radius));
  const double lo = -reach;
  const double hi = side + reach;
  const double area = (hi - lo) * (hi - lo);
  const auto candidates = static_cast<int>(std::lround(density * (1.0 + kModulation) * area));
  const double inv_two_var = 1.0 / (2.0 * radius * radius);
  for (int n = 0; n < candidates; ++n) {
    const double x = rng.uniform(lo, hi);
    const double y = rng.uniform(lo, hi);
    const double keep =
        (1.0 + kModulation * std::sin(2.0 * std::numbers::pi * (y / period + phase))) /
        (1.0 + kModulation);
    const double amplitude = kCellDarkness * rng.uniform(0.7, 1.0);
    if (rng.uniform() >= keep) continue;
    const int r0 = std::max(0, static_cast<int>(std::floor(y - reach)));
    const int r1 = std::min(side - 1, static_cast<int>(std::ceil(y + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(x - reach)));
    const int c1 = std::min(side - 1, static_cast<int>(std::ceil(x + reach)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dx = c - x;
        const double dy = r - y;
        image[static_cast<std::size_t>(r) * side + c] -=
            amplitude * std::exp(-(dx * dx + dy * dy) * inv_two_var);
      }
    }
  }
  Patch patch(side, cfg.resolution_um);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double noisy = image[i] + rng.uniform(-0.02, 0.02);
    patch.pixels[i] = static_cast<float>(std::clamp(gain * noisy + offset, 0.0, 1.0));
  }
  return patch;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthConfig& cfg) {
  if (cfg.classes < 1) throw ConfigError("synth: classes must be >= 1");
  if (cfg.patches_per_class < 2) throw ConfigError("synth: per-class must be >= 2");
  if (cfg.side < 32) throw ConfigError("synth: side must be >= 32");
  if (cfg.brains < 1 || cfg.sections_per_brain < 1) {
    throw ConfigError("synth: brains and sections-per-brain must be >= 1");
  }
  if (!(cfg.resolution_um > 0.0)) throw ConfigError("synth: resolution must be positive");
  if (cfg.separability < 3.0) {
    throw ConfigError("synth: separability must be >= 3 (inter-class spacing vs jitter)");
  }

  CorpusManifest manifest;
  manifest.class_count = cfg.classes;
  for (int c = 0; c < cfg.classes; ++c) manifest.class_names.push_back("area_" + std::to_string(c));
  manifest.resolution_um = cfg.resolution_um;
  manifest.generator_seed = cfg.seed;
  Corpus corpus(std::move(manifest), {});

  const auto textures = class_textures(cfg.classes, cfg.seed);
  const int total_sections = cfg.brains * cfg.sections_per_brain;
  std::vector<std::pair<double, double>> brain_tone(cfg.brains);
  for (int b = 0; b < cfg.brains; ++b) {
    Rng rng(derive_seed(cfg.seed, {0xb4a1, static_cast<std::uint64_t>(b)}));
    brain_tone[b] = {1.0 + rng.uniform(-cfg.brain_gain_jitter, cfg.brain_gain_jitter),
                     rng.uniform(-cfg.brain_offset_jitter, cfg.brain_offset_jitter)};
  }
  for (int section = 0; section < total_sections; ++section) {
    const int brain = section / cfg.sections_per_brain;
    for (int c = 0; c < cfg.classes; ++c) {
      for (int k = section; k < cfg.patches_per_class; k += total_sections) {
        const auto seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(c),
                                                 static_cast<std::uint64_t>(k)});
        const auto patch =
            render_patch(textures[c], cfg, brain_tone[brain].first, brain_tone[brain].second, seed);
        corpus.append(patch, c, brain, section);
      }
    }
  }
  return corpus;
}

void SplitSpec::validate(const CorpusManifest& manifest) const {
  for (const int s : train_sections) {
    if (test_sections.contains(s)) {
      throw ConfigError("section " + std::to_string(s) + " is in both train and test");
    }
  }
  if (holdout_brain) {
    for (const auto& e : manifest.entries) {
      if (e.brain_id == *holdout_brain &&
          (train_sections.contains(e.section_id) || test_sections.contains(e.section_id))) {
        throw ConfigError("holdout brain " + std::to_string(*holdout_brain) + " section " +
                          std::to_string(e.section_id) + " appears in train/test");
      }
    }
  }
}

SplitSpec split_by_section(const CorpusManifest& manifest, double train_fraction,
                           std::optional<int> holdout_brain, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  if (holdout_brain && !manifest.brains().contains(*holdout_brain)) {
    throw ConfigError("holdout brain " + std::to_string(*holdout_brain) + " not in corpus");
  }
  std::map<int, int> section_brain;
  for (const auto& e : manifest.entries) section_brain[e.section_id] = e.brain_id;
  std::vector<int> eligible;
  for (const auto& [section, brain] : section_brain) {
    if (!holdout_brain || brain != *holdout_brain) eligible.push_back(section);
  }
  const auto train_count =
      static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(eligible.size())));
  if (train_count == 0 || train_count >= eligible.size()) {
    throw ConfigError("train fraction " + std::to_string(train_fraction) + " over " +
                      std::to_string(eligible.size()) +
                      " sections leaves the train or test set empty");
  }
  Rng rng(derive_seed(seed, {0x5917}));
  std::shuffle(eligible.begin(), eligible.end(), rng.engine());
  SplitSpec split;
  split.holdout_brain = holdout_brain;
  split.train_sections.insert(eligible.begin(), eligible.begin() + static_cast<long>(train_count));
  split.test_sections.insert(eligible.begin() + static_cast<long>(train_count), eligible.end());
  return split;
}

std::vector<std::size_t> entries_in_sections(const CorpusManifest& manifest,
                                             const std::set<int>& sections) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (sections.contains(manifest.entries[i].section_id)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> entries_of_brain(const CorpusManifest& manifest, int brain) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].brain_id == brain) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> sample_balanced_epoch(const CorpusManifest& manifest,
                                               const SplitSpec& split, int per_class,
                                               std::uint64_t seed) {
  if (per_class < 1) throw ConfigError("per_class must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(manifest.class_count);
  for (const std::size_t i : entries_in_sections(manifest, split.train_sections)) {
    by_class[manifest.entries[i].label].push_back(i);
  }
  Rng rng(derive_seed(seed, {0xba1a}));
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(per_class) * by_class.size());
  for (int c = 0; c < manifest.class_count; ++c) {
    auto& pool = by_class[c];
    if (pool.empty()) {
      throw ConfigError("class " + manifest.class_names[c] + " (label " + std::to_string(c) +
                        ") has no patches in the training sections");
    }
    // Full shuffled passes, then a partial pass without replacement.
    std::size_t remaining = static_cast<std::size_t>(per_class);
    while (remaining > 0) {
      std::shuffle(pool.begin(), pool.end(), rng.engine());
      const std::size_t take = std::min(remaining, pool.size());
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(take));
      remaining -= take;
    }
  }
  std::shuffle(out.begin(), out.end(), rng.engine());
  return out;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& m = corpus.manifest();
  nlohmann::ordered_json j;
  j["class_count"] = m.class_count;
  j["class_names"] = m.class_names;
  j["resolution_um"] = m.resolution_um;
  j["generator_seed"] = m.generator_seed;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"offset", e.offset},
                       {"label", e.label},
                       {"brain_id", e.brain_id},
                       {"section_id", e.section_id},
                       {"side", e.side}});
  }
  j["entries"] = std::move(entries);
  {
    std::ofstream out(dir / kManifestFile);
    if (!out) throw FormatError("cannot write " + (dir / kManifestFile).string());
    out << j.dump(1) << '\n';
  }
  std::ofstream out(dir / kStoreFile, std::ios::binary);
  if (!out) throw FormatError("cannot write " + (dir / kStoreFile).string());
  out.write(reinterpret_cast<const char*>(corpus.store().data()),
            static_cast<std::streamsize>(corpus.store().size()));
}

Corpus load_corpus(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw FormatError("cannot read " + (dir / kManifestFile).string());
  CorpusManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.class_count = j.at("class_count").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.resolution_um = j.at("resolution_um").get<double>();
    m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    const auto& entries = j.at("entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      try {
        m.entries.push_back(ManifestEntry{e.at("offset").get<std::uint64_t>(),
                                          e.at("label").get<int>(), e.at("brain_id").get<int>(),
                                          e.at("section_id").get<int>(), e.at("side").get<int>()});
      } catch (const nlohmann::json::exception& err) {
        throw FormatError("manifest entry " + std::to_string(i) + ": " + err.what());
      }
    }
  } catch (const nlohmann::json::exception& err) {
    throw FormatError("malformed manifest " + (dir / kManifestFile).string() + ": " + err.what());
  }
  std::ifstream store_in(dir / kStoreFile, std::ios::binary);
  if (!store_in) throw FormatError("cannot read " + (dir / kStoreFile).string());
  std::vector<std::uint8_t> store((std::istreambuf_iterator<char>(store_in)),
                                  std::istreambuf_iterator<char>());
  // u8 quantization cannot leave [0,1] after /255; bounds are what can fail.
  return Corpus(std::move(m), std::move(store));
}

namespace {

std::string join_ints(const std::set<int>& values) {
  std::string out;
  for (const int v : values) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::set<int> parse_ints(const std::string& text, const std::string& key) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.insert(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw FormatError("split key " + key + ": bad section id '" + item + "'");
    }
  }
  return out;
}

}  // namespace

void save_split(const SplitSpec& split, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "train_sections=" << join_ints(split.train_sections) << '\n';
  out << "test_sections=" << join_ints(split.test_sections) << '\n';
  out << "holdout_brain=" << (split.holdout_brain ? std::to_string(*split.holdout_brain) : "none")
      << '\n';
}

SplitSpec load_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read split file " + path.string());
  SplitSpec split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "train_sections") {
      split.train_sections = parse_ints(value, key);
    } else if (key == "test_sections") {
      split.test_sections = parse_ints(value, key);
    } else if (key == "holdout_brain") {
      if (value != "none") split.holdout_brain = *parse_ints(value, key).begin();
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  return split;
}

}  // namespace cytocon
