#include "cytocon/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cytocon/error.hpp"

namespace cytocon {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

const std::vector<SettingSpec>& Settings::schema() {
  static const std::vector<SettingSpec> specs{
      {"preset", "desk", "named defaults: desk | canonical"},
      {"seed", "7", "master seed (corpus generation, splits, init, sampling, augmentation)"},
      {"out", "runs", "output directory"},
      {"corpus", "", "corpus directory (manifest.json + patches.bin)"},
      {"split", "", "split file"},
      {"checkpoint", "", "model checkpoint to read"},
      {"resume", "", "training checkpoint to resume from"},
      {"checkpoint-every", "0", "write a training checkpoint every n epochs (0 = only at the end)"},
      // synthetic corpus
      {"classes", "5", "synthetic class count"},
      {"per-class", "100", "synthetic patches per class"},
      {"side", "104", "synthetic source patch side (pixels)"},
      {"brains", "2", "synthetic brain count"},
      {"sections-per-brain", "5", "synthetic sections per brain"},
      {"resolution-um", "35", "synthetic micrometers per pixel"},
      {"separability", "4", "inter-class spacing / intra-class jitter"},
      // split
      {"train-fraction", "0.8", "fraction of eligible sections used for training"},
      {"holdout-brain", "none", "brain id withheld entirely (unseen-brain split)"},
      // model
      {"input-side", "64", "encoder input side P"},
      {"stem-stride", "2", "stride of the 5x5 stem convolution"},
      {"temperature", "0.07", "contrastive temperature"},
      // training
      {"batch-size", "64", "global batch size N"},
      {"workers", "1", "simulated data-parallel workers K"},
      {"bn-mode", "local", "batch-norm across workers: local | sync"},
      {"contrastive-epochs", "10", "contrastive pre-training epochs"},
      {"probe-epochs", "5", "linear probe epochs"},
      {"scratch-epochs", "auto", "end-to-end epochs (auto = contrastive + probe)"},
      {"samples-per-class", "160", "class-balanced samples per class per epoch"},
      {"optimizer", "lars", "lars | sgd"},
      {"learning-rate", "auto", "constant learning rate (auto = 0.01 * N / 128)"},
      {"momentum", "0.9", "optimizer momentum"},
      {"weight-decay", "0", "weight decay"},
      {"augment", "true", "augment training patches"},
      {"flip-sharpen-sign", "false", "use x - delta (g - x) for sharpening"},
      // evaluation
      {"pred", "", "logits CSV (eval without a checkpoint)"},
      {"truth", "", "labels CSV (eval without a checkpoint)"},
      {"k", "3", "top-k for eval"},
      {"model-name", "model", "model column of the metrics CSV"},
      {"dataset", "test", "test | unseen | train"},
      {"clusters", "10", "Ward cluster count"},
      {"top-m", "3", "labels listed per cluster"},
      {"trials", "20", "gradient-check trials per op"},
  };
  return specs;
}

bool Settings::known(const std::string& key) {
  const auto& s = schema();
  return std::any_of(s.begin(), s.end(), [&](const SettingSpec& spec) { return spec.key == key; });
}

const Settings::Pairs& Settings::preset(const std::string& name) {
  static const Pairs desk{};
  static const Pairs canonical{
      {"side", "1797"},
      {"resolution-um", "2"},
      {"input-side", "1129"},
      {"stem-stride", "4"},
      {"batch-size", "4096"},
      {"workers", "32"},
      {"contrastive-epochs", "150"},
      {"probe-epochs", "30"},
  };
  if (name == "desk") return desk;
  if (name == "canonical") return canonical;
  throw ConfigError("preset: unknown preset '" + name + "' (expected desk or canonical)");
}

Settings::Settings() {
  for (const auto& spec : schema()) values_[spec.key] = spec.default_value;
}

Settings Settings::resolve(const Pairs& file_values, const Pairs& flag_values) {
  Settings s;
  std::string preset_name = s.get("preset");
  for (const auto* layer : {&file_values, &flag_values}) {
    for (const auto& [k, v] : *layer) {
      if (k == "preset") preset_name = v;
    }
  }
  for (const auto& [k, v] : preset(preset_name)) s.set(k, v);
  for (const auto* layer : {&file_values, &flag_values}) {
    for (const auto& [k, v] : *layer) s.set(k, v);
  }
  return s;
}

Settings::Pairs Settings::parse_text(const std::string& text, const std::string& origin) {
  Pairs out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (!known(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

Settings::Pairs Settings::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path.string());
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& Settings::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

int Settings::get_int(const std::string& key) const {
  const auto& v = get(key);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t Settings::get_u64(const std::string& key) const {
  const auto& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double Settings::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool Settings::get_bool(const std::string& key) const {
  const auto v = lower(get(key));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + get(key) + "'");
}

std::optional<int> Settings::get_optional_int(const std::string& key) const {
  const auto v = lower(get(key));
  if (v.empty() || v == "none") return std::nullopt;
  return get_int(key);
}

std::string Settings::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string Settings::hash() const { return fnv1a_hex(resolved_text()); }

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cytocon
