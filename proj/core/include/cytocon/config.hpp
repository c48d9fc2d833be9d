#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cytocon {

struct SettingSpec {
  std::string key;
  std::string default_value;
  std::string help;
};

// Flat key=value run configuration. Keys are fixed by schema(); anything else
// is rejected. Resolution order: flags > file > preset > schema defaults.
class Settings {
 public:
  using Pairs = std::vector<std::pair<std::string, std::string>>;

  static const std::vector<SettingSpec>& schema();
  static bool known(const std::string& key);
  // Values a named preset ("desk" or "canonical") places over the defaults.
  static const Pairs& preset(const std::string& name);

  Settings();

  static Settings resolve(const Pairs& file_values, const Pairs& flag_values);

  // Parses `key=value` lines; '#' starts a comment. Unknown keys are an error
  // carrying the file and line.
  static Pairs parse_file(const std::filesystem::path& path);
  static Pairs parse_text(const std::string& text, const std::string& origin = "<text>");

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has_value(const std::string& key) const { return !get(key).empty(); }

  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::optional<int> get_optional_int(const std::string& key) const;  // "none" / empty -> nullopt

  // Sorted key=value lines, one per key.
  std::string resolved_text() const;
  // FNV-1a of resolved_text() as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string fnv1a_hex(const std::string& text);

}  // namespace cytocon
