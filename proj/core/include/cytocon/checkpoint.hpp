#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cytocon/params.hpp"

namespace cytocon {

// On-disk layout:
//   CYTOCON-CHECKPOINT 1
//   meta <key> <value>                       (zero or more)
//   tensor <name> f32 <d0>x<d1>... <offset> <trainable 0|1>
//   end
//   <payload: little-endian f32, offsets relative to payload start>
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ModelParams tensors;

  const std::string& meta(const std::string& key) const;
};

// Writes to a temporary sibling and renames it into place.
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cytocon
