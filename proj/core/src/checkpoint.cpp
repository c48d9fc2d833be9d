#include "cytocon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cytocon/error.hpp"

namespace cytocon {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "CYTOCON-CHECKPOINT 1";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
  }
  return v;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  if (text == "scalar") return shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

std::string format_shape(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw CheckpointError("checkpoint lacks metadata key " + key);
  return it->second;
}

void write_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  std::ostringstream header;
  header << kMagic << '\n';
  for (const auto& [key, value] : checkpoint.metadata) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw CheckpointError("checkpoint metadata '" + key + "' must be single-line without spaces in the key");
    }
    header << "meta " << key << ' ' << value << '\n';
  }
  std::uint64_t offset = 0;
  for (const auto& e : checkpoint.tensors.entries()) {
    header << "tensor " << e.name << " f32 " << format_shape(e.value.shape()) << ' ' << offset << ' '
           << (e.trainable ? 1 : 0) << '\n';
    offset += e.value.size() * sizeof(float);
  }
  header << "end\n";

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const auto text = header.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : checkpoint.tensors.entries()) {
      for (const float v : e.value.values()) {
        const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  struct Pending {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    bool trainable;
  };
  Checkpoint cp;
  std::vector<Pending> pending;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      cp.metadata[key] = value;
    } else if (kind == "tensor") {
      Pending p;
      std::string dtype, shape;
      int trainable = 1;
      ls >> p.name >> dtype >> shape >> p.offset >> trainable;
      if (!ls || dtype != "f32") throw CheckpointError(path.string() + ": bad tensor line: " + line);
      p.shape = parse_shape(shape);
      p.trainable = trainable != 0;
      pending.push_back(std::move(p));
    } else {
      throw CheckpointError(path.string() + ": unexpected header line: " + line);
    }
  }
  if (!ended) throw CheckpointError(path.string() + ": header not terminated");
  const std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& p : pending) {
    const std::size_t count = shape_size(p.shape);
    if (p.offset + count * sizeof(float) > payload.size()) {
      throw CheckpointError(path.string() + ": tensor " + p.name + " exceeds payload");
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + p.offset + i * sizeof bits, sizeof bits);
      values[i] = std::bit_cast<float>(to_little(bits));
    }
    cp.tensors.add(p.name, Tensor(p.shape, std::move(values)), p.trainable);
  }
  return cp;
}

}  // namespace cytocon
