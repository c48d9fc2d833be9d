#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cytocon/error.hpp"
#include "cytocon/tensor.hpp"

namespace cytocon {

// Named tensors in insertion order. Running statistics and other buffers are
// stored alongside weights but flagged non-trainable.
template <typename T>
class BasicParams {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
    bool trainable = true;
  };

  void add(std::string name, BasicTensor<T> value, bool trainable = true) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  BasicTensor<T>& operator[](const std::string& name) { return entries_[position(name)].value; }
  const BasicTensor<T>& operator[](const std::string& name) const {
    return entries_[position(name)].value;
  }

  const Entry& entry(const std::string& name) const { return entries_[position(name)]; }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Trainable scalar count.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += e.value.size();
    }
    return n;
  }

  // Zero tensors for every trainable entry, same order.
  BasicParams zeros_like_trainable() const {
    BasicParams out;
    for (const auto& e : entries_) {
      if (e.trainable) out.add(e.name, BasicTensor<T>(e.value.shape()), true);
    }
    return out;
  }

  // Entries whose names start with `prefix`.
  BasicParams subset(const std::string& prefix) const {
    BasicParams out;
    for (const auto& e : entries_) {
      if (e.name.rfind(prefix, 0) == 0) out.add(e.name, e.value, e.trainable);
    }
    return out;
  }

  template <typename U>
  BasicParams<U> cast() const {
    BasicParams<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  // FNV-1a over names, shapes and raw bytes.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* data, std::size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      feed(e.name.data(), e.name.size());
      for (const auto d : e.value.shape()) feed(&d, sizeof d);
      feed(e.value.data(), e.value.size() * sizeof(T));
    }
    return h;
  }

  friend bool operator==(const BasicParams& a, const BasicParams& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::size_t position(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelParams = BasicParams<float>;

template <typename T>
double max_abs_diff(const BasicParams<T>& a, const BasicParams<T>& b) {
  if (a.size() != b.size()) throw ShapeError("parameter sets differ in size");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, max_abs_diff(a.entries()[i].value, b.entries()[i].value));
  }
  return worst;
}

}  // namespace cytocon
