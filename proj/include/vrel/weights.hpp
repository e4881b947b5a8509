#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vrel/tensor.hpp"

namespace vrel {

/// Named float32 tensors in insertion order.
class WeightContainer {
 public:
  void insert(std::string name, Tensor tensor);

  const Tensor* find(const std::string& name) const;
  /// Throws MissingTensorError.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// On-disk layout (all integers little-endian):
//   bytes 0..7    magic "VRELW001"
//   bytes 8..15   u64 header length N
//   next N bytes  JSON object {name: {"shape": [...], "offset": o, "nbytes": n, "dtype": "float32"}}
//   remainder     payload; offsets are relative to its first byte
// "dtype" is optional and defaults to float32.
inline constexpr char kWeightMagic[8] = {'V', 'R', 'E', 'L', 'W', '0', '0', '1'};

/// Parses a complete container. Any defect throws FormatError; no partial
/// container is ever returned.
WeightContainer read_weight_container(std::span<const std::byte> bytes);
WeightContainer read_weight_container(const std::filesystem::path& path);

std::vector<std::byte> serialize_weight_container(const WeightContainer& container);
void write_weight_container(const WeightContainer& container, const std::filesystem::path& path);

}  // namespace vrel
