#include "vrel/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace vrel {

void WeightContainer::insert(std::string name, Tensor tensor) {
  if (index_.count(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor* WeightContainer::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor& WeightContainer::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw MissingTensorError(name);
  return *t;
}

namespace {

using Kind = FormatError::Kind;
using nlohmann::json;

std::uint64_t load_u64_le(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint64_t>(p[i]);
  return v;
}

float load_f32_le(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint32_t>(p[i]);
  return std::bit_cast<float>(v);
}

void store_u64_le(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void store_f32_le(std::vector<std::byte>& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset;
  std::uint64_t nbytes;
};

std::uint64_t header_uint(const json& j, const char* key, const std::string& name) {
  if (!j.contains(key) || !j.at(key).is_number_unsigned()) {
    throw FormatError(Kind::kBadHeader, "entry '" + name + "': '" + key + "' must be a non-negative integer");
  }
  return j.at(key).get<std::uint64_t>();
}

}  // namespace

WeightContainer read_weight_container(std::span<const std::byte> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightMagic, 8) != 0) {
    throw FormatError(Kind::kBadMagic, "not a weight container (bad magic)");
  }
  if (bytes.size() < 16) throw FormatError(Kind::kTruncated, "weight container truncated before header length");
  const std::uint64_t header_len = load_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) {
    throw FormatError(Kind::kTruncated, "weight container header length exceeds file size");
  }
  const std::span<const std::byte> payload = bytes.subspan(16 + header_len);

  json header;
  try {
    header = json::parse(reinterpret_cast<const char*>(bytes.data() + 16),
                         reinterpret_cast<const char*>(bytes.data() + 16 + header_len));
  } catch (const json::parse_error& e) {
    throw FormatError(Kind::kBadHeader, std::string("weight container header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError(Kind::kBadHeader, "weight container header must be a JSON object");

  std::vector<Entry> entries;
  for (const auto& [name, meta] : header.items()) {
    if (!meta.is_object()) throw FormatError(Kind::kBadHeader, "entry '" + name + "' must be an object");
    if (meta.contains("dtype")) {
      if (!meta.at("dtype").is_string() || meta.at("dtype").get<std::string>() != "float32") {
        throw FormatError(Kind::kBadDtype, "entry '" + name + "' has unsupported dtype " + meta.at("dtype").dump());
      }
    }
    if (!meta.contains("shape") || !meta.at("shape").is_array() || meta.at("shape").empty()) {
      throw FormatError(Kind::kBadHeader, "entry '" + name + "' needs a non-empty 'shape' array");
    }
    Entry e{name, {}, header_uint(meta, "offset", name), header_uint(meta, "nbytes", name)};
    for (const json& d : meta.at("shape")) {
      if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
        throw FormatError(Kind::kBadHeader, "entry '" + name + "': shape extents must be positive integers");
      }
      e.shape.push_back(d.get<std::size_t>());
    }
    if (e.nbytes != 4 * static_cast<std::uint64_t>(shape_volume(e.shape))) {
      throw FormatError(Kind::kBadHeader, "entry '" + name + "': nbytes " + std::to_string(e.nbytes) +
                                              " does not match shape " + shape_to_string(e.shape));
    }
    if (e.offset > payload.size() || e.nbytes > payload.size() - e.offset) {
      throw FormatError(Kind::kTruncated, "entry '" + name + "' extends past the end of the payload");
    }
    entries.push_back(std::move(e));
  }

  std::vector<const Entry*> by_offset;
  for (const Entry& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i - 1]->offset + by_offset[i - 1]->nbytes > by_offset[i]->offset) {
      throw FormatError(Kind::kOverlap,
                        "entries '" + by_offset[i - 1]->name + "' and '" + by_offset[i]->name + "' overlap");
    }
  }

  WeightContainer container;
  for (const Entry& e : entries) {
    std::vector<float> values(e.nbytes / 4);
    const std::byte* src = payload.data() + e.offset;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = load_f32_le(src + 4 * i);
    container.insert(e.name, Tensor(e.shape, std::move(values)));
  }
  return container;
}

WeightContainer read_weight_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight container '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_weight_container(std::as_bytes(std::span<const char>(raw)));
}

std::vector<std::byte> serialize_weight_container(const WeightContainer& container) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : container.entries()) {
    const std::uint64_t nbytes = 4 * static_cast<std::uint64_t>(tensor.size());
    header[name] = {{"shape", tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}, {"dtype", "float32"}};
    offset += nbytes;
  }
  const std::string text = header.dump();

  std::vector<std::byte> out;
  out.reserve(16 + text.size() + offset);
  for (char c : kWeightMagic) out.push_back(static_cast<std::byte>(c));
  store_u64_le(out, text.size());
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& entry : container.entries()) {
    for (float v : entry.second.data()) store_f32_le(out, v);
  }
  return out;
}

void write_weight_container(const WeightContainer& container, const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = serialize_weight_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write weight container '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing weight container '" + path.string() + "'");
}

}  // namespace vrel
