#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrel/relevance.hpp"
#include "vrel/tensor.hpp"
#include "vrel/weights.hpp"

namespace vrel {

// Raw tensor file, little-endian:
//   bytes 0..7    magic "VRELV001"
//   bytes 8..23   u32 extents C, T, H, W
//   remainder     C*T*H*W float32 values, row-major
inline constexpr char kRawMagic[8] = {'V', 'R', 'E', 'L', 'V', '0', '0', '1'};
inline constexpr std::size_t kRawHeaderBytes = 24;

std::vector<std::byte> serialize_raw_tensor(const Tensor& t);
Tensor parse_raw_tensor(std::span<const std::byte> bytes);

void write_raw_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_raw_tensor(const std::filesystem::path& path);

struct VideoClip {
  /// 3 x T x H x W, pixel values in [0, 255] before normalization.
  Tensor tensor;
  /// Frame file names, or the raw file name.
  std::vector<std::string> sources;
};

/// Reads a directory of PNG frames (sorted by file name) or a raw
/// "VRELV001" file. When `expected_frames` is given the frame count must
/// match it.
VideoClip read_video(const std::filesystem::path& path, std::optional<std::size_t> expected_frames = std::nullopt);

void write_relevance(const RelevanceMap& map, const std::filesystem::path& path);

/// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  friend bool operator==(const Image&, const Image&) = default;
};

std::vector<std::byte> encode_png(const Image& image);
Image decode_png(std::span<const std::byte> bytes);
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

enum class HeatmapMode { kOriginal, kSpatial, kTemporal };

std::string_view to_string(HeatmapMode mode);

/// One image per frame. Channels are summed, then every value v is divided
/// by the largest |v| in the whole clip and coloured on a diverging scale:
/// +1 red, 0 white, -1 blue. An all-zero map renders white. The mode only
/// labels the output; all three maps share the colour scale definition.
std::vector<Image> render_heatmap(const RelevanceMap& map, HeatmapMode mode);
std::vector<Image> render_heatmap(const Tensor& relevance);

/// Writes frame_000.png, frame_001.png, ... into `dir` (created if needed).
/// Returns the written paths.
std::vector<std::filesystem::path> write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir);

}  // namespace vrel
