#include "vrel/model_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace vrel {

namespace {

using Kind = FormatError::Kind;

std::vector<std::byte> read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

void write_file(std::span<const std::byte> bytes, const std::filesystem::path& path, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(std::string("cannot write ") + what + " '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(std::string("failed writing ") + what + " '" + path.string() + "'");
}

std::uint32_t load_u32_le(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint32_t>(p[i]);
  return v;
}

void store_u32_le(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::vector<std::byte> serialize_raw_tensor(const Tensor& t) {
  if (t.rank() != 4) throw ShapeError("raw tensor files hold rank-4 tensors, got " + shape_to_string(t.shape()));
  std::vector<std::byte> out;
  out.reserve(kRawHeaderBytes + 4 * t.size());
  for (char c : kRawMagic) out.push_back(static_cast<std::byte>(c));
  for (std::size_t e : t.shape()) {
    if (e > UINT32_MAX) throw ShapeError("extent too large for raw tensor file");
    store_u32_le(out, static_cast<std::uint32_t>(e));
  }
  for (float v : t.data()) store_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor parse_raw_tensor(std::span<const std::byte> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kRawMagic, 8) != 0) {
    throw FormatError(Kind::kBadMagic, "not a raw tensor file (bad magic)");
  }
  if (bytes.size() < kRawHeaderBytes) throw FormatError(Kind::kTruncated, "raw tensor header truncated");
  Shape shape;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::uint32_t e = load_u32_le(bytes.data() + 8 + 4 * i);
    if (e == 0) throw FormatError(Kind::kBadHeader, "raw tensor extents must be >= 1");
    shape.push_back(e);
  }
  const std::uint64_t expected = 4ull * shape[0] * shape[1] * shape[2] * shape[3];
  if (bytes.size() - kRawHeaderBytes != expected) {
    throw FormatError(Kind::kTruncated, "raw tensor payload has " + std::to_string(bytes.size() - kRawHeaderBytes) +
                                            " bytes, expected " + std::to_string(expected));
  }
  std::vector<float> values(expected / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(load_u32_le(bytes.data() + kRawHeaderBytes + 4 * i));
  }
  return Tensor(std::move(shape), std::move(values));
}

void write_raw_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file(serialize_raw_tensor(t), path, "raw tensor");
}

Tensor read_raw_tensor(const std::filesystem::path& path) { return parse_raw_tensor(read_file(path, "raw tensor")); }

void write_relevance(const RelevanceMap& map, const std::filesystem::path& path) {
  write_raw_tensor(map.relevance, path);
}

std::vector<std::byte> encode_png(const Image& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    throw ShapeError("image buffer does not match its dimensions");
  }
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + desc.message);
  }
  std::vector<std::byte> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::byte> bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw FormatError(Kind::kDecode, std::string("PNG decode failed: ") + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  Image image{desc.width, desc.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(desc))};
  if (!png_image_finish_read(&desc, nullptr, image.rgb.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw FormatError(Kind::kDecode, std::string("PNG decode failed: ") + desc.message);
  }
  return image;
}

Image read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file(path, "PNG"));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

void write_png(const Image& image, const std::filesystem::path& path) { write_file(encode_png(image), path, "PNG"); }

VideoClip read_video(const std::filesystem::path& path, std::optional<std::size_t> expected_frames) {
  VideoClip clip;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty()) throw FormatError(Kind::kFrameCount, "no PNG frames in '" + path.string() + "'");
    if (expected_frames && files.size() != *expected_frames) {
      throw FormatError(Kind::kFrameCount, "found " + std::to_string(files.size()) + " frames in '" + path.string() +
                                               "', expected " + std::to_string(*expected_frames));
    }
    std::vector<Image> frames;
    for (const auto& f : files) {
      frames.push_back(read_png(f));
      if (frames.back().width != frames.front().width || frames.back().height != frames.front().height) {
        throw FormatError(Kind::kFrameSize, "frame '" + f.filename().string() + "' is " +
                                                std::to_string(frames.back().width) + "x" +
                                                std::to_string(frames.back().height) + ", expected " +
                                                std::to_string(frames.front().width) + "x" +
                                                std::to_string(frames.front().height));
      }
      clip.sources.push_back(f.filename().string());
    }
    const std::size_t t_count = frames.size();
    const std::size_t h = frames.front().height;
    const std::size_t w = frames.front().width;
    clip.tensor = Tensor(Shape{3, t_count, h, w});
    auto dst = clip.tensor.data();
    for (std::size_t t = 0; t < t_count; ++t) {
      for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          dst[((c * t_count + t) * h * w) + p] = static_cast<float>(frames[t].rgb[p * 3 + c]);
        }
      }
    }
    return clip;
  }

  clip.tensor = read_raw_tensor(path);
  clip.sources.push_back(path.filename().string());
  if (clip.tensor.extent(0) != 3) {
    throw FormatError(Kind::kBadHeader, "clip '" + path.string() + "' has " + std::to_string(clip.tensor.extent(0)) +
                                            " channels, expected 3");
  }
  if (expected_frames && clip.tensor.extent(1) != *expected_frames) {
    throw FormatError(Kind::kFrameCount, "clip '" + path.string() + "' has " + std::to_string(clip.tensor.extent(1)) +
                                             " frames, expected " + std::to_string(*expected_frames));
  }
  if (!all_finite(clip.tensor)) throw FormatError(Kind::kBadHeader, "clip '" + path.string() + "' has non-finite values");
  return clip;
}

std::string_view to_string(HeatmapMode mode) {
  switch (mode) {
    case HeatmapMode::kOriginal: return "original";
    case HeatmapMode::kSpatial: return "spatial";
    case HeatmapMode::kTemporal: return "temporal";
  }
  return "unknown";
}

std::vector<Image> render_heatmap(const RelevanceMap& map, HeatmapMode) { return render_heatmap(map.relevance); }

std::vector<Image> render_heatmap(const Tensor& relevance) {
  if (relevance.rank() != 4) {
    throw ShapeError("heatmaps are rendered from C x T x H x W maps, got " + shape_to_string(relevance.shape()));
  }
  if (!all_finite(relevance)) throw ConfigError("cannot render a relevance map with non-finite values");
  const std::size_t channels = relevance.extent(0);
  const std::size_t frames = relevance.extent(1);
  const std::size_t h = relevance.extent(2);
  const std::size_t w = relevance.extent(3);
  const std::size_t plane = frames * h * w;

  std::vector<double> summed(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) summed[i] += relevance[c * plane + i];
  }
  double peak = 0.0;
  for (double v : summed) peak = std::max(peak, std::fabs(v));

  std::vector<Image> images(frames, Image{w, h, std::vector<std::uint8_t>(w * h * 3, 255)});
  if (peak == 0.0) return images;
  for (std::size_t t = 0; t < frames; ++t) {
    auto& rgb = images[t].rgb;
    for (std::size_t p = 0; p < h * w; ++p) {
      const double a = summed[t * h * w + p] / peak;
      const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::fabs(a))));
      if (a > 0.0) {
        rgb[p * 3 + 1] = fade;
        rgb[p * 3 + 2] = fade;
      } else if (a < 0.0) {
        rgb[p * 3 + 0] = fade;
        rgb[p * 3 + 1] = fade;
      }
    }
  }
  return images;
}

std::vector<std::filesystem::path> write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.png", t);
    written.push_back(dir / name);
    write_png(frames[t], written.back());
  }
  return written;
}

}  // namespace vrel
