#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vrel/network.hpp"
#include "vrel/tensor.hpp"
#include "vrel/weights.hpp"

namespace vrel::cli {

struct Emit {
  bool heatmaps = true;
  bool raw = true;
  bool predictions = true;
};

/// Parses "heatmaps,raw,predictions" (any subset, "all" or "none").
Emit parse_emit(const std::string& text);

struct CliConfig {
  std::filesystem::path arch;
  std::filesystem::path weights;
  std::filesystem::path input;
  std::filesystem::path out;
  float alpha = 1.0f;
  float beta = 0.0f;
  float eps = 1e-9f;
  /// Empty explains the predicted class.
  std::optional<std::size_t> target;
  /// Overrides the normalization declared by the architecture config.
  std::vector<float> mean;
  std::vector<float> std;
  Emit emit;
  /// 0 defers to VREL_THREADS, then to the hardware.
  std::size_t threads = 0;
};

// Each command returns a process exit status. Machine-readable results go
// to `out` as JSON lines, progress and diagnostics to `err`.
int cmd_predict(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_explain(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_decompose(const CliConfig& cfg, std::ostream& out, std::ostream& err);

struct SynthConfig {
  std::filesystem::path arch;
  std::filesystem::path out;
  std::uint64_t seed = 1;
};

/// Writes weights.vrelw and clip.vrelv for `arch` into `out`.
int cmd_synth(const SynthConfig& cfg, std::ostream& out, std::ostream& err);

/// Deterministic weights for every parameter of `arch`: conv/linear weights
/// uniform in +-sqrt(6 / fan_in), biases zero, batch norm at identity.
WeightContainer synthesize_weights(const Architecture& arch, std::uint64_t seed);

/// 3 x T x H x W clip in [0, 255]: a fixed textured background with a
/// bright square that moves diagonally by one pixel per frame.
Tensor synthetic_clip(const Shape& shape, std::uint64_t seed);

/// Full command line, argv[0] included.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vrel::cli
