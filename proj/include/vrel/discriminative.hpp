#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vrel/network.hpp"
#include "vrel/relevance.hpp"

// Separates an explanation of a C x T x H x W clip into a spatial part and
// a temporal (motion) part. The spatial part of frame t is frame t of the
// explanation of a "freeze-frame" clip, in which frame t is repeated over
// the whole temporal extent so the network sees no motion. The temporal
// part is what remains after subtracting it from the explanation of the
// real clip.

namespace vrel {

/// Clip of the same shape whose every temporal slice is frame `t`.
Tensor freeze_frame(const Tensor& video, std::size_t t);

struct ExplanationTriple {
  RelevanceMap original;
  RelevanceMap spatial;
  /// original - spatial, elementwise.
  RelevanceMap temporal;
  std::size_t target_class = 0;
  /// Argmax class of every freeze-frame clip, by frame index.
  std::vector<std::size_t> per_frame_predictions;
  /// Logit of target_class on every freeze-frame clip (the spatial seeds).
  std::vector<float> per_frame_logits;
  /// Number of explain() calls made: T + 1.
  std::size_t explain_passes = 0;
};

struct DecomposeOptions {
  /// Upper bound on concurrently running freeze-frame explanations; 0 uses
  /// the hardware concurrency.
  std::size_t max_threads = 0;
  /// Called after each explain pass with (pass index, total passes). May be
  /// called from worker threads, but never concurrently.
  std::function<void(std::size_t, std::size_t)> on_pass;
};

struct SpatialResult {
  /// target_logit holds the mean of the per-frame seeds.
  RelevanceMap map;
  std::vector<std::size_t> per_frame_predictions;
  std::vector<float> per_frame_logits;
  std::size_t explain_passes = 0;
};

/// Explains `target` on every freeze-frame of `video` and stitches frame t
/// of the t-th explanation into one map. The seed of each pass is that
/// freeze-frame's own logit for `target`.
SpatialResult spatial_relevance(const Network& net, const Tensor& video, const RelevanceConfig& cfg,
                                std::size_t target, const DecomposeOptions& options = {});

/// Full explanation, spatial explanation for the same target class, and
/// their signed difference.
ExplanationTriple discriminative_decompose(const Network& net, const Tensor& video, const RelevanceConfig& cfg,
                                           const DecomposeOptions& options = {});

/// Reads VREL_THREADS; 0 when unset or invalid.
std::size_t threads_from_environment();

}  // namespace vrel
