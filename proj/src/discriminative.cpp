#include "vrel/discriminative.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace vrel {

Tensor freeze_frame(const Tensor& video, std::size_t t) {
  if (video.rank() != 4) throw ShapeError("freeze_frame expects a C x T x H x W clip, got " + shape_to_string(video.shape()));
  const std::size_t channels = video.extent(0);
  const std::size_t frames = video.extent(1);
  if (t >= frames) {
    throw ConfigError("frame index " + std::to_string(t) + " out of range for " + std::to_string(frames) + " frames");
  }
  const std::size_t frame_size = video.extent(2) * video.extent(3);
  Tensor out(video.shape());
  const auto src = video.data();
  auto dst = out.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const auto frame = src.subspan((c * frames + t) * frame_size, frame_size);
    for (std::size_t s = 0; s < frames; ++s) {
      std::copy(frame.begin(), frame.end(), dst.begin() + static_cast<std::ptrdiff_t>((c * frames + s) * frame_size));
    }
  }
  return out;
}

std::size_t threads_from_environment() {
  const char* env = std::getenv("VREL_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) return 0;
  return static_cast<std::size_t>(v);
}

namespace {

// Runs job(i) for i in [0, count) on up to `threads` workers. The first
// exception thrown by any job is rethrown after all workers finish.
template <typename Job>
void parallel_for(std::size_t count, std::size_t threads, Job&& job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

// Serializes progress callbacks and counts passes.
class PassCounter {
 public:
  PassCounter(const DecomposeOptions& options, std::size_t total) : options_(options), total_(total) {}

  void record() {
    std::lock_guard lock(mutex_);
    ++done_;
    if (options_.on_pass) options_.on_pass(done_, total_);
  }

  std::size_t done() const { return done_; }

 private:
  const DecomposeOptions& options_;
  std::size_t total_;
  std::size_t done_ = 0;
  std::mutex mutex_;
};

SpatialResult spatial_impl(const Network& net, const Tensor& video, const RelevanceConfig& cfg, std::size_t target,
                           const DecomposeOptions& options, PassCounter& counter) {
  if (video.rank() != 4) throw ShapeError("spatial relevance expects a C x T x H x W clip");
  if (target >= net.num_classes()) {
    throw ConfigError("target class " + std::to_string(target) + " out of range for " +
                      std::to_string(net.num_classes()) + " classes");
  }
  const std::size_t frames = video.extent(1);
  RelevanceConfig frame_cfg = cfg;
  frame_cfg.target = target;

  std::vector<RelevanceMap> per_frame(frames);
  parallel_for(frames, options.max_threads, [&](std::size_t t) {
    per_frame[t] = explain(net, freeze_frame(video, t), frame_cfg);
    counter.record();
  });

  SpatialResult result;
  result.map.relevance = Tensor(video.shape());
  result.map.target_class = target;
  const std::size_t channels = video.extent(0);
  const std::size_t frame_size = video.extent(2) * video.extent(3);
  double seed_sum = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const auto src = per_frame[t].relevance.data();
    auto dst = result.map.relevance.data();
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t offset = (c * frames + t) * frame_size;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(offset), frame_size,
                  dst.begin() + static_cast<std::ptrdiff_t>(offset));
    }
    result.per_frame_predictions.push_back(per_frame[t].predicted_class);
    result.per_frame_logits.push_back(per_frame[t].target_logit);
    seed_sum += per_frame[t].target_logit;
    for (const std::string& w : per_frame[t].warnings) {
      result.map.warnings.push_back("frame " + std::to_string(t) + ": " + w);
    }
  }
  result.map.target_logit = static_cast<float>(seed_sum / static_cast<double>(frames));
  result.map.predicted_class = target;
  result.explain_passes = frames;
  return result;
}

}  // namespace

SpatialResult spatial_relevance(const Network& net, const Tensor& video, const RelevanceConfig& cfg, std::size_t target,
                                const DecomposeOptions& options) {
  cfg.validate();
  PassCounter counter(options, video.rank() == 4 ? video.extent(1) : 0);
  return spatial_impl(net, video, cfg, target, options, counter);
}

ExplanationTriple discriminative_decompose(const Network& net, const Tensor& video, const RelevanceConfig& cfg,
                                           const DecomposeOptions& options) {
  cfg.validate();
  if (video.rank() != 4) throw ShapeError("decompose expects a C x T x H x W clip, got " + shape_to_string(video.shape()));
  PassCounter counter(options, video.extent(1) + 1);

  ExplanationTriple triple;
  triple.original = explain(net, video, cfg);
  counter.record();
  triple.target_class = triple.original.target_class;

  SpatialResult spatial = spatial_impl(net, video, cfg, triple.target_class, options, counter);
  triple.spatial = std::move(spatial.map);
  triple.per_frame_predictions = std::move(spatial.per_frame_predictions);
  triple.per_frame_logits = std::move(spatial.per_frame_logits);

  triple.temporal.relevance = sub(triple.original.relevance, triple.spatial.relevance);
  triple.temporal.target_class = triple.target_class;
  triple.temporal.target_logit = triple.original.target_logit - triple.spatial.target_logit;
  triple.temporal.predicted_class = triple.original.predicted_class;
  triple.explain_passes = counter.done();
  return triple;
}

}  // namespace vrel
