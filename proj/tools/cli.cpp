#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vrel/discriminative.hpp"
#include "vrel/error.hpp"
#include "vrel/model_io.hpp"
#include "vrel/relevance.hpp"

namespace vrel::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Emit parse_emit(const std::string& text) {
  Emit e{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "heatmaps") e.heatmaps = true;
    else if (item == "raw") e.raw = true;
    else if (item == "predictions") e.predictions = true;
    else if (item == "all") e = Emit{};
    else if (item != "none" && !item.empty()) throw ConfigError("unknown --emit item '" + item + "'");
  }
  return e;
}

namespace {

// Remembers every path a command creates so a failed run can remove them.
class OutputTracker {
 public:
  void make_dir(const fs::path& dir) {
    std::vector<fs::path> fresh;
    for (fs::path p = dir; !p.empty() && !fs::exists(p); p = p.parent_path()) {
      fresh.push_back(p);
      if (p == p.parent_path()) break;
    }
    fs::create_directories(dir);
    for (auto it = fresh.rbegin(); it != fresh.rend(); ++it) created_.push_back(*it);
  }

  void add_file(const fs::path& file) {
    if (std::find(created_.begin(), created_.end(), file) == created_.end()) created_.push_back(file);
  }

  void write_frames(const std::vector<Image>& frames, const fs::path& dir) {
    make_dir(dir);
    for (const fs::path& p : vrel::write_frames(frames, dir)) add_file(p);
  }

  void write_text(const fs::path& file, const std::string& text) {
    add_file(file);
    std::ofstream f(file, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write '" + file.string() + "'");
  }

  void write_raw(const Tensor& t, const fs::path& file) {
    add_file(file);
    write_raw_tensor(t, file);
  }

  void commit() { created_.clear(); }

  ~OutputTracker() {
    std::error_code ec;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove_all(*it, ec);
  }

 private:
  std::vector<fs::path> created_;
};

struct Loaded {
  Network net;
  Tensor input;  // normalized
  RelevanceConfig relevance;
};

void require_exists(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing --") + what);
  if (!fs::exists(p)) throw IoError(std::string(what) + " path '" + p.string() + "' does not exist");
}

Loaded load(const CliConfig& cfg) {
  require_exists(cfg.arch, "arch");
  require_exists(cfg.weights, "weights");
  require_exists(cfg.input, "input");
  const Architecture arch = load_architecture_file(cfg.arch);
  const Network bound = bind_weights(arch, read_weight_container(cfg.weights));

  Normalization norm = arch.normalization();
  if (!cfg.mean.empty()) norm.mean = cfg.mean;
  if (!cfg.std.empty()) norm.std = cfg.std;
  if (norm.mean.empty() != norm.std.empty()) {
    norm.mean.resize(std::max(norm.mean.size(), norm.std.size()), 0.0f);
    norm.std.resize(norm.mean.size(), 1.0f);
  }

  const Shape& want = arch.input_shape();
  const VideoClip clip = read_video(cfg.input, want.size() == 4 ? std::optional<std::size_t>(want[1]) : std::nullopt);
  if (clip.tensor.shape() != want) {
    throw FormatError(FormatError::Kind::kFrameSize, "clip '" + cfg.input.string() + "' has shape " +
                                                         shape_to_string(clip.tensor.shape()) +
                                                         ", the network expects " + shape_to_string(want));
  }

  RelevanceConfig rc = RelevanceConfig::for_normalization(norm, want[0]);
  rc.alpha = cfg.alpha;
  rc.beta = cfg.beta;
  rc.eps = cfg.eps;
  rc.target = cfg.target;
  rc.validate();

  Tensor input = normalize(clip.tensor, norm);
  return {Network(bound.input_shape(), bound.num_classes(), bound.layers(), norm), std::move(input), std::move(rc)};
}

std::size_t thread_count(const CliConfig& cfg) { return cfg.threads ? cfg.threads : threads_from_environment(); }

void print_warnings(const RelevanceMap& m, std::ostream& err) {
  for (const std::string& w : m.warnings) err << "warning: " << w << '\n';
}

template <typename Body>
int guarded(const char* command, std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "vrel " << command << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int cmd_predict(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded("predict", err, [&] {
    const Loaded l = load(cfg);
    const Tensor logits = l.net.logits(l.input);
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    const std::size_t k = std::min<std::size_t>(5, order.size());
    for (std::size_t r = 0; r < k; ++r) {
      out << json{{"rank", r + 1}, {"class", order[r]}, {"logit", logits[order[r]]}}.dump() << '\n';
    }
    err << "predicted class " << order[0] << " (logit " << logits[order[0]] << ")\n";
    return 0;
  });
}

int cmd_explain(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded("explain", err, [&] {
    if (cfg.out.empty()) throw ConfigError("missing --out");
    const Loaded l = load(cfg);
    OutputTracker files;
    files.make_dir(cfg.out);
    const RelevanceMap m = explain(l.net, l.input, l.relevance);
    print_warnings(m, err);
    if (cfg.emit.heatmaps) files.write_frames(render_heatmap(m, HeatmapMode::kOriginal), cfg.out / "heatmap");
    if (cfg.emit.raw) files.write_raw(m.relevance, cfg.out / "relevance.vrelv");
    const double total = sum_all(m.relevance);
    if (cfg.emit.predictions) {
      files.write_text(cfg.out / "prediction.json",
                       json{{"target_class", m.target_class},
                            {"target_logit", m.target_logit},
                            {"predicted_class", m.predicted_class}}
                               .dump(2) +
                           "\n");
    }
    out << json{{"command", "explain"},
                {"target_class", m.target_class},
                {"target_logit", m.target_logit},
                {"predicted_class", m.predicted_class},
                {"relevance_sum", total},
                {"frames", l.input.extent(1)}}
               .dump()
        << '\n';
    err << "explained class " << m.target_class << ": sum of relevance " << total << " for logit " << m.target_logit
        << '\n';
    files.commit();
    return 0;
  });
}

int cmd_decompose(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded("decompose", err, [&] {
    if (cfg.out.empty()) throw ConfigError("missing --out");
    const Loaded l = load(cfg);
    OutputTracker files;
    files.make_dir(cfg.out);

    DecomposeOptions opts;
    opts.max_threads = thread_count(cfg);
    opts.on_pass = [&](std::size_t done, std::size_t total) { err << "explain pass " << done << '/' << total << '\n'; };
    const ExplanationTriple e = discriminative_decompose(l.net, l.input, l.relevance, opts);
    print_warnings(e.original, err);
    print_warnings(e.spatial, err);

    const std::pair<const char*, const RelevanceMap*> maps[] = {
        {"original", &e.original}, {"spatial", &e.spatial}, {"temporal", &e.temporal}};
    if (cfg.emit.heatmaps) {
      files.write_frames(render_heatmap(e.original, HeatmapMode::kOriginal), cfg.out / "original");
      files.write_frames(render_heatmap(e.spatial, HeatmapMode::kSpatial), cfg.out / "spatial");
      files.write_frames(render_heatmap(e.temporal, HeatmapMode::kTemporal), cfg.out / "temporal");
    }
    if (cfg.emit.raw) {
      for (const auto& [name, map] : maps) files.write_raw(map->relevance, cfg.out / (std::string(name) + ".vrelv"));
    }
    if (cfg.emit.predictions) {
      json frames = json::array();
      for (std::size_t t = 0; t < e.per_frame_predictions.size(); ++t) {
        frames.push_back({{"frame", t}, {"predicted_class", e.per_frame_predictions[t]}, {"target_logit", e.per_frame_logits[t]}});
      }
      files.write_text(cfg.out / "predictions.json", json{{"target_class", e.target_class},
                                                          {"predicted_class", e.original.predicted_class},
                                                          {"target_logit", e.original.target_logit},
                                                          {"freeze_frames", frames}}
                                                             .dump(2) +
                                                         "\n");
    }

    json line{{"command", "decompose"}, {"target_class", e.target_class}, {"explain_passes", e.explain_passes}};
    for (const auto& [name, map] : maps) line[std::string("abs_sum_") + name] = sum_abs(map->relevance);
    out << line.dump() << '\n';
    err << "class " << e.target_class << ": sum|original| " << sum_abs(e.original.relevance) << ", sum|spatial| "
        << sum_abs(e.spatial.relevance) << ", sum|temporal| " << sum_abs(e.temporal.relevance) << '\n';
    files.commit();
    return 0;
  });
}

namespace {

// Uniform [0, 1) from the top 24 bits of a 64-bit Mersenne Twister draw;
// the engine's output sequence is fixed by the standard, so this is
// reproducible across standard libraries.
float unit(std::mt19937_64& rng) { return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f); }

}  // namespace

WeightContainer synthesize_weights(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightContainer c;
  for (const ParameterSpec& p : arch.parameters()) {
    Tensor t(p.shape);
    const bool is_bias = p.name.ends_with(".bias");
    if (p.name.ends_with(".running_var") || (p.shape.size() == 1 && p.name.ends_with(".weight"))) {
      for (float& v : t.data()) v = 1.0f;
    } else if (!is_bias && !p.name.ends_with(".running_mean")) {
      const float bound = std::sqrt(6.0f * p.shape[0] / static_cast<float>(shape_volume(p.shape)));
      for (float& v : t.data()) v = (2.0f * unit(rng) - 1.0f) * bound;
    }
    c.insert(p.name, std::move(t));
  }
  return c;
}

Tensor synthetic_clip(const Shape& shape, std::uint64_t seed) {
  if (shape.size() != 4 || shape[0] != 3) throw ShapeError("synthetic clips are 3 x T x H x W, got " + shape_to_string(shape));
  const std::size_t frames = shape[1], h = shape[2], w = shape[3];
  std::mt19937_64 rng(seed);
  std::vector<float> background(3 * h * w);
  for (float& v : background) v = 40.0f + 80.0f * unit(rng);
  const std::size_t side = std::max<std::size_t>(2, std::min(h, w) / 4);
  Tensor clip(shape);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t y0 = t % (h - side + 1), x0 = t % (w - side + 1);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const bool inside = y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;
          clip[((c * frames + t) * h + y) * w + x] = inside ? 230.0f - 20.0f * c : background[(c * h + y) * w + x];
        }
      }
    }
  }
  return clip;
}

int cmd_synth(const SynthConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded("synth", err, [&] {
    require_exists(cfg.arch, "arch");
    if (cfg.out.empty()) throw ConfigError("missing --out");
    const Architecture arch = load_architecture_file(cfg.arch);
    OutputTracker files;
    files.make_dir(cfg.out);
    files.add_file(cfg.out / "weights.vrelw");
    write_weight_container(synthesize_weights(arch, cfg.seed), cfg.out / "weights.vrelw");
    files.write_raw(synthetic_clip(arch.input_shape(), cfg.seed), cfg.out / "clip.vrelv");
    out << json{{"command", "synth"},
                {"weights", (cfg.out / "weights.vrelw").string()},
                {"clip", (cfg.out / "clip.vrelv").string()}}
               .dump()
        << '\n';
    files.commit();
    return 0;
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D CNN video classifier with deep Taylor relevance explanations", "vrel"};
  app.require_subcommand(1);

  CliConfig cfg;
  std::string target = "argmax";
  std::string emit = "all";
  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--arch", cfg.arch, "architecture config (JSON)")->required();
    sub->add_option("--weights", cfg.weights, "weight container (.vrelw)")->required();
    sub->add_option("--input", cfg.input, "clip: directory of PNG frames or raw .vrelv file")->required();
    sub->add_option("--mean", cfg.mean, "per-channel mean, overrides the config")->delimiter(',');
    sub->add_option("--std", cfg.std, "per-channel std, overrides the config")->delimiter(',');
    if (with_out) {
      sub->add_option("--out", cfg.out, "output directory")->required();
      sub->add_option("--alpha", cfg.alpha, "alpha of the alpha-beta rule");
      sub->add_option("--beta", cfg.beta, "beta of the alpha-beta rule");
      sub->add_option("--eps", cfg.eps, "denominator stabilizer");
      sub->add_option("--target", target, "class index or 'argmax'");
      sub->add_option("--emit", emit, "comma list of heatmaps, raw, predictions");
      sub->add_option("--threads", cfg.threads, "worker threads (default: VREL_THREADS or all cores)");
    }
  };
  CLI::App* predict = app.add_subcommand("predict", "print the top-5 classes of a clip");
  add_common(predict, false);
  CLI::App* explain_cmd = app.add_subcommand("explain", "relevance heatmaps for one clip");
  add_common(explain_cmd, true);
  CLI::App* decompose = app.add_subcommand("decompose", "split relevance into spatial and temporal parts");
  add_common(decompose, true);

  SynthConfig synth_cfg;
  CLI::App* synth = app.add_subcommand("synth", "write deterministic weights and a synthetic clip for an architecture");
  synth->add_option("--arch", synth_cfg.arch, "architecture config (JSON)")->required();
  synth->add_option("--out", synth_cfg.out, "output directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (target != "argmax") {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(target, &pos);
      if (pos != target.size()) throw std::invalid_argument(target);
      cfg.target = static_cast<std::size_t>(v);
    }
    cfg.emit = parse_emit(emit);
  } catch (const std::exception&) {
    err << "vrel: invalid --target or --emit value\n";
    return 2;
  }

  if (predict->parsed()) return cmd_predict(cfg, out, err);
  if (explain_cmd->parsed()) return cmd_explain(cfg, out, err);
  if (decompose->parsed()) return cmd_decompose(cfg, out, err);
  return cmd_synth(synth_cfg, out, err);
}

}  // namespace vrel::cli
