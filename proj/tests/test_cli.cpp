#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "json.hpp"
#include "oracle/oracle.hpp"
#include "vrel/model_io.hpp"

using namespace vrel;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kTiny = fs::path(VREL_MODELS_DIR) / "tiny4.json";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("vrel_cli_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  // synth into root_/synth and return a config pointing at it.
  cli::CliConfig synth(const fs::path& arch = kTiny, std::uint64_t seed = 5) {
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_synth({arch, root_ / "synth", seed}, out, err), 0) << err.str();
    cli::CliConfig cfg;
    cfg.arch = arch;
    cfg.weights = root_ / "synth" / "weights.vrelw";
    cfg.input = root_ / "synth" / "clip.vrelv";
    cfg.out = root_ / "out";
    return cfg;
  }

  fs::path write_text(const std::string& name, const std::string& text) {
    std::ofstream(root_ / name) << text;
    return root_ / name;
  }

  fs::path root_;
};

std::vector<json> json_lines(const std::string& s) {
  std::vector<json> lines;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(json::parse(line));
  return lines;
}

std::vector<std::byte> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::vector<char> c((std::istreambuf_iterator<char>(f)), {});
  std::vector<std::byte> out(c.size());
  std::memcpy(out.data(), c.data(), c.size());
  return out;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

bool all_white(const fs::path& dir) {
  for (const fs::path& p : sorted_files(dir))
    for (std::uint8_t b : read_png(p).rgb)
      if (b != 255) return false;
  return true;
}

// Static clip: frame 0 of a synthetic clip everywhere.
fs::path write_static_clip(const fs::path& dir, const Shape& shape) {
  fs::create_directories(dir);
  const Tensor clip = cli::synthetic_clip(shape, 9);
  std::vector<float> frozen(clip.size());
  const std::size_t frames = shape[1], hw = shape[2] * shape[3];
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t p = 0; p < hw; ++p) frozen[(c * frames + t) * hw + p] = clip[c * frames * hw + p];
  write_raw_tensor(Tensor(shape, std::move(frozen)), dir / "static.vrelv");
  return dir / "static.vrelv";
}

}  // namespace

TEST_F(CliTest, PredictPrintsTopFiveDescending) {
  const fs::path arch = write_text("six.json", R"({"input_shape": [3, 2, 4, 4], "layers": [
      {"type": "conv3d", "name": "c", "in_channels": 3, "out_channels": 2, "kernel": [1, 3, 3], "padding": [0, 1, 1]},
      {"type": "relu"}, {"type": "flatten"},
      {"type": "linear", "name": "fc", "in_features": 64, "out_features": 6}]})");
  cli::CliConfig cfg = synth(arch);
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_predict(cfg, out, err), 0) << err.str();
  const auto lines = json_lines(out.str());
  ASSERT_EQ(lines.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(lines[i]["rank"], i + 1);
    if (i) {
      EXPECT_GE(lines[i - 1]["logit"].get<double>(), lines[i]["logit"].get<double>());
    }
  }
}

TEST_F(CliTest, PredictMatchesOracleForward) {
  cli::CliConfig cfg = synth();
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_predict(cfg, out, err), 0) << err.str();
  const auto lines = json_lines(out.str());
  ASSERT_EQ(lines.size(), 4u);  // four classes

  // Same computation with the brute-force operators.
  const Architecture arch = load_architecture_file(kTiny);
  const WeightContainer w = read_weight_container(cfg.weights);
  Tensor x = normalize(read_raw_tensor(cfg.input), arch.normalization());
  for (const LayerDescriptor& d : arch.layers()) {
    switch (d.kind) {
      case LayerKind::kConv3d:
        x = oracle::naive_conv3d(x, w.at(d.name + ".weight"), w.at(d.name + ".bias").values(), d.geometry);
        break;
      case LayerKind::kLinear:
        x = oracle::naive_linear(x, w.at(d.name + ".weight"), w.at(d.name + ".bias").values());
        break;
      case LayerKind::kRelu:
        for (float& v : x.data()) v = std::max(v, 0.0f);
        break;
      case LayerKind::kMaxPool3d: x = oracle::naive_maxpool3d(x, d.geometry).output; break;
      case LayerKind::kFlatten: x = x.reshaped({x.size()}); break;
      default: FAIL();
    }
  }
  EXPECT_EQ(lines[0]["class"].get<std::size_t>(), argmax(x));
  EXPECT_NEAR(lines[0]["logit"].get<double>(), x[argmax(x)], 1e-4);
}

TEST_F(CliTest, MissingWeightsNamesThePath) {
  cli::CliConfig cfg = synth();
  cfg.weights = root_ / "nope.vrelw";
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_predict(cfg, out, err), 0);
  EXPECT_NE(err.str().find("nope.vrelw"), std::string::npos) << err.str();
  EXPECT_TRUE(out.str().empty());
}

TEST_F(CliTest, WrongClipLengthFails) {
  cli::CliConfig cfg = synth();
  write_raw_tensor(Tensor({3, 15, 32, 32}), root_ / "short.vrelv");
  cfg.input = root_ / "short.vrelv";
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_predict(cfg, out, err), 0);
  EXPECT_NE(err.str().find("15"), std::string::npos) << err.str();
}

TEST_F(CliTest, ExplainWritesOneFramePerTimeStep) {
  cli::CliConfig cfg = synth();
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_explain(cfg, out, err), 0) << err.str();
  EXPECT_EQ(sorted_files(cfg.out / "heatmap").size(), 16u);
  EXPECT_TRUE(fs::exists(cfg.out / "relevance.vrelv"));
  const auto lines = json_lines(out.str());
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0]["frames"], 16);
  const Tensor r = read_raw_tensor(cfg.out / "relevance.vrelv");
  EXPECT_NEAR(lines[0]["relevance_sum"].get<double>(), sum_all(r), 1e-6 * std::max(1.0, sum_abs(r)));
}

TEST_F(CliTest, ExplainStaticClipOnFrameLocalNetGivesIdenticalFrames) {
  // No temporal mixing before a full-length average pool, so a static clip
  // gets the same explanation in every frame.
  const fs::path arch = write_text("local.json", R"({"input_shape": [3, 16, 32, 32], "layers": [
      {"type": "conv3d", "name": "c", "in_channels": 3, "out_channels": 4, "kernel": [1, 3, 3], "padding": [0, 1, 1]},
      {"type": "relu"}, {"type": "avgpool3d", "kernel": [16, 4, 4]}, {"type": "flatten"},
      {"type": "linear", "name": "fc", "in_features": 256, "out_features": 4}]})");
  cli::CliConfig cfg = synth(arch);
  cfg.input = write_static_clip(root_ / "clips", {3, 16, 32, 32});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_explain(cfg, out, err), 0) << err.str();
  const auto frames = sorted_files(cfg.out / "heatmap");
  ASSERT_EQ(frames.size(), 16u);
  for (const fs::path& f : frames) EXPECT_EQ(slurp(f), slurp(frames.front())) << f;
}

TEST_F(CliTest, ZeroLogitTargetRendersWhite) {
  cli::CliConfig cfg = synth();
  WeightContainer w = read_weight_container(cfg.weights);
  WeightContainer patched;
  for (auto [name, t] : w.entries()) {
    if (name == "fc2.weight")
      for (std::size_t i = 16 * 2; i < 16 * 3; ++i) t[i] = 0.0f;  // class 2 row
    patched.insert(name, t);
  }
  write_weight_container(patched, root_ / "zero_row.vrelw");
  cfg.weights = root_ / "zero_row.vrelw";
  cfg.target = 2;
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_explain(cfg, out, err), 0) << err.str();
  EXPECT_EQ(json_lines(out.str())[0]["target_logit"], 0.0);
  EXPECT_TRUE(all_white(cfg.out / "heatmap"));
}

TEST_F(CliTest, DecomposeOutputsAndPassCount) {
  cli::CliConfig cfg = synth();
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_decompose(cfg, out, err), 0) << err.str();
  for (const char* d : {"original", "spatial", "temporal"}) EXPECT_EQ(sorted_files(cfg.out / d).size(), 16u) << d;

  std::size_t passes = 0;
  std::istringstream log(err.str());
  for (std::string line; std::getline(log, line);) passes += line.rfind("explain pass ", 0) == 0;
  EXPECT_EQ(passes, 17u);

  const Tensor o = read_raw_tensor(cfg.out / "original.vrelv");
  const Tensor s = read_raw_tensor(cfg.out / "spatial.vrelv");
  const Tensor t = read_raw_tensor(cfg.out / "temporal.vrelv");
  const Tensor diff = sub(o, s);
  for (std::size_t i = 0; i < o.size(); ++i)
    ASSERT_EQ(std::bit_cast<std::uint32_t>(t[i]), std::bit_cast<std::uint32_t>(diff[i])) << i;

  const json preds = json::parse(std::ifstream(cfg.out / "predictions.json"));
  EXPECT_EQ(preds["freeze_frames"].size(), 16u);
  const auto lines = json_lines(out.str());
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0]["explain_passes"], 17);
  EXPECT_NEAR(lines[0]["abs_sum_temporal"].get<double>(), sum_abs(t), 1e-6 * sum_abs(t));
}

TEST_F(CliTest, DecomposeStaticClipHasWhiteTemporalFrames) {
  cli::CliConfig cfg = synth();
  cfg.input = write_static_clip(root_ / "clips", {3, 16, 32, 32});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_decompose(cfg, out, err), 0) << err.str();
  EXPECT_TRUE(all_white(cfg.out / "temporal"));
  EXPECT_FALSE(all_white(cfg.out / "original"));
}

TEST_F(CliTest, DecomposeIsDeterministic) {
  cli::CliConfig cfg = synth();
  std::ostringstream o1, e1, o2, e2;
  ASSERT_EQ(cli::cmd_decompose(cfg, o1, e1), 0);
  cfg.out = root_ / "again";
  cfg.threads = 1;
  ASSERT_EQ(cli::cmd_decompose(cfg, o2, e2), 0);
  EXPECT_EQ(o1.str(), o2.str());
  const auto a = sorted_files(root_ / "out"), b = sorted_files(root_ / "again");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].filename(), b[i].filename());
    EXPECT_EQ(slurp(a[i]), slurp(b[i])) << a[i];
  }
}

TEST_F(CliTest, FailureRemovesPartialOutput) {
  cli::CliConfig cfg = synth();
  cfg.target = 9;  // out of range, fails after the output directory exists
  cfg.out = root_ / "fresh" / "nested";
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_decompose(cfg, out, err), 0);
  EXPECT_FALSE(fs::exists(root_ / "fresh"));

  fs::create_directories(root_ / "keep");
  std::ofstream(root_ / "keep" / "mine.txt") << "x";
  cfg.out = root_ / "keep";
  EXPECT_NE(cli::cmd_explain(cfg, out, err), 0);
  EXPECT_TRUE(fs::exists(root_ / "keep" / "mine.txt"));
  EXPECT_FALSE(fs::exists(root_ / "keep" / "heatmap"));
}

TEST_F(CliTest, EmitSelectsOutputs) {
  cli::CliConfig cfg = synth();
  cfg.emit = cli::parse_emit("raw");
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_decompose(cfg, out, err), 0) << err.str();
  EXPECT_FALSE(fs::exists(cfg.out / "original"));
  EXPECT_FALSE(fs::exists(cfg.out / "predictions.json"));
  EXPECT_TRUE(fs::exists(cfg.out / "temporal.vrelv"));
  EXPECT_THROW(cli::parse_emit("gifs"), ConfigError);
}

TEST_F(CliTest, CommandLineParsing) {
  synth();
  const std::string arch = kTiny.string(), weights = (root_ / "synth" / "weights.vrelw").string(),
                    input = (root_ / "synth" / "clip.vrelv").string(), outdir = (root_ / "cli_out").string();
  {
    const char* argv[] = {"vrel", "explain", "--arch", arch.c_str(), "--weights", weights.c_str(), "--input",
                          input.c_str(), "--out", outdir.c_str(), "--target", "1", "--emit", "raw", "--alpha", "2",
                          "--beta", "1"};
    std::ostringstream out, err;
    ASSERT_EQ(cli::run(std::size(argv), argv, out, err), 0) << err.str();
    EXPECT_EQ(json_lines(out.str())[0]["target_class"], 1);
    EXPECT_TRUE(fs::exists(root_ / "cli_out" / "relevance.vrelv"));
  }
  {
    const char* argv[] = {"vrel", "explain", "--arch", arch.c_str(), "--weights", weights.c_str(), "--input",
                          input.c_str(), "--out", outdir.c_str(), "--alpha", "3"};
    std::ostringstream out, err;
    EXPECT_NE(cli::run(std::size(argv), argv, out, err), 0);  // alpha - beta != 1
  }
  {
    const char* argv[] = {"vrel", "predict", "--arch", arch.c_str()};
    std::ostringstream out, err;
    EXPECT_NE(cli::run(std::size(argv), argv, out, err), 0);
  }
  {
    const char* argv[] = {"vrel", "--help"};
    std::ostringstream out, err;
    EXPECT_EQ(cli::run(std::size(argv), argv, out, err), 0);
    EXPECT_NE(out.str().find("decompose"), std::string::npos);
  }
}

TEST(Synth, WeightsAreDeterministicAndBiasFree) {
  const Architecture arch = load_architecture_file(kTiny);
  const WeightContainer a = cli::synthesize_weights(arch, 3);
  const WeightContainer b = cli::synthesize_weights(arch, 3);
  const WeightContainer c = cli::synthesize_weights(arch, 4);
  for (const auto& [name, t] : a.entries()) {
    EXPECT_EQ(t, b.at(name));
    if (name.ends_with(".bias")) {
      EXPECT_EQ(sum_abs(t), 0.0);
    } else {
      EXPECT_NE(t, c.at(name));
    }
  }
  const Tensor clip = cli::synthetic_clip({3, 16, 32, 32}, 1);
  for (float v : clip.data()) ASSERT_TRUE(v >= 0.0f && v <= 255.0f);
}
