#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <thread>

#include "oracle/oracle.hpp"
#include "test_util.hpp"
#include "vrel/relevance.hpp"

using namespace vrel;
using namespace vrel::test;

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

BoundLayer linear_layer(Tensor weight, std::vector<float> bias = {}) {
  BoundLayer l;
  l.desc = linear("fc", weight.extent(1), weight.extent(0), !bias.empty());
  l.input_shape = {weight.extent(1)};
  l.output_shape = {weight.extent(0)};
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

BoundLayer random_linear(Rng& rng, std::size_t in, std::size_t out, bool with_bias) {
  return linear_layer(random_tensor({out, in}, rng), with_bias ? random_tensor({out}, rng).values()
                                                               : std::vector<float>{});
}

BoundLayer random_conv(Rng& rng, const Shape& in, bool with_bias) {
  const std::size_t co = pick(rng, 1, 4);
  const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
  const Extent3 s{1, pick(rng, 1, 2), pick(rng, 1, 2)};
  const Extent3 p{k.t / 2, k.h / 2, k.w / 2};
  BoundLayer l;
  l.desc = conv("conv", in[0], co, k, p, s, with_bias);
  l.weight = random_tensor({co, in[0], k.t, k.h, k.w}, rng);
  if (with_bias) l.bias = random_tensor({co}, rng).values();
  l.input_shape = in;
  l.output_shape = window_output_shape(in, co, l.desc.geometry);
  return l;
}

Shape random_input_shape(Rng& rng) { return {pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 2, 6), pick(rng, 2, 6)}; }

void expect_close_rel(const Tensor& a, const Tensor& b, double rel) {
  ASSERT_EQ(a.shape(), b.shape());
  double scale = 0.0;
  for (float v : b.data()) scale = std::max(scale, std::fabs(double(v)));
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], rel * std::max(scale, 1.0)) << "index " << i;
}

double total(const Tensor& t) { return sum_all(t); }

Network random_zero_bias_net(Rng& rng, const Shape& in, std::size_t classes) {
  const Architecture a = random_small_architecture(rng, in, classes);
  return bind_weights(a, random_weights(a, rng, true));
}

}  // namespace

TEST(ReluRule, IsIdentityBitwise) {
  EXPECT_EQ(relu_relevance(Tensor::from({1, -2, 3})).values(), (std::vector<float>{1, -2, 3}));
  EXPECT_EQ(relu_relevance(Tensor(Shape{4})), Tensor(Shape{4}));
  Rng rng(1);
  const Tensor r = random_tensor({3, 5, 7}, rng);
  const Tensor out = relu_relevance(r);
  for (std::size_t i = 0; i < r.size(); ++i)
    ASSERT_EQ(std::bit_cast<std::uint32_t>(out[i]), std::bit_cast<std::uint32_t>(r[i]));
}

TEST(MaxPoolRule, Examples) {
  const Tensor x({1, 1, 2, 2}, std::vector<float>{1, 3, 2, 0});
  const WindowGeometry g{{1, 2, 2}, {1, 2, 2}};
  const MaxPoolResult f = maxpool3d_forward(x, g);
  EXPECT_EQ(maxpool_relevance(f.argmax, Tensor({1, 1, 1, 1}, 5.0f), x.shape()).values(),
            (std::vector<float>{0, 5, 0, 0}));
  EXPECT_EQ(maxpool_relevance(f.argmax, Tensor({1, 1, 1, 1}), x.shape()), Tensor(x.shape()));

  const Tensor two({1, 1, 2, 4}, std::vector<float>{1, 3, 9, 9, 2, 0, 4, 1});
  const MaxPoolResult f2 = maxpool3d_forward(two, g);
  const Tensor r_in = maxpool_relevance(f2.argmax, Tensor({1, 1, 1, 2}, std::vector<float>{4, 6}), two.shape());
  EXPECT_EQ(total(r_in), 10.0);
  EXPECT_EQ(r_in[2], 6.0f);  // tie between the two 9s goes to the first
}

TEST(AvgPoolRule, Examples) {
  const WindowGeometry g{{1, 2, 2}, {1, 2, 2}};
  EXPECT_EQ(avgpool_relevance(Tensor({1, 1, 1, 1}, 4.0f), g, {1, 1, 2, 2}).values(), (std::vector<float>{1, 1, 1, 1}));
  Rng rng(2);
  const Tensor r = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_EQ(avgpool_relevance(r, {{1, 1, 1}, {1, 1, 1}}, r.shape()), r);
}

TEST(PoolRules, ConserveOnNonOverlappingTilings) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Extent3 k{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Shape in{pick(rng, 1, 3), k.t * pick(rng, 1, 3), k.h * pick(rng, 1, 3), k.w * pick(rng, 1, 3)};
    const WindowGeometry g{k, k};
    const Tensor x = random_tensor(in, rng);
    const MaxPoolResult f = maxpool3d_forward(x, g);
    const Tensor r = random_tensor(f.output.shape(), rng, 0.0f, 1.0f);
    const double want = total(r);
    EXPECT_NEAR(total(maxpool_relevance(f.argmax, r, in)), want, 1e-6 * std::max(1.0, want));
    EXPECT_NEAR(total(avgpool_relevance(r, g, in)), want, 1e-6 * std::max(1.0, want));
  }
}

TEST(AlphaBetaRule, HandExample) {
  const BoundLayer l = linear_layer(Tensor({1, 2}, std::vector<float>{1, -1}));
  const Tensor r = alpha_beta_relevance(l, Tensor::from({2, 3}), Tensor::from({7}), default_config());
  EXPECT_NEAR(r[0], 7.0f, 1e-6f);
  EXPECT_EQ(r[1], 0.0f);
}

TEST(AlphaBetaRule, AllPositiveConserves) {
  Rng rng(4);
  const BoundLayer l = linear_layer(random_tensor({5, 8}, rng, 0.1f, 1.0f));
  const Tensor x = random_tensor({8}, rng, 0.1f, 1.0f);
  const Tensor r_out = random_tensor({5}, rng, 0.0f, 2.0f);
  EXPECT_NEAR(total(alpha_beta_relevance(l, x, r_out, default_config())), total(r_out), 1e-5 * total(r_out));
}

TEST(AlphaBetaRule, ZeroRelevanceGivesZeros) {
  Rng rng(5);
  const BoundLayer l = random_conv(rng, {2, 3, 4, 4}, true);
  const Tensor x = random_tensor(l.input_shape, rng);
  EXPECT_EQ(alpha_beta_relevance(l, x, Tensor(l.output_shape), default_config()), Tensor(l.input_shape));
  EXPECT_EQ(z_beta_relevance(l, x, Tensor(l.output_shape), default_config()), Tensor(l.input_shape));
  EXPECT_EQ(oracle::naive_rule(oracle::Rule::kAlphaBeta, l, x, Tensor(l.output_shape), default_config()),
            Tensor(l.input_shape));
}

TEST(AlphaBetaRule, MatchesOracleOnRandomLayers) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    SCOPED_TRACE("trial " + std::to_string(trial));
    RelevanceConfig cfg;
    if (trial % 3 == 1) cfg.alpha = 2.0f, cfg.beta = 1.0f;
    const bool with_bias = trial % 2 == 0;
    const BoundLayer l = trial % 5 < 2 ? random_linear(rng, 8, 8, with_bias)
                                       : random_conv(rng, random_input_shape(rng), with_bias);
    // Half the cases use post-ReLU activations, half signed ones.
    const Tensor x = random_tensor(l.input_shape, rng, trial % 4 < 2 ? 0.0f : -1.0f, 1.0f);
    const Tensor r_out = random_tensor(l.output_shape, rng, -1.0f, 1.0f);
    expect_close_rel(alpha_beta_relevance(l, x, r_out, cfg), oracle::naive_rule(oracle::Rule::kAlphaBeta, l, x, r_out, cfg),
                     1e-5);
  }
}

TEST(ZBetaRule, HandExamples) {
  const BoundLayer one = linear_layer(Tensor({1, 1}, std::vector<float>{1}));
  EXPECT_NEAR(z_beta_relevance(one, Tensor::from({1}), Tensor::from({3.5f}), default_config())[0], 3.5f, 1e-6f);

  Rng rng(7);
  BoundLayer pos = random_conv(rng, {2, 2, 4, 4}, false);
  for (float& w : pos.weight.data()) w = std::fabs(w);
  RelevanceConfig cfg;
  cfg.input_low = {10.0f};
  const Tensor x(pos.input_shape, 10.0f);
  const Tensor r = z_beta_relevance(pos, x, random_tensor(pos.output_shape, rng), cfg);
  for (float v : r.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ZBetaRule, MatchesOracleOnRandomFirstLayers) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    SCOPED_TRACE("trial " + std::to_string(trial));
    const Shape in = random_input_shape(rng);
    const BoundLayer l = trial % 5 == 0 ? random_linear(rng, pick(rng, 2, 12), pick(rng, 1, 8), false)
                                        : random_conv(rng, in, trial % 2 == 0);
    RelevanceConfig cfg;
    if (trial % 3 == 0) {
      cfg.input_low.assign(l.input_shape[0], 0.0f);
      cfg.input_high.assign(l.input_shape[0], 0.0f);
      for (std::size_t c = 0; c < l.input_shape[0]; ++c) {
        cfg.input_low[c] = -1.0f - static_cast<float>(c);
        cfg.input_high[c] = 2.0f + static_cast<float>(c);
      }
    }
    const Tensor x = random_tensor(l.input_shape, rng, 0.0f, 1.0f);
    const Tensor r_out = random_tensor(l.output_shape, rng, 0.0f, 1.0f);
    expect_close_rel(z_beta_relevance(l, x, r_out, cfg), oracle::naive_rule(oracle::Rule::kZBeta, l, x, r_out, cfg),
                     1e-5);
  }
}

TEST(ZBetaRule, WarnsOutsideBox) {
  const BoundLayer one = linear_layer(Tensor({1, 2}, std::vector<float>{1, 1}));
  std::vector<std::string> warnings;
  z_beta_relevance(one, Tensor::from({-1, 300}), Tensor::from({1}), default_config(), &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find('2'), std::string::npos);
}

TEST(Explain, IdentityLinearExample) {
  const Architecture a = Architecture::create({2}, 2, {linear("fc", 2, 2)});
  WeightContainer c;
  c.insert("fc.weight", Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}));
  c.insert("fc.bias", Tensor(Shape{2}));
  const RelevanceMap m = explain(bind_weights(a, c), Tensor::from({0, 5}), default_config());
  EXPECT_EQ(m.target_class, 1u);
  EXPECT_EQ(m.target_logit, 5.0f);
  EXPECT_EQ(m.relevance.shape(), Shape{2});
  EXPECT_NEAR(m.relevance[0], 0.0f, 1e-6f);
  EXPECT_NEAR(m.relevance[1], 5.0f, 1e-5f);
}

TEST(Explain, ZeroLogitTargetGivesZeroMap) {
  const Architecture a = Architecture::create({2}, 2, {linear("fc", 2, 2)});
  WeightContainer c;
  c.insert("fc.weight", Tensor({2, 2}, std::vector<float>{1, 0, 0, 0}));
  c.insert("fc.bias", Tensor(Shape{2}));
  RelevanceConfig cfg;
  cfg.target = 1;
  const RelevanceMap m = explain(bind_weights(a, c), Tensor::from({3, 5}), cfg);
  EXPECT_EQ(m.target_logit, 0.0f);
  EXPECT_EQ(m.relevance, Tensor(Shape{2}));
  EXPECT_EQ(m.predicted_class, 0u);
}

TEST(Explain, TargetOutOfRangeAndBadConfig) {
  Rng rng(9);
  const Network net = random_zero_bias_net(rng, {1, 2, 4, 4}, 3);
  const Tensor x = random_tensor(net.input_shape(), rng, 0.0f, 255.0f);
  RelevanceConfig cfg;
  cfg.target = 3;
  EXPECT_THROW(explain(net, x, cfg), ConfigError);
  RelevanceConfig bad;
  bad.alpha = 2.0f;
  EXPECT_THROW(explain(net, x, bad), ConfigError);
  bad = {};
  bad.eps = 0.0f;
  EXPECT_THROW(explain(net, x, bad), ConfigError);
  bad = {};
  bad.input_low = {300.0f};
  EXPECT_THROW(explain(net, x, bad), ConfigError);
}

TEST(Explain, NegativeSeedWarns) {
  const Architecture a = Architecture::create({1}, 1, {linear("fc", 1, 1)});
  WeightContainer c;
  c.insert("fc.weight", Tensor({1, 1}, std::vector<float>{-1}));
  c.insert("fc.bias", Tensor(Shape{1}));
  const RelevanceMap m = explain(bind_weights(a, c), Tensor::from({2}), default_config());
  EXPECT_EQ(m.target_logit, -2.0f);
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_TRUE(all_finite(m.relevance));
}

TEST(Explain, ConservationOnZeroBiasNets) {
  Rng rng(10);
  int checked = 0;
  while (checked < 20) {
    const Shape in{pick(rng, 1, 3), 2 * pick(rng, 1, 2), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
    const Network net = random_zero_bias_net(rng, in, pick(rng, 2, 5));
    const Tensor x = random_tensor(in, rng, 0.0f, 255.0f);
    const RelevanceMap m = explain(net, x, default_config());
    if (!(m.target_logit > 0.0f)) continue;
    ++checked;
    EXPECT_NEAR(total(m.relevance), m.target_logit, 1e-3 * m.target_logit);

    const std::vector<double> audit = oracle::conservation_audit(net, x, default_config());
    ASSERT_EQ(audit.size(), net.layers().size() + 1);
    for (double s : audit) EXPECT_NEAR(s, m.target_logit, 1e-3 * m.target_logit);
    EXPECT_NEAR(audit.front(), total(m.relevance), 1e-3 * m.target_logit);
  }
}

TEST(Explain, ConservationOnDeeperZeroBiasNet) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 5; ++trial) {
    const Architecture a = two_stage_architecture({3, 4, 8, 8}, 3);
    const Network net = bind_weights(a, random_weights(a, rng, true));
    const Tensor x = random_tensor(a.input_shape(), rng, 0.0f, 255.0f);
    const RelevanceMap m = explain(net, x, default_config());
    if (!(m.target_logit > 0.0f)) continue;
    ++checked;
    EXPECT_NEAR(total(m.relevance), m.target_logit, 1e-3 * m.target_logit);
  }
  EXPECT_GT(checked, 0);
}

TEST(ConservationAudit, BiasedNetIsFiniteAndZeroInputIsZero) {
  Rng rng(12);
  const Architecture a = two_stage_architecture({2, 2, 4, 4}, 3);
  const Network biased = bind_weights(a, random_weights(a, rng, false));
  for (double s : oracle::conservation_audit(biased, random_tensor(a.input_shape(), rng, 0.0f, 255.0f),
                                             default_config()))
    EXPECT_TRUE(std::isfinite(s));

  const Network zero_bias = bind_weights(a, random_weights(a, rng, true));
  for (double s : oracle::conservation_audit(zero_bias, Tensor(a.input_shape()), default_config())) EXPECT_EQ(s, 0.0);
}

TEST(Explain, SeedScaleCovariance) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Architecture a = two_stage_architecture({2, 2, 8, 8}, 3);
    const Network net = bind_weights(a, random_weights(a, rng, trial % 2 == 0));
    const Tensor x = random_tensor(a.input_shape(), rng, 0.0f, 255.0f);
    const RelevanceMap base = explain(net, x, default_config());
    for (float c : {3.7f, 0.01f, 1024.0f}) {
      RelevanceConfig cfg;
      cfg.seed_scale = c;
      const RelevanceMap scaled = explain(net, x, cfg);
      double peak = 0.0;
      for (float v : base.relevance.data()) peak = std::max(peak, std::fabs(double(v)) * c);
      for (std::size_t i = 0; i < x.size(); ++i)
        ASSERT_NEAR(scaled.relevance[i], base.relevance[i] * c, 1e-5 * std::max(peak, 1e-30)) << "c=" << c;
    }
  }
}

TEST(Explain, FiniteForFiniteInputs) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Architecture a = two_stage_architecture({3, 2, 4, 4}, 4);
    const Network net = bind_weights(a, random_weights(a, rng, trial % 2 == 1));
    Tensor x = trial % 4 == 0 ? Tensor(a.input_shape()) : random_tensor(a.input_shape(), rng, 0.0f, 255.0f);
    RelevanceConfig cfg;
    if (trial % 3 == 0) cfg.alpha = 2.0f, cfg.beta = 1.0f;
    for (std::size_t k = 0; k < 4; ++k) {
      cfg.target = k;
      EXPECT_TRUE(all_finite(explain(net, x, cfg).relevance));
    }
  }
}

TEST(Explain, ConcurrentCallsAreDeterministic) {
  Rng rng(15);
  const Architecture a = two_stage_architecture({3, 4, 8, 8}, 4);
  const Network net = bind_weights(a, random_weights(a, rng, false));
  const Tensor x = random_tensor(a.input_shape(), rng, 0.0f, 255.0f);
  const Tensor expected = explain(net, x, default_config()).relevance;
  std::vector<Tensor> results(4);
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < results.size(); ++i)
      threads.emplace_back([&, i] { results[i] = explain(net, x, default_config()).relevance; });
  }
  for (const Tensor& r : results) EXPECT_EQ(r, expected);
}

TEST(RelevanceConfig, BoxFollowsNormalization) {
  const RelevanceConfig cfg = RelevanceConfig::for_normalization({{127.5f, 100.0f}, {64.0f, 50.0f}}, 2);
  ASSERT_EQ(cfg.input_low.size(), 2u);
  EXPECT_FLOAT_EQ(cfg.input_low[0], -127.5f / 64.0f);
  EXPECT_FLOAT_EQ(cfg.input_high[0], 127.5f / 64.0f);
  EXPECT_FLOAT_EQ(cfg.input_low[1], -2.0f);
  EXPECT_FLOAT_EQ(cfg.input_high[1], 3.1f);
  const RelevanceConfig ident = RelevanceConfig::for_normalization({}, 3);
  EXPECT_EQ(ident.input_low.front(), 0.0f);
  EXPECT_EQ(ident.input_high.front(), 255.0f);
}
