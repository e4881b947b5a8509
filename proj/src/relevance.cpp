#include "vrel/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vrel {

void RelevanceConfig::validate() const {
  if (!(std::fabs((alpha - beta) - 1.0f) <= 1e-6f)) {
    throw ConfigError("alpha - beta must equal 1 (alpha=" + std::to_string(alpha) + ", beta=" + std::to_string(beta) +
                      ")");
  }
  if (!(alpha >= 1.0f) || !(beta >= 0.0f)) throw ConfigError("alpha must be >= 1 and beta >= 0");
  if (!(eps > 0.0f)) throw ConfigError("stabilizer eps must be > 0");
  if (input_low.empty() || input_low.size() != input_high.size()) {
    throw ConfigError("input_low and input_high must be non-empty and of equal length");
  }
  for (std::size_t c = 0; c < input_low.size(); ++c) {
    if (!(input_low[c] <= input_high[c])) throw ConfigError("input_low must not exceed input_high");
  }
  if (!(std::isfinite(seed_scale))) throw ConfigError("seed_scale must be finite");
}

RelevanceConfig RelevanceConfig::for_normalization(const Normalization& norm, std::size_t channels) {
  RelevanceConfig cfg;
  cfg.input_low.assign(channels, 0.0f);
  cfg.input_high.assign(channels, 255.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    const float m = norm.mean.empty() ? 0.0f : norm.mean[norm.mean.size() == 1 ? 0 : c];
    const float s = norm.std.empty() ? 1.0f : norm.std[norm.std.size() == 1 ? 0 : c];
    cfg.input_low[c] = (0.0f - m) / s;
    cfg.input_high[c] = (255.0f - m) / s;
  }
  return cfg;
}

Tensor relu_relevance(const Tensor& r_out) { return r_out; }

Tensor maxpool_relevance(std::span<const std::uint32_t> mask, const Tensor& r_out, const Shape& input_shape) {
  return maxpool3d_scatter(r_out, mask, input_shape);
}

Tensor avgpool_relevance(const Tensor& r_out, const WindowGeometry& g, const Shape& input_shape) {
  return avgpool3d_transpose(r_out, g, input_shape);
}

namespace {

// The conv3d or linear map of a layer, applied with an arbitrary weight.
struct LinearMap {
  const BoundLayer& layer;

  Tensor apply(const Tensor& x, const Tensor& w, std::span<const float> bias = {}) const {
    if (layer.desc.kind == LayerKind::kConv3d) return conv3d_forward(x, w, bias, layer.desc.geometry);
    return linear_forward(x, w, bias);
  }

  Tensor transpose(const Tensor& s, const Tensor& w) const {
    if (layer.desc.kind == LayerKind::kConv3d) return conv3d_transpose(s, w, layer.desc.geometry, layer.input_shape);
    return linear_transpose(s, w);
  }
};

void check_rule_args(const BoundLayer& layer, const Tensor& input, const Tensor& r_out, const char* rule) {
  if (!layer.desc.is_parametric()) {
    throw ConfigError(std::string(rule) + " applies to conv3d and linear layers, not " +
                      std::string(to_string(layer.desc.kind)));
  }
  if (input.shape() != layer.input_shape) {
    throw ShapeError(std::string(rule) + ": cached activation " + shape_to_string(input.shape()) +
                     " does not match layer input " + shape_to_string(layer.input_shape));
  }
  if (r_out.shape() != layer.output_shape) {
    throw ShapeError(std::string(rule) + ": relevance " + shape_to_string(r_out.shape()) +
                     " does not match layer output " + shape_to_string(layer.output_shape));
  }
}

bool any_negative(const Tensor& t) {
  return std::any_of(t.data().begin(), t.data().end(), [](float v) { return v < 0.0f; });
}

std::vector<float> sign_part(std::span<const float> v, bool positive) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = positive ? std::max(v[i], 0.0f) : std::min(v[i], 0.0f);
  return out;
}

Tensor scaled(const Tensor& t, float factor) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] * factor;
  return out;
}

// Tensor shaped like `like` whose axis-0 slices hold bounds[c] (or bounds[0]).
Tensor broadcast_bounds(const std::vector<float>& bounds, const Shape& like) {
  const std::size_t channels = like[0];
  if (bounds.size() != 1 && bounds.size() != channels) {
    throw ConfigError("input bounds have " + std::to_string(bounds.size()) + " entries for " +
                      std::to_string(channels) + " input channels");
  }
  Tensor out(like);
  const std::size_t plane = out.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                bounds[bounds.size() == 1 ? 0 : c]);
  }
  return out;
}

}  // namespace

Tensor alpha_beta_relevance(const BoundLayer& layer, const Tensor& input_act, const Tensor& r_out,
                            const RelevanceConfig& cfg) {
  check_rule_args(layer, input_act, r_out, "alpha-beta rule");
  const LinearMap map{layer};
  const SignParts x = split_signs(input_act);
  const SignParts w = split_signs(layer.weight);
  const bool has_negative_inputs = any_negative(input_act);

  // (x w)+ = x+ w+ + x- w-   and   (x w)- = x+ w- + x- w+
  auto sign_sum = [&](const Tensor& w_same, const Tensor& w_opposite, bool positive) {
    const std::vector<float> b = layer.bias.empty() ? std::vector<float>{} : sign_part(layer.bias, positive);
    Tensor z = map.apply(x.positive, w_same, b);
    if (has_negative_inputs) z = add(z, map.apply(x.negative, w_opposite));
    return z;
  };
  // x+ * W_same^T s + x- * W_opposite^T s
  auto redistribute = [&](const Tensor& s, const Tensor& w_same, const Tensor& w_opposite) {
    Tensor r = mul(x.positive, map.transpose(s, w_same));
    if (has_negative_inputs) r = add(r, mul(x.negative, map.transpose(s, w_opposite)));
    return r;
  };

  const Tensor z_pos = sign_sum(w.positive, w.negative, true);
  const Tensor s_pos = div_stabilized(scaled(r_out, cfg.alpha), z_pos, cfg.eps);
  Tensor r_in = redistribute(s_pos, w.positive, w.negative);

  if (cfg.beta != 0.0f) {
    const Tensor z_neg = sign_sum(w.negative, w.positive, false);
    const Tensor s_neg = div_stabilized(scaled(r_out, cfg.beta), z_neg, cfg.eps);
    r_in = sub(r_in, redistribute(s_neg, w.negative, w.positive));
  }
  return r_in;
}

Tensor z_beta_relevance(const BoundLayer& layer, const Tensor& input, const Tensor& r_out, const RelevanceConfig& cfg,
                        std::vector<std::string>* warnings) {
  check_rule_args(layer, input, r_out, "z-beta rule");
  const LinearMap map{layer};
  const Tensor low = broadcast_bounds(cfg.input_low, input.shape());
  const Tensor high = broadcast_bounds(cfg.input_high, input.shape());

  if (warnings) {
    std::size_t outside = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
      if (input[i] < low[i] || input[i] > high[i]) ++outside;
    }
    if (outside) {
      std::ostringstream os;
      os << outside << " input values lie outside the z-beta box [low, high]";
      warnings->push_back(os.str());
    }
  }

  const SignParts w = split_signs(layer.weight);
  const Tensor z = sub(sub(map.apply(input, layer.weight), map.apply(low, w.positive)), map.apply(high, w.negative));
  const Tensor s = div_stabilized(r_out, z, cfg.eps);
  return sub(sub(mul(input, map.transpose(s, layer.weight)), mul(low, map.transpose(s, w.positive))),
             mul(high, map.transpose(s, w.negative)));
}

std::size_t argmax(const Tensor& logits) {
  const auto d = logits.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

RelevanceMap explain(const Network& net, const Tensor& input, const RelevanceConfig& cfg) {
  cfg.validate();
  ForwardResult fwd = net.forward(input);

  RelevanceMap result;
  result.predicted_class = argmax(fwd.logits);
  result.target_class = cfg.target.value_or(result.predicted_class);
  if (result.target_class >= net.num_classes()) {
    throw ConfigError("target class " + std::to_string(result.target_class) + " out of range for " +
                      std::to_string(net.num_classes()) + " classes");
  }
  result.target_logit = fwd.logits[result.target_class];
  if (result.target_logit < 0.0f) {
    result.warnings.push_back("target logit " + std::to_string(result.target_logit) +
                              " is negative; relevance is seeded with a negative value");
  }

  Tensor r(fwd.logits.shape());
  r[result.target_class] = result.target_logit * cfg.seed_scale;

  const auto& layers = net.layers();
  const auto first_param = std::find_if(layers.begin(), layers.end(),
                                        [](const BoundLayer& l) { return l.desc.is_parametric(); }) -
                           layers.begin();

  for (std::size_t k = layers.size(); k-- > 0;) {
    const BoundLayer& layer = layers[k];
    const Tensor& act = fwd.cache.inputs[k];
    switch (layer.desc.kind) {
      case LayerKind::kRelu: r = relu_relevance(r); break;
      case LayerKind::kMaxPool3d: r = maxpool_relevance(fwd.cache.masks[k], r, layer.input_shape); break;
      case LayerKind::kAvgPool3d: r = avgpool_relevance(r, layer.desc.geometry, layer.input_shape); break;
      case LayerKind::kFlatten: r = std::move(r).reshaped(layer.input_shape); break;
      case LayerKind::kConv3d:
      case LayerKind::kLinear:
        r = static_cast<std::ptrdiff_t>(k) == first_param ? z_beta_relevance(layer, act, r, cfg, &result.warnings)
                                                         : alpha_beta_relevance(layer, act, r, cfg);
        break;
      case LayerKind::kBatchNorm: throw ConfigError("unfolded batchnorm in relevance pass");
    }
  }
  result.relevance = std::move(r);
  return result;
}

}  // namespace vrel
