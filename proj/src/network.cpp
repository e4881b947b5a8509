#include "vrel/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace vrel {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv3d: return "conv3d";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool3d: return "maxpool3d";
    case LayerKind::kAvgPool3d: return "avgpool3d";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

bool Normalization::is_identity() const {
  for (float m : mean) {
    if (m != 0.0f) return false;
  }
  for (float s : std) {
    if (s != 1.0f) return false;
  }
  return true;
}

Tensor normalize(const Tensor& clip, const Normalization& norm) {
  if (norm.mean.empty() && norm.std.empty()) return clip;
  const std::size_t channels = clip.extent(0);
  auto per_channel = [&](const std::vector<float>& v, float fallback, std::size_t c) {
    if (v.empty()) return fallback;
    if (v.size() == 1) return v[0];
    if (v.size() != channels) {
      throw ConfigError("normalization has " + std::to_string(v.size()) + " entries for " +
                        std::to_string(channels) + " channels");
    }
    return v[c];
  };
  Tensor out(clip.shape());
  const std::size_t plane = clip.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const float m = per_channel(norm.mean, 0.0f, c);
    const float s = per_channel(norm.std, 1.0f, c);
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) out[i] = (clip[i] - m) / s;
  }
  return out;
}

namespace {

std::string layer_label(std::size_t index, const LayerDescriptor& d) {
  std::string label = "layer " + std::to_string(index) + " (" + std::string(to_string(d.kind));
  if (!d.name.empty()) label += " '" + d.name + "'";
  return label + ")";
}

void check_geometry(const WindowGeometry& g) {
  const Extent3* parts[] = {&g.kernel, &g.stride};
  for (const Extent3* e : parts) {
    if (e->t == 0 || e->h == 0 || e->w == 0) throw ShapeError("kernel and stride extents must be >= 1");
  }
}

Shape layer_output_shape(const LayerDescriptor& d, const Shape& in) {
  switch (d.kind) {
    case LayerKind::kConv3d:
      check_geometry(d.geometry);
      if (in.size() != 4) throw ShapeError("expects a C x T x H x W input, got " + shape_to_string(in));
      if (in[0] != d.in_channels) {
        throw ShapeError("expects " + std::to_string(d.in_channels) + " input channels, got " + std::to_string(in[0]));
      }
      if (d.out_channels == 0) throw ShapeError("out_channels must be >= 1");
      return window_output_shape(in, d.out_channels, d.geometry);
    case LayerKind::kMaxPool3d:
    case LayerKind::kAvgPool3d:
      check_geometry(d.geometry);
      if (in.size() != 4) throw ShapeError("expects a C x T x H x W input, got " + shape_to_string(in));
      if (2 * d.geometry.padding.t > d.geometry.kernel.t || 2 * d.geometry.padding.h > d.geometry.kernel.h ||
          2 * d.geometry.padding.w > d.geometry.kernel.w) {
        throw ShapeError("pool padding must be at most half the kernel extent");
      }
      return window_output_shape(in, in[0], d.geometry);
    case LayerKind::kRelu:
      return in;
    case LayerKind::kBatchNorm:
      if (in[0] != d.out_channels) {
        throw ShapeError("batchnorm over " + std::to_string(d.out_channels) + " features, input has " +
                         std::to_string(in[0]));
      }
      return in;
    case LayerKind::kFlatten:
      return {shape_volume(in)};
    case LayerKind::kLinear:
      if (in.size() != 1) throw ShapeError("expects a flat input, got " + shape_to_string(in) + " (missing flatten?)");
      if (in[0] != d.in_channels) {
        throw ShapeError("expects " + std::to_string(d.in_channels) + " input features, got " + std::to_string(in[0]));
      }
      if (d.out_channels == 0) throw ShapeError("out_features must be >= 1");
      return {d.out_channels};
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace

Architecture Architecture::create(Shape input_shape, std::size_t num_classes, std::vector<LayerDescriptor> layers,
                                  Normalization normalization) {
  if (input_shape.empty() || shape_volume(input_shape) == 0) throw ShapeError("input shape must be non-empty");
  if (layers.empty()) throw ConfigError("architecture has no layers");
  Architecture arch;
  arch.input_shape_ = std::move(input_shape);
  arch.num_classes_ = num_classes;
  arch.normalization_ = std::move(normalization);
  Shape current = arch.input_shape_;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      current = layer_output_shape(layers[i], current);
    } catch (const ShapeError& e) {
      throw ShapeError(layer_label(i, layers[i]) + ": " + e.what());
    }
    arch.output_shapes_.push_back(current);
  }
  if (arch.num_classes_ == 0 && current.size() == 1) arch.num_classes_ = current[0];
  if (current.size() != 1 || current[0] != arch.num_classes_) {
    throw ShapeError("network output " + shape_to_string(current) + " does not match num_classes " +
                     std::to_string(arch.num_classes_));
  }
  arch.layers_ = std::move(layers);
  return arch;
}

std::vector<ParameterSpec> Architecture::parameters() const {
  std::vector<ParameterSpec> specs;
  for (const LayerDescriptor& d : layers_) {
    switch (d.kind) {
      case LayerKind::kConv3d:
        specs.push_back({d.name + ".weight",
                         {d.out_channels, d.in_channels, d.geometry.kernel.t, d.geometry.kernel.h, d.geometry.kernel.w}});
        if (d.has_bias) specs.push_back({d.name + ".bias", {d.out_channels}});
        break;
      case LayerKind::kLinear:
        specs.push_back({d.name + ".weight", {d.out_channels, d.in_channels}});
        if (d.has_bias) specs.push_back({d.name + ".bias", {d.out_channels}});
        break;
      case LayerKind::kBatchNorm:
        for (const char* suffix : {".running_mean", ".running_var", ".weight", ".bias"}) {
          specs.push_back({d.name + suffix, {d.out_channels}});
        }
        break;
      default:
        break;
    }
  }
  return specs;
}

namespace {

using nlohmann::json;

std::size_t read_count(const json& j, const char* key, std::size_t index) {
  if (!j.contains(key)) throw ParseError("layer " + std::to_string(index) + ": missing '" + key + "'");
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ParseError("layer " + std::to_string(index) + ": '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

Extent3 read_extent(const json& j, const char* key, const Extent3& fallback, std::size_t index) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  auto component = [&](const json& x) {
    if (!x.is_number_integer() || x.get<long long>() < 0) {
      throw ParseError("layer " + std::to_string(index) + ": '" + key + "' entries must be non-negative integers");
    }
    return x.get<std::size_t>();
  };
  if (v.is_number()) {
    const std::size_t s = component(v);
    return {s, s, s};
  }
  if (!v.is_array() || v.size() != 3) {
    throw ParseError("layer " + std::to_string(index) + ": '" + key + "' must be an integer or [t, h, w]");
  }
  return {component(v[0]), component(v[1]), component(v[2])};
}

std::vector<float> read_floats(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  std::vector<float> out;
  for (const json& v : j.at(key)) {
    if (!v.is_number()) throw ParseError(std::string("'") + key + "' must hold numbers");
    out.push_back(v.get<float>());
  }
  return out;
}

LayerDescriptor parse_layer(const json& j, std::size_t index) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ParseError("layer " + std::to_string(index) + ": expected an object with a string 'type'");
  }
  const std::string type = j.at("type").get<std::string>();
  LayerDescriptor d;
  if (j.contains("name")) d.name = j.at("name").get<std::string>();
  auto require_name = [&] {
    if (d.name.empty()) throw ParseError("layer " + std::to_string(index) + ": " + type + " needs a 'name'");
  };

  if (type == "conv3d") {
    d.kind = LayerKind::kConv3d;
    require_name();
    d.in_channels = read_count(j, "in_channels", index);
    d.out_channels = read_count(j, "out_channels", index);
    d.geometry.kernel = read_extent(j, "kernel", {0, 0, 0}, index);
    if (!j.contains("kernel")) throw ParseError("layer " + std::to_string(index) + ": missing 'kernel'");
    d.geometry.stride = read_extent(j, "stride", {1, 1, 1}, index);
    d.geometry.padding = read_extent(j, "padding", {0, 0, 0}, index);
    d.has_bias = j.value("bias", true);
  } else if (type == "maxpool3d" || type == "avgpool3d") {
    d.kind = type == "maxpool3d" ? LayerKind::kMaxPool3d : LayerKind::kAvgPool3d;
    if (!j.contains("kernel")) throw ParseError("layer " + std::to_string(index) + ": missing 'kernel'");
    d.geometry.kernel = read_extent(j, "kernel", {0, 0, 0}, index);
    d.geometry.stride = read_extent(j, "stride", d.geometry.kernel, index);
    d.geometry.padding = read_extent(j, "padding", {0, 0, 0}, index);
  } else if (type == "linear") {
    d.kind = LayerKind::kLinear;
    require_name();
    d.in_channels = read_count(j, "in_features", index);
    d.out_channels = read_count(j, "out_features", index);
    d.has_bias = j.value("bias", true);
  } else if (type == "relu") {
    d.kind = LayerKind::kRelu;
  } else if (type == "flatten") {
    d.kind = LayerKind::kFlatten;
  } else if (type == "batchnorm") {
    d.kind = LayerKind::kBatchNorm;
    require_name();
    d.out_channels = read_count(j, "num_features", index);
    d.bn_eps = j.value("eps", 1e-5f);
    if (!(d.bn_eps >= 0.0f)) throw ParseError("layer " + std::to_string(index) + ": batchnorm eps must be >= 0");
  } else {
    throw ParseError("layer " + std::to_string(index) + ": unknown layer type '" + type + "'");
  }
  return d;
}

}  // namespace

Architecture load_architecture(std::string_view config_text) {
  json doc;
  try {
    doc = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("architecture config is not valid JSON: ") + e.what());
  }
  try {
    if (!doc.is_object()) throw ParseError("architecture config must be a JSON object");
    if (!doc.contains("layers") || !doc.at("layers").is_array()) throw ParseError("missing 'layers' array");
    if (!doc.contains("input_shape") || !doc.at("input_shape").is_array()) throw ParseError("missing 'input_shape'");
    Shape input_shape;
    for (const json& e : doc.at("input_shape")) {
      if (!e.is_number_integer() || e.get<long long>() < 1) throw ParseError("input_shape extents must be >= 1");
      input_shape.push_back(e.get<std::size_t>());
    }
    std::vector<LayerDescriptor> layers;
    for (std::size_t i = 0; i < doc.at("layers").size(); ++i) layers.push_back(parse_layer(doc.at("layers")[i], i));

    std::size_t num_classes = 0;
    if (doc.contains("num_classes")) {
      if (!doc.at("num_classes").is_number_integer() || doc.at("num_classes").get<long long>() < 1) {
        throw ParseError("num_classes must be a positive integer");
      }
      num_classes = doc.at("num_classes").get<std::size_t>();
    }
    Normalization norm;
    if (doc.contains("normalization")) {
      norm.mean = read_floats(doc.at("normalization"), "mean");
      norm.std = read_floats(doc.at("normalization"), "std");
    }
    return Architecture::create(std::move(input_shape), num_classes, std::move(layers), std::move(norm));
  } catch (const json::exception& e) {
    throw ParseError(std::string("architecture config: ") + e.what());
  }
}

Architecture load_architecture_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open architecture config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_architecture(ss.str());
}

FoldedParams fold_batchnorm(const Tensor& weight, const Tensor& bias, const BatchNormParams& bn) {
  const std::size_t channels = weight.extent(0);
  for (const Tensor* t : {&bias, &bn.mean, &bn.var, &bn.gamma, &bn.beta}) {
    if (t->size() != channels) {
      throw ShapeError("batchnorm folding: parameter of " + std::to_string(t->size()) + " entries for " +
                       std::to_string(channels) + " output channels");
    }
  }
  FoldedParams out{Tensor(weight.shape()), Tensor(Shape{channels})};
  const std::size_t per_channel = weight.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(bn.var[c] >= 0.0f)) throw ConfigError("batchnorm running variance must be >= 0");
    const double scale = static_cast<double>(bn.gamma[c]) / std::sqrt(static_cast<double>(bn.var[c]) + bn.eps);
    for (std::size_t i = c * per_channel; i < (c + 1) * per_channel; ++i) {
      out.weight[i] = static_cast<float>(weight[i] * scale);
    }
    out.bias[c] = static_cast<float>((static_cast<double>(bias[c]) - bn.mean[c]) * scale + bn.beta[c]);
  }
  return out;
}

namespace {

const Tensor& fetch(const WeightContainer& container, const std::string& name, const Shape& expected) {
  const Tensor& t = container.at(name);
  if (t.shape() != expected) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                     shape_to_string(expected));
  }
  return t;
}

}  // namespace

Network bind_weights(const Architecture& arch, const WeightContainer& container) {
  std::vector<BoundLayer> bound;
  Shape current = arch.input_shape();
  for (std::size_t i = 0; i < arch.layers().size(); ++i) {
    const LayerDescriptor& d = arch.layers()[i];
    const Shape& out_shape = arch.output_shapes()[i];
    if (d.kind == LayerKind::kBatchNorm) {
      if (bound.empty() || !bound.back().desc.is_parametric() || bound.back().output_shape != current) {
        throw ConfigError("layer " + std::to_string(i) + ": batchnorm must directly follow a conv3d or linear layer");
      }
      const Shape feat{d.out_channels};
      BatchNormParams bn{fetch(container, d.name + ".running_mean", feat), fetch(container, d.name + ".running_var", feat),
                         fetch(container, d.name + ".weight", feat), fetch(container, d.name + ".bias", feat),
                         d.bn_eps};
      BoundLayer& prev = bound.back();
      Tensor prev_bias = prev.bias.empty() ? Tensor(feat) : Tensor(feat, prev.bias);
      FoldedParams folded = fold_batchnorm(prev.weight, prev_bias, bn);
      prev.weight = std::move(folded.weight);
      prev.bias = folded.bias.values();
      prev.desc.has_bias = true;
      continue;
    }
    BoundLayer layer{d, Tensor(), {}, current, out_shape};
    if (d.is_parametric()) {
      Shape wshape = d.kind == LayerKind::kConv3d
                         ? Shape{d.out_channels, d.in_channels, d.geometry.kernel.t, d.geometry.kernel.h,
                                 d.geometry.kernel.w}
                         : Shape{d.out_channels, d.in_channels};
      layer.weight = fetch(container, d.name + ".weight", wshape);
      if (d.has_bias) layer.bias = fetch(container, d.name + ".bias", Shape{d.out_channels}).values();
    }
    bound.push_back(std::move(layer));
    current = out_shape;
  }
  return Network(arch.input_shape(), arch.num_classes(), std::move(bound), arch.normalization());
}

Network::Network(Shape input_shape, std::size_t num_classes, std::vector<BoundLayer> layers,
                 Normalization normalization)
    : input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      layers_(std::move(layers)),
      normalization_(std::move(normalization)) {
  if (layers_.empty()) throw ConfigError("network has no layers");
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    BoundLayer& l = layers_[i];
    if (l.desc.kind == LayerKind::kBatchNorm) {
      throw ConfigError(layer_label(i, l.desc) + ": bound networks cannot contain batchnorm");
    }
    try {
      l.input_shape = current;
      l.output_shape = layer_output_shape(l.desc, current);
    } catch (const ShapeError& e) {
      throw ShapeError(layer_label(i, l.desc) + ": " + e.what());
    }
    current = l.output_shape;
  }
  if (current.size() != 1 || current[0] != num_classes_) {
    throw ShapeError("network output " + shape_to_string(current) + " does not match num_classes " +
                     std::to_string(num_classes_));
  }
}

template <bool kCache>
Tensor Network::run(const Tensor& input, ActivationCache* cache) const {
  if (input.shape() != input_shape_) {
    throw ShapeError("layer 0: input shape " + shape_to_string(input.shape()) + " does not match declared " +
                     shape_to_string(input_shape_));
  }
  if constexpr (kCache) {
    cache->inputs.clear();
    cache->masks.assign(layers_.size(), {});
    cache->inputs.reserve(layers_.size());
  }
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const BoundLayer& l = layers_[i];
    Tensor y;
    try {
      switch (l.desc.kind) {
        case LayerKind::kConv3d: y = conv3d_forward(x, l.weight, l.bias, l.desc.geometry); break;
        case LayerKind::kLinear: y = linear_forward(x, l.weight, l.bias); break;
        case LayerKind::kRelu: y = relu_forward(x); break;
        case LayerKind::kMaxPool3d: {
          MaxPoolResult r = maxpool3d_forward(x, l.desc.geometry);
          y = std::move(r.output);
          if constexpr (kCache) cache->masks[i] = std::move(r.argmax);
          break;
        }
        case LayerKind::kAvgPool3d: y = avgpool3d_forward(x, l.desc.geometry); break;
        case LayerKind::kFlatten: y = x.reshaped(Shape{x.size()}); break;
        case LayerKind::kBatchNorm: throw ConfigError("unfolded batchnorm");
      }
    } catch (const ShapeError& e) {
      throw ShapeError(layer_label(i, l.desc) + ": " + e.what());
    }
    if constexpr (kCache) cache->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

ForwardResult Network::forward(const Tensor& input) const {
  ForwardResult result;
  result.logits = run<true>(input, &result.cache);
  return result;
}

Tensor Network::logits(const Tensor& input) const { return run<false>(input, nullptr); }

}  // namespace vrel
