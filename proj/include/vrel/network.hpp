#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vrel/layers.hpp"
#include "vrel/tensor.hpp"
#include "vrel/weights.hpp"

namespace vrel {

enum class LayerKind { kConv3d, kLinear, kRelu, kMaxPool3d, kAvgPool3d, kBatchNorm, kFlatten };

std::string_view to_string(LayerKind kind);

struct LayerDescriptor {
  LayerKind kind = LayerKind::kRelu;
  /// Parameter prefix: "<name>.weight", "<name>.bias", and for batchnorm
  /// "<name>.running_mean", "<name>.running_var".
  std::string name;
  WindowGeometry geometry;
  /// conv3d channels, linear features, batchnorm feature count (out only).
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool has_bias = true;
  float bn_eps = 1e-5f;

  bool is_parametric() const { return kind == LayerKind::kConv3d || kind == LayerKind::kLinear; }
};

/// Per-channel affine input normalization: (x - mean) / std.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;

  bool is_identity() const;
};

Tensor normalize(const Tensor& clip, const Normalization& norm);

struct ParameterSpec {
  std::string name;
  Shape shape;
};

/// Layer list with a validated shape chain, no parameters.
class Architecture {
 public:
  /// Validates geometry and the shape chain; errors name the layer index.
  /// num_classes == 0 takes the class count from the final layer.
  static Architecture create(Shape input_shape, std::size_t num_classes, std::vector<LayerDescriptor> layers,
                             Normalization normalization = {});

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<LayerDescriptor>& layers() const { return layers_; }
  /// Output shape of every layer for the declared input.
  const std::vector<Shape>& output_shapes() const { return output_shapes_; }
  const Normalization& normalization() const { return normalization_; }

  /// Every tensor bind_weights will look up, with its required shape.
  std::vector<ParameterSpec> parameters() const;

 private:
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<LayerDescriptor> layers_;
  std::vector<Shape> output_shapes_;
  Normalization normalization_;
};

/// JSON layout:
/// {"input_shape": [C,T,H,W], "num_classes": K,
///  "normalization": {"mean": [...], "std": [...]},           (optional)
///  "layers": [{"type": "conv3d", "name": "conv1", "in_channels": 3, "out_channels": 64,
///              "kernel": [3,3,3], "stride": [1,1,1], "padding": [1,1,1], "bias": true},
///             {"type": "relu"}, {"type": "maxpool3d", "kernel": [1,2,2], "stride": [1,2,2]},
///             {"type": "avgpool3d", ...}, {"type": "batchnorm", "name": "bn1", "num_features": 64, "eps": 1e-5},
///             {"type": "flatten"},
///             {"type": "linear", "name": "fc6", "in_features": 8192, "out_features": 4096}]}
/// Pool stride defaults to the kernel, conv stride to 1, padding to 0.
Architecture load_architecture(std::string_view config_text);
Architecture load_architecture_file(const std::filesystem::path& path);

struct BatchNormParams {
  Tensor mean;
  Tensor var;
  Tensor gamma;
  Tensor beta;
  float eps = 1e-5f;
};

struct FoldedParams {
  Tensor weight;
  Tensor bias;
};

/// Folds an inference-mode batch norm into the preceding conv3d or linear
/// layer: w' = w * g, b' = (b - mean) * g + beta with g = gamma / sqrt(var + eps),
/// applied per output channel (axis 0 of the weight).
FoldedParams fold_batchnorm(const Tensor& weight, const Tensor& bias, const BatchNormParams& bn);

struct BoundLayer {
  LayerDescriptor desc;
  Tensor weight;             // conv3d / linear only
  std::vector<float> bias;   // empty when the layer has none
  Shape input_shape;
  Shape output_shape;
};

struct ActivationCache {
  /// Input of every layer, in layer order.
  std::vector<Tensor> inputs;
  /// Max-pool window selections; empty for other layers.
  std::vector<std::vector<std::uint32_t>> masks;
};

struct ForwardResult {
  Tensor logits;
  ActivationCache cache;
};

/// Bound, batch-norm-free network. Immutable; forward is reentrant.
class Network {
 public:
  Network(Shape input_shape, std::size_t num_classes, std::vector<BoundLayer> layers,
          Normalization normalization = {});

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<BoundLayer>& layers() const { return layers_; }
  const Normalization& normalization() const { return normalization_; }

  ForwardResult forward(const Tensor& input) const;
  Tensor logits(const Tensor& input) const;

 private:
  template <bool kCache>
  Tensor run(const Tensor& input, ActivationCache* cache) const;

  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<BoundLayer> layers_;
  Normalization normalization_;
};

/// Attaches parameters and folds every batchnorm into its predecessor.
/// Throws MissingTensorError or ShapeError (naming expected and found shapes).
Network bind_weights(const Architecture& arch, const WeightContainer& container);

}  // namespace vrel
