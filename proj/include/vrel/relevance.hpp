#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrel/network.hpp"
#include "vrel/tensor.hpp"

// Deep Taylor relevance propagation. Relevance replaces the gradient on the
// backward pass: the target logit is placed on its output neuron and every
// layer redistributes the relevance it receives onto its input.
//
//   relu        R_in = R_out
//   maxpool     R_in[k] = sum over windows j that selected k of R_out[j]
//   avgpool     R_in[k] = sum over windows j containing k of R_out[j] / N_j
//   conv/linear alpha-beta rule with z_ij = x_i w_ij:
//                 R_i = sum_j ( alpha z+_ij / (sum_i z+_ij + b+_j)
//                             - beta  z-_ij / (sum_i z-_ij + b-_j) ) R_j
//   first layer z-beta rule with input box [l, h]:
//                 R_i = sum_j (z_ij - l_i w+_ij - h_i w-_ij)
//                           / (sum_i' z_i'j - l_i' w+_i'j - h_i' w-_i'j) R_j
//
// Every denominator d is stabilized as d + sign(d) eps with sign(0) = +1.
// Biases never receive relevance, so sums are conserved only for zero biases.

namespace vrel {

struct RelevanceConfig {
  float alpha = 1.0f;
  float beta = 0.0f;
  float eps = 1e-9f;
  /// Input box for the first layer, one entry per input channel (axis 0) or
  /// a single entry for all channels.
  std::vector<float> input_low{0.0f};
  std::vector<float> input_high{255.0f};
  /// Explicit class to explain; the argmax logit when empty.
  std::optional<std::size_t> target;
  /// Multiplies the seed logit. Only useful for testing scale covariance.
  float seed_scale = 1.0f;

  /// Throws ConfigError unless alpha - beta == 1, alpha >= 1, beta >= 0,
  /// eps > 0 and low <= high.
  void validate() const;

  /// Box [0, 255] mapped through the input normalization.
  static RelevanceConfig for_normalization(const Normalization& norm, std::size_t channels);
};

struct RelevanceMap {
  Tensor relevance;
  std::size_t target_class = 0;
  float target_logit = 0.0f;
  /// Argmax of the forward logits, whatever the target was.
  std::size_t predicted_class = 0;
  /// Non-fatal conditions met while explaining (negative seed, input
  /// outside the declared box).
  std::vector<std::string> warnings;
};

Tensor relu_relevance(const Tensor& r_out);

Tensor maxpool_relevance(std::span<const std::uint32_t> mask, const Tensor& r_out, const Shape& input_shape);

Tensor avgpool_relevance(const Tensor& r_out, const WindowGeometry& g, const Shape& input_shape);

/// `layer` must be conv3d or linear; `input_act` is its cached forward input.
Tensor alpha_beta_relevance(const BoundLayer& layer, const Tensor& input_act, const Tensor& r_out,
                            const RelevanceConfig& cfg);

/// Input-layer rule. Inputs outside [low, high] are reported in `warnings`
/// (when given) and otherwise tolerated.
Tensor z_beta_relevance(const BoundLayer& layer, const Tensor& input, const Tensor& r_out, const RelevanceConfig& cfg,
                        std::vector<std::string>* warnings = nullptr);

/// Forward pass, seed at the target logit, then every layer rule in reverse.
/// The first conv3d/linear layer uses z-beta, the others alpha-beta.
RelevanceMap explain(const Network& net, const Tensor& input, const RelevanceConfig& cfg);

std::size_t argmax(const Tensor& logits);

}  // namespace vrel
