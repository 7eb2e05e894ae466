#pragma once

#include "xai/core/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace xai {

/// The black-box classifier: a graph whose output is a logit vector, the
/// expected input shape and an optional handle to the last convolutional
/// feature maps (used by Grad-CAM and the perceptual backend).
struct Model {
  std::string architecture;
  Graph graph;
  Shape input_shape;
  Index num_classes = 2;
  std::string feature_layer;  // empty when the model has no spatial feature map
  std::uint64_t weights_version = 1;

  bool has_feature_layer() const { return !feature_layer.empty(); }
  Index feature_id() const;
};

struct Prediction {
  Vector logits;
  Vector probabilities;
  Index predicted_class = 0;
  Trace trace;
};

/// Pure function of (weights, x). Throws ShapeError if x does not match the
/// model's input shape.
Prediction predict(const Model& model, const Tensor& x);

/// Logit of `target` only; cheaper than predict() for perturbation sweeps.
double logit(const Model& model, const Tensor& x, Index target);
double probability(const Model& model, const Tensor& x, Index target);

inline constexpr Index kImageSide = 64;
inline constexpr Index kImageChannels = 3;

/// conv(3->8)/relu/pool -> conv(8->16)/relu/pool -> conv(16->32)/relu -> gap -> dense(32->2),
/// He-initialised from `seed`. Grad-CAM reads "relu3" (12x12x32).
Model make_planted_bias_cnn(std::uint64_t seed);

/// Single dense layer on the flattened input: logits = weights * vec(x) + bias.
/// weights: (classes, H*W*C). No feature layer.
Model make_linear_model(const Tensor& weights, const Vector& bias, Shape input_shape);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::string encode_model(const Model& model);
Model decode_model(const std::string& bytes);

}  // namespace xai
