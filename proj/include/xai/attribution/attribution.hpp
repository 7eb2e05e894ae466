#pragma once

#include "xai/core/tensor.hpp"
#include "xai/predictor/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xai {

enum class Method { Saliency, GradientInput, IntegratedGradients, SmoothGrad, GradCam, Occlusion, Control };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);
/// The six model-based methods, in reporting order.
const std::vector<Method>& attribution_methods();

/// Single-channel H x W relevance map with raw (unnormalised) values.
struct AttributionMap {
  RowMatrix values;
  Method method = Method::Saliency;
  Index target_class = 0;
  double min = 0.0;
  double max = 0.0;

  static AttributionMap make(RowMatrix values, Method method, Index target_class);

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  /// Min-max scaled to [0, 1] for display; all zeros when max == min.
  RowMatrix normalized() const;
};

struct IntegratedGradientsConfig {
  int steps = 80;                 // m, grid points including both endpoints
  std::optional<Tensor> baseline;  // x0; zeros when unset
};

struct SmoothGradConfig {
  int samples = 80;
  double sigma = 0.2;
};

struct OcclusionConfig {
  Index patch = 0;   // 0 -> max(1, floor(side / 10))
  Index stride = 0;  // 0 -> same as patch
  double baseline = 0.0;
};

struct ControlConfig {
  int scales = 3;
};

struct MethodConfig {
  IntegratedGradientsConfig integrated_gradients;
  SmoothGradConfig smoothgrad;
  OcclusionConfig occlusion;
  ControlConfig control;
};

/// Per-pixel L2 norm over channels of an (H, W, C) tensor.
RowMatrix channel_l2(const Tensor& t);
/// Bilinear resampling with half-pixel centres and edge clamping; preserves constants.
RowMatrix bilinear_resize(const RowMatrix& src, Index rows, Index cols);

/// d logit[cls] / dx.
Tensor input_gradient(const Model& model, const Tensor& x, Index cls);

AttributionMap saliency(const Model& model, const Tensor& x, Index cls);
AttributionMap gradient_input(const Model& model, const Tensor& x, Index cls);

/// Signed (x - x0) * trapezoid-averaged path gradient, before channel reduction.
Tensor integrated_gradients_signed(const Model& model, const Tensor& x, Index cls,
                                   const IntegratedGradientsConfig& config);
AttributionMap integrated_gradients(const Model& model, const Tensor& x, Index cls,
                                    const IntegratedGradientsConfig& config = {});

AttributionMap smoothgrad(const Model& model, const Tensor& x, Index cls, const SmoothGradConfig& config,
                          std::uint64_t seed);
AttributionMap gradcam(const Model& model, const Tensor& x, Index cls);
AttributionMap occlusion(const Model& model, const Tensor& x, Index cls, const OcclusionConfig& config = {});

/// Model-independent bottom-up saliency (centre-surround on intensity and two
/// colour-opponent channels).
AttributionMap control_saliency(const Tensor& x, const ControlConfig& config = {});

AttributionMap explain(Method method, const Model& model, const Tensor& x, Index cls,
                       const MethodConfig& config = {}, std::uint64_t seed = 0);

// Export: raw container, 8-bit grayscale PNG, RGBA jet overlay PNG (alpha 0.5).
std::string encode_map(const AttributionMap& map);
AttributionMap decode_map(const std::string& bytes);
std::string map_to_png(const AttributionMap& map);
std::string map_to_overlay_png(const AttributionMap& map);

}  // namespace xai
