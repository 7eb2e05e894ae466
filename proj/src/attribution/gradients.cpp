#include "xai/attribution/attribution.hpp"

#include "xai/error.hpp"

#include <random>

namespace xai {
namespace {

void check_input(const Model& model, const Tensor& x, Index cls) {
  if (x.shape() != model.input_shape) {
    throw ShapeError("model expects input " + shape_string(model.input_shape) + ", got " + shape_string(x.shape()));
  }
  if (x.rank() != 3) throw ShapeError("attribution needs an (H, W, C) image");
  if (cls < 0 || cls >= model.num_classes) throw DataError("target class " + std::to_string(cls) + " out of range");
}

}  // namespace

Tensor input_gradient(const Model& model, const Tensor& x, Index cls) {
  check_input(model, x, cls);
  return grad_wrt(model.graph, x, cls, 0);
}

AttributionMap saliency(const Model& model, const Tensor& x, Index cls) {
  return AttributionMap::make(channel_l2(input_gradient(model, x, cls)), Method::Saliency, cls);
}

AttributionMap gradient_input(const Model& model, const Tensor& x, Index cls) {
  Tensor g = input_gradient(model, x, cls);
  g.data().array() *= x.data().array();
  return AttributionMap::make(channel_l2(g), Method::GradientInput, cls);
}

Tensor integrated_gradients_signed(const Model& model, const Tensor& x, Index cls,
                                   const IntegratedGradientsConfig& config) {
  check_input(model, x, cls);
  if (config.steps < 2) throw DataError("integrated gradients needs at least 2 grid points");
  const Tensor x0 = config.baseline.value_or(Tensor(x.shape()));
  if (x0.shape() != x.shape()) throw ShapeError("integrated gradients baseline shape mismatch");

  const Vector delta = x.data() - x0.data();
  Vector avg = Vector::Zero(x.size());
  const int m = config.steps;
  for (int i = 0; i < m; ++i) {
    const double alpha = static_cast<double>(i) / static_cast<double>(m - 1);
    Tensor point(x.shape(), x0.data() + alpha * delta);
    const double weight = (i == 0 || i == m - 1) ? 0.5 : 1.0;
    avg += weight * grad_wrt(model.graph, point, cls, 0).data();
  }
  avg /= static_cast<double>(m - 1);
  return Tensor(x.shape(), delta.cwiseProduct(avg));
}

AttributionMap integrated_gradients(const Model& model, const Tensor& x, Index cls,
                                    const IntegratedGradientsConfig& config) {
  return AttributionMap::make(channel_l2(integrated_gradients_signed(model, x, cls, config)),
                              Method::IntegratedGradients, cls);
}

AttributionMap smoothgrad(const Model& model, const Tensor& x, Index cls, const SmoothGradConfig& config,
                          std::uint64_t seed) {
  check_input(model, x, cls);
  if (config.samples < 1) throw DataError("smoothgrad needs at least one sample");
  if (!(config.sigma >= 0.0)) throw DataError("smoothgrad sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector sum = Vector::Zero(x.size());
  Tensor noisy(x.shape());
  for (int s = 0; s < config.samples; ++s) {
    for (Index i = 0; i < x.size(); ++i) noisy[i] = x[i] + config.sigma * normal(rng);
    sum += grad_wrt(model.graph, noisy, cls, 0).data();
  }
  Tensor mean(x.shape(), sum / static_cast<double>(config.samples));
  return AttributionMap::make(channel_l2(mean), Method::SmoothGrad, cls);
}

AttributionMap gradcam(const Model& model, const Tensor& x, Index cls) {
  check_input(model, x, cls);
  const Index feature = model.feature_id();
  Trace trace = forward(model.graph, x);
  const Tensor& a = trace.value(feature);
  if (a.rank() != 3 || a.dim(0) < 2 || a.dim(1) < 2) {
    throw DataError("layer '" + model.feature_layer + "' is not a spatial feature map");
  }
  const Tensor da = grad_wrt(model.graph, trace, cls, feature);
  const Index hw = a.dim(0) * a.dim(1), k = a.dim(2);
  const Vector alpha = da.matrix(hw, k).colwise().mean().transpose();
  RowMatrix cam(a.dim(0), a.dim(1));
  Eigen::Map<Vector>(cam.data(), hw) = (a.matrix(hw, k) * alpha).cwiseMax(0.0);
  return AttributionMap::make(bilinear_resize(cam, x.dim(0), x.dim(1)), Method::GradCam, cls);
}

}  // namespace xai
