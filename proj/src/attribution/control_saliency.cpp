#include "xai/attribution/attribution.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <cmath>

namespace xai {
namespace {

// Separable Gaussian blur, edge pixels replicated.
RowMatrix gaussian_blur(const RowMatrix& src, double sigma) {
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  Vector kernel(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  kernel /= kernel.sum();

  const Index rows = src.rows(), cols = src.cols();
  RowMatrix tmp(rows, cols), out(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src(r, std::clamp<Index>(c + k, 0, cols - 1));
      tmp(r, c) = acc;
    }
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(std::clamp<Index>(r + k, 0, rows - 1), c);
      out(r, c) = acc;
    }
  return out;
}

// Sum over scales of rectified centre-surround differences, scaled to max 1.
// Maps with no contrast (max below 1e-12) are returned as zeros.
RowMatrix conspicuity(const RowMatrix& feature, int scales) {
  RowMatrix acc = RowMatrix::Zero(feature.rows(), feature.cols());
  for (int s = 0; s < scales; ++s) {
    const double center = std::ldexp(1.0, s);
    acc += (gaussian_blur(feature, center) - gaussian_blur(feature, 3.0 * center)).cwiseAbs();
  }
  const double peak = acc.maxCoeff();
  if (peak < 1e-12) return RowMatrix::Zero(feature.rows(), feature.cols());
  return acc / peak;
}

}  // namespace

AttributionMap control_saliency(const Tensor& x, const ControlConfig& config) {
  if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError("control saliency needs an (H, W, 3) image");
  if (config.scales < 1) throw DataError("control saliency needs at least one scale");
  const Index h = x.dim(0), w = x.dim(1);
  RowMatrix intensity(h, w), red_green(h, w), blue_yellow(h, w);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      const double R = x.at(r, c, 0), G = x.at(r, c, 1), B = x.at(r, c, 2);
      intensity(r, c) = (R + G + B) / 3.0;
      red_green(r, c) = R - G;
      blue_yellow(r, c) = B - 0.5 * (R + G);
    }
  RowMatrix map = conspicuity(intensity, config.scales) + conspicuity(red_green, config.scales) +
                  conspicuity(blue_yellow, config.scales);
  return AttributionMap::make(std::move(map), Method::Control, 0);
}

}  // namespace xai
