#include "xai/attribution/attribution.hpp"

#include "xai/error.hpp"

#include <algorithm>

namespace xai {

AttributionMap occlusion(const Model& model, const Tensor& x, Index cls, const OcclusionConfig& config) {
  if (x.shape() != model.input_shape || x.rank() != 3) throw ShapeError("occlusion input shape mismatch");
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Index side = std::min(h, w);
  const Index patch = config.patch > 0 ? config.patch : std::max<Index>(1, side / 10);
  const Index stride = config.stride > 0 ? config.stride : patch;
  if (patch > side) throw DataError("occlusion patch larger than the image");

  const double reference = logit(model, x, cls);
  RowMatrix total = RowMatrix::Zero(h, w);
  RowMatrix count = RowMatrix::Zero(h, w);
  Tensor occluded = x;
  // Patches start every `stride` pixels and are clipped at the border, so every
  // pixel is covered at least once.
  for (Index r0 = 0; r0 < h; r0 += stride) {
    for (Index c0 = 0; c0 < w; c0 += stride) {
      const Index rh = std::min(patch, h - r0), cw = std::min(patch, w - c0);
      for (Index r = r0; r < r0 + rh; ++r)
        for (Index q = c0; q < c0 + cw; ++q)
          for (Index ch = 0; ch < c; ++ch) occluded.at(r, q, ch) = config.baseline;
      const double drop = reference - logit(model, occluded, cls);
      total.block(r0, c0, rh, cw).array() += drop;
      count.block(r0, c0, rh, cw).array() += 1.0;
      for (Index r = r0; r < r0 + rh; ++r)
        for (Index q = c0; q < c0 + cw; ++q)
          for (Index ch = 0; ch < c; ++ch) occluded.at(r, q, ch) = x.at(r, q, ch);
    }
  }
  return AttributionMap::make(total.cwiseQuotient(count), Method::Occlusion, cls);
}

}  // namespace xai
