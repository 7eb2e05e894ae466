#include "xai/metrics/metrics.hpp"

#include "xai/error.hpp"
#include "xai/io/image_codec.hpp"

#include <algorithm>

namespace xai {

double complexity(const RowMatrix& map) {
  return complexity(AttributionMap::make(map, Method::Saliency, 0));
}

double complexity(const AttributionMap& map) {
  if (map.values.size() == 0) throw DataError("cannot measure the complexity of an empty map");
  const RowMatrix unit = map.normalized();
  const Tensor gray({map.rows(), map.cols(), 1}, Vector(Eigen::Map<const Vector>(unit.data(), unit.size())));
  const std::string jpeg = io::encode_jpeg_gray(io::to_image8(gray), kComplexityQuality);
  return static_cast<double>(jpeg.size()) / static_cast<double>(unit.size());
}

RowMatrix box_filter(const RowMatrix& map, Index side) {
  const Index h = map.rows(), w = map.cols();
  RowMatrix sat = RowMatrix::Zero(h + 1, w + 1);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) sat(r + 1, c + 1) = map(r, c) + sat(r, c + 1) + sat(r + 1, c) - sat(r, c);
  RowMatrix out(h, w);
  const Index before = side / 2;
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      const Index r0 = std::max<Index>(0, r - before), r1 = std::min<Index>(h, r - before + side);
      const Index c0 = std::max<Index>(0, c - before), c1 = std::min<Index>(w, c - before + side);
      out(r, c) = sat(r1, c1) - sat(r0, c1) - sat(r1, c0) + sat(r0, c0);
    }
  return out;
}

Patch extract_patch(const Tensor& x, const RowMatrix& map, Index patch_side) {
  if (x.rank() != 3 || map.rows() != x.dim(0) || map.cols() != x.dim(1)) {
    throw ShapeError("attribution map does not match image " + shape_string(x.shape()));
  }
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Index side = patch_side > 0 ? patch_side : std::min(h, w) / 3;
  if (side < 1 || side > std::min(h, w)) throw DataError("patch side " + std::to_string(side) + " does not fit the image");

  const RowMatrix filtered = box_filter(map, side);
  Index best = 0;
  for (Index i = 1; i < filtered.size(); ++i)
    if (filtered.data()[i] > filtered.data()[best]) best = i;
  Patch p;
  p.row = std::clamp<Index>(best / w - side / 2, 0, h - side);
  p.col = std::clamp<Index>(best % w - side / 2, 0, w - side);
  p.image = Tensor({side, side, c});
  for (Index r = 0; r < side; ++r)
    for (Index q = 0; q < side; ++q)
      for (Index ch = 0; ch < c; ++ch) p.image.at(r, q, ch) = x.at(p.row + r, p.col + q, ch);
  return p;
}

}  // namespace xai
