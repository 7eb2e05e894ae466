#include "xai/attribution/attribution.hpp"

#include "xai/error.hpp"
#include "xai/io/blob.hpp"
#include "xai/io/image_codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace xai {
namespace {

constexpr std::array<std::pair<Method, std::string_view>, 7> kNames{{
    {Method::Saliency, "saliency"},
    {Method::GradientInput, "gradient_input"},
    {Method::IntegratedGradients, "integrated_gradients"},
    {Method::SmoothGrad, "smoothgrad"},
    {Method::GradCam, "gradcam"},
    {Method::Occlusion, "occlusion"},
    {Method::Control, "control"},
}};

// Piecewise-linear jet: blue -> cyan -> yellow -> red.
std::array<double, 3> jet(double v) {
  auto ramp = [](double t) { return std::clamp(1.5 - std::abs(t), 0.0, 1.0); };
  return {ramp(4.0 * v - 3.0), ramp(4.0 * v - 2.0), ramp(4.0 * v - 1.0)};
}

}  // namespace

std::string_view method_name(Method method) {
  for (const auto& [m, name] : kNames) {
    if (m == method) return name;
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& [m, n] : kNames) {
    if (n == name) return m;
  }
  throw DataError("unknown attribution method '" + std::string(name) + "'");
}

const std::vector<Method>& attribution_methods() {
  static const std::vector<Method> methods{Method::Saliency,   Method::IntegratedGradients, Method::SmoothGrad,
                                           Method::GradCam,    Method::Occlusion,           Method::GradientInput};
  return methods;
}

AttributionMap AttributionMap::make(RowMatrix values, Method method, Index target_class) {
  AttributionMap m;
  m.values = std::move(values);
  m.method = method;
  m.target_class = target_class;
  if (m.values.size() > 0) {
    m.min = m.values.minCoeff();
    m.max = m.values.maxCoeff();
  }
  return m;
}

RowMatrix AttributionMap::normalized() const {
  if (!(max > min)) return RowMatrix::Zero(values.rows(), values.cols());
  return (values.array() - min) / (max - min);
}

RowMatrix channel_l2(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("channel reduction needs an (H, W, C) tensor");
  const Index h = t.dim(0), w = t.dim(1), c = t.dim(2);
  const auto pixels = t.matrix(h * w, c);
  RowMatrix out(h, w);
  Eigen::Map<Vector>(out.data(), h * w) = pixels.rowwise().norm();
  return out;
}

RowMatrix bilinear_resize(const RowMatrix& src, Index rows, Index cols) {
  if (src.size() == 0) throw ShapeError("cannot resize an empty map");
  RowMatrix out(rows, cols);
  const double sy = static_cast<double>(src.rows()) / static_cast<double>(rows);
  const double sx = static_cast<double>(src.cols()) / static_cast<double>(cols);
  for (Index r = 0; r < rows; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.rows() - 1));
    const auto y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, src.rows() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Index c = 0; c < cols; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.cols() - 1));
      const auto x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, src.cols() - 1);
      const double wx = fx - static_cast<double>(x0);
      out(r, c) = (1 - wy) * ((1 - wx) * src(y0, x0) + wx * src(y0, x1)) +
                  wy * ((1 - wx) * src(y1, x0) + wx * src(y1, x1));
    }
  }
  return out;
}

AttributionMap explain(Method method, const Model& model, const Tensor& x, Index cls, const MethodConfig& config,
                       std::uint64_t seed) {
  switch (method) {
    case Method::Saliency: return saliency(model, x, cls);
    case Method::GradientInput: return gradient_input(model, x, cls);
    case Method::IntegratedGradients: return integrated_gradients(model, x, cls, config.integrated_gradients);
    case Method::SmoothGrad: return smoothgrad(model, x, cls, config.smoothgrad, seed);
    case Method::GradCam: return gradcam(model, x, cls);
    case Method::Occlusion: return occlusion(model, x, cls, config.occlusion);
    case Method::Control: {
      AttributionMap m = control_saliency(x, config.control);
      m.target_class = cls;
      return m;
    }
  }
  throw DataError("unknown attribution method");
}

std::string encode_map(const AttributionMap& map) {
  io::Blob blob;
  blob.header["kind"] = "attribution_map";
  blob.header["rows"] = map.rows();
  blob.header["cols"] = map.cols();
  blob.header["method"] = std::string(method_name(map.method));
  blob.header["target_class"] = map.target_class;
  blob.header["min"] = map.min;
  blob.header["max"] = map.max;
  blob.payload.assign(map.values.data(), map.values.data() + map.values.size());
  return io::encode_blob(blob);
}

AttributionMap decode_map(const std::string& bytes) {
  io::Blob blob = io::decode_blob(bytes, "attribution_map");
  try {
    const auto rows = blob.header.at("rows").get<Index>();
    const auto cols = blob.header.at("cols").get<Index>();
    if (rows * cols != static_cast<Index>(blob.payload.size())) throw FormatError("map payload size mismatch");
    RowMatrix values = Eigen::Map<const RowMatrix>(blob.payload.data(), rows, cols);
    return AttributionMap::make(std::move(values), parse_method(blob.header.at("method").get<std::string>()),
                                blob.header.at("target_class").get<Index>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed attribution map header: ") + e.what());
  }
}

std::string map_to_png(const AttributionMap& map) {
  const RowMatrix n = map.normalized();
  io::Image8 img{static_cast<int>(n.cols()), static_cast<int>(n.rows()), 1, {}};
  img.pixels.reserve(static_cast<std::size_t>(n.size()));
  for (Index i = 0; i < n.size(); ++i) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(n.data()[i] * 255.0)));
  return io::encode_png(img);
}

std::string map_to_overlay_png(const AttributionMap& map) {
  const RowMatrix n = map.normalized();
  io::Image8 img{static_cast<int>(n.cols()), static_cast<int>(n.rows()), 4, {}};
  img.pixels.reserve(static_cast<std::size_t>(n.size()) * 4);
  for (Index i = 0; i < n.size(); ++i) {
    for (double ch : jet(n.data()[i])) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(ch * 255.0)));
    img.pixels.push_back(128);
  }
  return io::encode_png(img);
}

}  // namespace xai
