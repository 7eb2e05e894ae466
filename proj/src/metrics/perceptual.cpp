#include "xai/metrics/metrics.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xai {

ActivationBackend::ActivationBackend(const Model& model, std::vector<std::string> layers) : model_(model) {
  if (layers.empty()) throw DataError("perceptual backend needs at least one layer");
  for (const auto& name : layers) ids_.push_back(model.graph.id_of(name));
}

std::vector<Tensor> ActivationBackend::features(const Tensor& x) const {
  const Trace trace = forward(model_.graph, x, *std::max_element(ids_.begin(), ids_.end()));
  std::vector<Tensor> out;
  for (Index id : ids_) {
    Tensor t = trace.value(id);
    if (t.rank() == 3) {
      auto m = t.matrix(t.dim(0) * t.dim(1), t.dim(2));
      for (Index r = 0; r < m.rows(); ++r) {
        const double norm = m.row(r).norm();
        if (norm > 0.0) m.row(r) /= norm;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

double ActivationBackend::distance(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeError("perceptual distance needs equally sized patches");
  const auto fa = features(a), fb = features(b);
  double total = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double na = fa[i].data().norm(), nb = fb[i].data().norm();
    double d;
    if (na == 0.0 && nb == 0.0) {
      d = 0.0;
    } else if (na == 0.0 || nb == 0.0) {
      d = 1.0;
    } else {
      d = 1.0 - fa[i].data().dot(fb[i].data()) / (na * nb);
    }
    total += std::clamp(d, 0.0, 1.0);
  }
  return total / static_cast<double>(fa.size());
}

double perceptual_similarity(const PerceptualBackend& backend, const std::vector<Tensor>& a,
                             const std::vector<Tensor>& b, SetReduction reduction) {
  if (a.empty() || b.empty()) throw DataError("perceptual similarity needs two nonempty patch sets");
  RowMatrix d(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      d(static_cast<Index>(i), static_cast<Index>(j)) = backend.distance(a[i], b[j]);
  double mean;
  if (reduction == SetReduction::MeanCrossPair) {
    mean = d.mean();
  } else {
    mean = 0.5 * (d.rowwise().minCoeff().mean() + d.colwise().minCoeff().mean());
  }
  return 1.0 - mean;
}

}  // namespace xai
