#include "xai/metrics/metrics.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xai {
namespace {

void check_map(const Tensor& x, const RowMatrix& map) {
  if (x.rank() != 3 || map.rows() != x.dim(0) || map.cols() != x.dim(1)) {
    throw ShapeError("attribution map " + std::to_string(map.rows()) + "x" + std::to_string(map.cols()) +
                     " does not match image " + shape_string(x.shape()));
  }
}

Curve sweep(const Model& model, const Tensor& source, const Tensor& replacement, const RowMatrix& map, Index cls,
            const FaithfulnessConfig& config) {
  validate(config);
  const auto order = ranking(map);
  const auto n = static_cast<double>(order.size());
  Curve curve;
  for (int s = 0; s <= config.steps; ++s) {
    const double fraction = static_cast<double>(s) * config.fraction_per_step;
    const Index k = std::min<Index>(static_cast<Index>(std::llround(fraction * n)), static_cast<Index>(order.size()));
    curve.fractions.push_back(fraction);
    curve.values.push_back(probability(model, compose(source, replacement, order, k), cls));
  }
  curve.auc = trapezoid_mean(curve.values);
  return curve;
}

}  // namespace

void validate(const FaithfulnessConfig& config) {
  if (config.steps < 1) throw DataError("faithfulness needs at least one step");
  if (!(config.fraction_per_step > 0.0) || config.steps * config.fraction_per_step > 1.0 + 1e-12) {
    throw DataError("steps x fraction_per_step must lie in (0, 1]");
  }
  if (config.mu_fidelity.n_subsets < 2) throw DataError("mu-fidelity needs at least 2 subsets");
  if (!(config.mu_fidelity.subset_fraction > 0.0 && config.mu_fidelity.subset_fraction <= 1.0)) {
    throw DataError("mu-fidelity subset fraction must lie in (0, 1]");
  }
  if (config.insertion_blur_radius < 0) throw DataError("blur radius must be non-negative");
}

std::vector<Index> ranking(const RowMatrix& map) {
  std::vector<Index> order(static_cast<std::size_t>(map.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const double* v = map.data();
  std::stable_sort(order.begin(), order.end(), [v](Index a, Index b) { return v[a] > v[b]; });
  return order;
}

Tensor compose(const Tensor& source, const Tensor& replacement, const std::vector<Index>& order, Index k) {
  Tensor out = source;
  const Index channels = source.dim(2);
  for (Index r = 0; r < k; ++r) {
    const Index base = order[static_cast<std::size_t>(r)] * channels;
    for (Index ch = 0; ch < channels; ++ch) out[base + ch] = replacement[base + ch];
  }
  return out;
}

double trapezoid_mean(const std::vector<double>& values) {
  if (values.size() < 2) return values.empty() ? 0.0 : values.front();
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) sum += 0.5 * (values[i] + values[i + 1]);
  return sum / static_cast<double>(values.size() - 1);
}

Curve deletion(const Model& model, const Tensor& x, const RowMatrix& map, Index cls, const FaithfulnessConfig& config) {
  check_map(x, map);
  return sweep(model, x, Tensor::filled(x.shape(), config.baseline), map, cls, config);
}

Curve insertion(const Model& model, const Tensor& x, const RowMatrix& map, Index cls, const FaithfulnessConfig& config) {
  check_map(x, map);
  const Tensor start = config.insertion_blur_radius > 0 ? box_blur(x, config.insertion_blur_radius)
                                                        : Tensor::filled(x.shape(), config.baseline);
  return sweep(model, start, x, map, cls, config);
}

Tensor box_blur(const Tensor& x, int radius) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out(x.shape());
  for (Index r = 0; r < h; ++r)
    for (Index q = 0; q < w; ++q) {
      const Index r0 = std::max<Index>(0, r - radius), r1 = std::min<Index>(h - 1, r + radius);
      const Index c0 = std::max<Index>(0, q - radius), c1 = std::min<Index>(w - 1, q + radius);
      const auto area = static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (Index i = r0; i <= r1; ++i)
          for (Index j = c0; j <= c1; ++j) acc += x.at(i, j, ch);
        out.at(r, q, ch) = acc / area;
      }
    }
  return out;
}

MuFidelity mu_fidelity(const Model& model, const Tensor& x, const RowMatrix& map, Index cls,
                       const FaithfulnessConfig& config) {
  validate(config);
  check_map(x, map);
  const auto& mc = config.mu_fidelity;
  const Index n = map.size(), channels = x.dim(2);
  const Index size = std::clamp<Index>(static_cast<Index>(std::llround(mc.subset_fraction * static_cast<double>(n))), 1, n);
  const double reference = logit(model, x, cls);

  std::mt19937_64 rng(mc.seed);
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  Vector attr(mc.n_subsets), drop(mc.n_subsets);
  for (int s = 0; s < mc.n_subsets; ++s) {
    // Partial Fisher-Yates: the first `size` entries form a uniform subset.
    for (Index i = 0; i < size; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    Tensor masked = x;
    double sum = 0.0;
    for (Index i = 0; i < size; ++i) {
      const Index p = pool[static_cast<std::size_t>(i)];
      sum += map.data()[p];
      for (Index ch = 0; ch < channels; ++ch) masked[p * channels + ch] = config.baseline;
    }
    attr[s] = sum;
    drop[s] = reference - logit(model, masked, cls);
  }
  const Vector a = attr.array() - attr.mean();
  const Vector d = drop.array() - drop.mean();
  const double saa = a.squaredNorm(), sdd = d.squaredNorm();
  if (saa == 0.0 || sdd == 0.0) return {0.0, true};
  return {std::clamp(a.dot(d) / std::sqrt(saa * sdd), -1.0, 1.0), false};
}

}  // namespace xai
