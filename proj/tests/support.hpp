#pragma once

// Shared helpers for the unit and acceptance suites: seeded random graphs,
// finite-difference gradients and brute-force layer arithmetic used as oracles.

#include "xai/core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace xai::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline Conv2d random_conv(Index k, Index cin, Index cout, std::mt19937_64& rng,
                          Padding padding = Padding::Valid) {
  const double scale = std::sqrt(2.0 / static_cast<double>(k * k * cin));
  return Conv2d{random_tensor({k, k, cin, cout}, rng, -scale, scale),
                random_tensor({cout}, rng, -0.1, 0.1), padding};
}

inline Dense random_dense(Index in, Index out, std::mt19937_64& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  return Dense{random_tensor({out, in}, rng, -scale, scale), random_tensor({out}, rng, -0.1, 0.1)};
}

/// Small CNN covering every layer kind: conv(valid)/relu/pool/conv(same)/relu/gap/dense.
inline Graph random_cnn(std::uint64_t seed, Index in_channels = 3, Index classes = 2) {
  std::mt19937_64 rng(seed);
  Graph g;
  g.add("conv1", random_conv(3, in_channels, 4, rng))
      .add("relu1", Relu{})
      .add("pool1", MaxPool2{})
      .add("conv2", random_conv(3, 4, 5, rng, Padding::Same))
      .add("relu2", Relu{})
      .add("gap", GlobalAvgPool{})
      .add("fc", random_dense(5, classes, rng));
  return g;
}

/// Central differences of `f` around `x`, one coordinate at a time.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest elementwise |a - b| / max(|a|, |b|, 1).
inline double max_relative_error(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Direct-loop layer arithmetic, written without im2col or Eigen products.

inline Tensor naive_conv(const Tensor& x, const Conv2d& conv) {
  const Index k = conv.weight.dim(0), cin = conv.weight.dim(2), cout = conv.weight.dim(3);
  const Index pad = conv.padding == Padding::Same ? k / 2 : 0;
  const Index h = x.dim(0), w = x.dim(1);
  const Index ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  Tensor y({ho, wo, cout});
  for (Index oh = 0; oh < ho; ++oh)
    for (Index ow = 0; ow < wo; ++ow)
      for (Index co = 0; co < cout; ++co) {
        double acc = conv.bias[co];
        for (Index kh = 0; kh < k; ++kh)
          for (Index kw = 0; kw < k; ++kw)
            for (Index ci = 0; ci < cin; ++ci) {
              const Index ih = oh + kh - pad, iw = ow + kw - pad;
              if (ih < 0 || iw < 0 || ih >= h || iw >= w) continue;
              acc += x.at(ih, iw, ci) * conv.weight[((kh * k + kw) * cin + ci) * cout + co];
            }
        y.at(oh, ow, co) = acc;
      }
  return y;
}

inline Tensor naive_relu(Tensor x) {
  for (Index i = 0; i < x.size(); ++i) x[i] = x[i] > 0 ? x[i] : 0.0;
  return x;
}

inline Tensor naive_pool(const Tensor& x) {
  Tensor y({x.dim(0) / 2, x.dim(1) / 2, x.dim(2)});
  for (Index i = 0; i < y.dim(0); ++i)
    for (Index j = 0; j < y.dim(1); ++j)
      for (Index c = 0; c < y.dim(2); ++c)
        y.at(i, j, c) = std::max({x.at(2 * i, 2 * j, c), x.at(2 * i, 2 * j + 1, c),
                                  x.at(2 * i + 1, 2 * j, c), x.at(2 * i + 1, 2 * j + 1, c)});
  return y;
}

inline Tensor naive_gap(const Tensor& x) {
  Tensor y({x.dim(2)});
  for (Index c = 0; c < x.dim(2); ++c) {
    double s = 0;
    for (Index i = 0; i < x.dim(0); ++i)
      for (Index j = 0; j < x.dim(1); ++j) s += x.at(i, j, c);
    y[c] = s / static_cast<double>(x.dim(0) * x.dim(1));
  }
  return y;
}

inline Tensor naive_dense(const Tensor& x, const Dense& d) {
  const Index out = d.weight.dim(0), in = d.weight.dim(1);
  Tensor y({out});
  for (Index o = 0; o < out; ++o) {
    double acc = d.bias[o];
    for (Index i = 0; i < in; ++i) acc += d.weight[o * in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

/// Brute-force evaluation of any sequential graph, one layer kind at a time.
inline Tensor naive_forward(const Graph& g, Tensor x) {
  for (const Node& n : g.nodes()) {
    if (auto* c = std::get_if<Conv2d>(&n.layer)) {
      x = naive_conv(x, *c);
    } else if (auto* d = std::get_if<Dense>(&n.layer)) {
      x = naive_dense(x, *d);
    } else if (std::holds_alternative<Relu>(n.layer)) {
      x = naive_relu(std::move(x));
    } else if (std::holds_alternative<MaxPool2>(n.layer)) {
      x = naive_pool(x);
    } else {
      x = naive_gap(x);
    }
  }
  return x;
}

}  // namespace xai::testing
