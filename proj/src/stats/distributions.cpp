#include "xai/stats/stats.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace xai::stats {
namespace {

constexpr int kGaussPoints = 20;

struct GaussLegendre {
  std::array<double, kGaussPoints> nodes{};
  std::array<double, kGaussPoints> weights{};
  GaussLegendre() {
    const double pi = std::acos(-1.0);
    for (int i = 0; i < kGaussPoints; ++i) {
      double x = std::cos(pi * (i + 0.75) / (kGaussPoints + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = x;
        for (int n = 2; n <= kGaussPoints; ++n) {
          const double p2 = ((2.0 * n - 1.0) * x * p1 - (n - 1.0) * p0) / n;
          p0 = p1;
          p1 = p2;
        }
        dp = kGaussPoints * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[static_cast<std::size_t>(i)] = x;
      weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

const GaussLegendre& gauss() {
  static const GaussLegendre g;
  return g;
}

// Composite Gauss-Legendre over equal panels.
template <class F>
double integrate(F&& f, double lo, double hi, int panels) {
  const auto& g = gauss();
  const double width = (hi - lo) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width, half = 0.5 * width;
    for (int i = 0; i < kGaussPoints; ++i) {
      total += g.weights[static_cast<std::size_t>(i)] * f(mid + half * g.nodes[static_cast<std::size_t>(i)]);
    }
  }
  return total * 0.5 * width;
}

double continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h;
}

// P(range of k standard normals <= w).
double normal_range_cdf(double w, int k) {
  if (w <= 0.0) return 0.0;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::acos(-1.0));
  auto f = [&](double z) {
    const double inner = normal_cdf(z) - normal_cdf(z - w);
    return inv_sqrt_2pi * std::exp(-0.5 * z * z) * std::pow(inner, k - 1);
  };
  return std::min(1.0, k * integrate(f, -8.0, 8.0, 24));
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DataError("incomplete beta needs positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                                b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * continued_fraction(a, b, x) / a;
  return 1.0 - front * continued_fraction(b, a, 1.0 - x) / b;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double f_sf(double f, double d1, double d2) {
  if (!(f > 0.0)) return 1.0;
  if (std::isinf(f)) return 0.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

double t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double studentized_range_cdf(double q, int k, double df) {
  if (k < 2) throw DataError("studentized range needs k >= 2");
  if (!(df >= 1.0)) throw DataError("studentized range needs df >= 1");
  if (!(q > 0.0)) return 0.0;
  if (std::isinf(q)) return 1.0;
  if (df > 1e7) return normal_range_cdf(q, k);

  // s = sqrt(chi2_df / df); P(Q <= q) = E[P(range <= q s)].
  const double log_norm = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto log_density = [&](double s) { return log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s; };
  const double mode = std::sqrt((df - 1.0) / df);
  const double spread = 1.0 / std::sqrt(2.0 * df);
  const double peak = mode > 0.0 ? log_density(mode) : log_density(1e-12);
  double lo = 0.0, hi = mode + spread;
  for (double d = spread; mode - d > 0.0; d *= 2.0) {
    if (log_density(mode - d) < peak - 45.0) {
      lo = mode - d;
      break;
    }
  }
  for (double d = spread; ; d *= 2.0) {
    hi = mode + d;
    if (log_density(hi) < peak - 45.0) break;
  }
  auto f = [&](double s) { return s > 0.0 ? std::exp(log_density(s)) * normal_range_cdf(q * s, k) : 0.0; };
  return std::clamp(integrate(f, lo, hi, 32), 0.0, 1.0);
}

double studentized_range_sf(double q, int k, double df) { return 1.0 - studentized_range_cdf(q, k, df); }

}  // namespace xai::stats
