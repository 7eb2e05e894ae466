#include "xai/stats/stats.hpp"

#include "xai/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace xai::stats {
namespace {

void check_groups(const Groups& groups) {
  if (groups.size() < 2) throw DataError("need at least 2 groups, got " + std::to_string(groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].size() < 2) throw DataError("group " + std::to_string(g) + " has fewer than 2 observations");
    for (double v : groups[g])
      if (!std::isfinite(v)) throw DataError("group " + std::to_string(g) + " contains a non-finite value");
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

template <class PValue>
TukeyResult pairwise(const Groups& groups, PValue&& p_value) {
  const AnovaResult a = one_way_anova(groups);
  const double ms = a.ms_within();
  TukeyResult out;
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      PairComparison c;
      c.i = i;
      c.j = j;
      c.diff = a.means[i] - a.means[j];
      const double se = std::sqrt(0.5 * ms * (1.0 / a.sizes[i] + 1.0 / a.sizes[j]));
      if (c.diff == 0.0) {
        c.q = 0.0;
        c.p = 1.0;
      } else if (se == 0.0) {
        c.q = std::numeric_limits<double>::infinity();
        c.p = 0.0;
      } else {
        c.q = std::abs(c.diff) / se;
        c.p = p_value(c.q, static_cast<int>(groups.size()), a.df_within);
      }
      out.pairs.push_back(c);
    }
  return out;
}

}  // namespace

AnovaResult one_way_anova(const Groups& groups) {
  check_groups(groups);
  AnovaResult r;
  double total = 0.0, scale = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    r.means.push_back(mean(g));
    r.sizes.push_back(g.size());
    for (double v : g) {
      total += v;
      scale += v * v;
    }
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double d = r.means[g] - grand;
    r.ss_between += static_cast<double>(groups[g].size()) * d * d;
    for (double v : groups[g]) r.ss_within += (v - r.means[g]) * (v - r.means[g]);
  }
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(n - groups.size());

  const double ss_total = r.ss_between + r.ss_within;
  // Rounding noise on constant data must not produce a spurious F.
  if (ss_total <= 1e-24 * (scale / static_cast<double>(n))) {
    r.ss_between = r.ss_within = 0.0;
    r.F = 0.0;
    r.p = 1.0;
    r.eta_squared = 0.0;
    return r;
  }
  r.eta_squared = r.ss_between / ss_total;
  if (r.ss_within == 0.0) {
    r.F = std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.F = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
  r.p = f_sf(r.F, r.df_between, r.df_within);
  return r;
}

TukeyResult tukey_hsd(const Groups& groups) {
  return pairwise(groups, [](double q, int k, int df) { return studentized_range_sf(q, k, df); });
}

TukeyResult pairwise_t(const Groups& groups) {
  // q / sqrt(2) is the pooled t statistic.
  return pairwise(groups, [](double q, int, int df) { return t_two_sided_p(q / std::sqrt(2.0), df); });
}

PairComparison TukeyResult::pair(std::size_t i, std::size_t j) const {
  const bool flip = i > j;
  const std::size_t a = flip ? j : i, b = flip ? i : j;
  for (const auto& c : pairs) {
    if (c.i == a && c.j == b) {
      if (!flip) return c;
      PairComparison out = c;
      std::swap(out.i, out.j);
      out.diff = -out.diff;
      return out;
    }
  }
  throw NotFoundError("no comparison for groups " + std::to_string(i) + " and " + std::to_string(j));
}

nlohmann::json AnovaResult::to_json() const {
  return {{"F", F},
          {"df_between", df_between},
          {"df_within", df_within},
          {"p", p},
          {"eta_squared", eta_squared},
          {"ss_between", ss_between},
          {"ss_within", ss_within},
          {"means", means},
          {"sizes", sizes}};
}

nlohmann::json TukeyResult::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : pairs) out.push_back({{"i", c.i}, {"j", c.j}, {"diff", c.diff}, {"q", c.q}, {"p", c.p}});
  return out;
}

}  // namespace xai::stats
