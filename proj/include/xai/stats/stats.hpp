#pragma once

#include <json.hpp>

#include <cstddef>
#include <vector>

namespace xai::stats {

using Groups = std::vector<std::vector<double>>;

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double normal_cdf(double z);
/// P(F > f) for F(d1, d2).
double f_sf(double f, double d1, double d2);
/// Two-sided P(|T| > t) for Student t with df degrees of freedom.
double t_two_sided_p(double t, double df);
/// P(Q <= q) for the studentized range of k means with df error degrees of freedom.
double studentized_range_cdf(double q, int k, double df);
double studentized_range_sf(double q, int k, double df);

struct AnovaResult {
  double F = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p = 1.0;
  double eta_squared = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  std::vector<double> means;
  std::vector<std::size_t> sizes;

  double ms_within() const { return df_within > 0 ? ss_within / df_within : 0.0; }
  nlohmann::json to_json() const;
};

/// Throws DataError unless there are >= 2 groups of >= 2 finite values.
AnovaResult one_way_anova(const Groups& groups);

struct PairComparison {
  std::size_t i = 0;
  std::size_t j = 0;
  double diff = 0.0;  // mean_i - mean_j
  double q = 0.0;
  double p = 1.0;
};

struct TukeyResult {
  std::vector<PairComparison> pairs;  // i < j, lexicographic
  /// Lookup in either order; the difference changes sign when i > j.
  PairComparison pair(std::size_t i, std::size_t j) const;
  nlohmann::json to_json() const;
};

/// Tukey-Kramer for unequal group sizes.
TukeyResult tukey_hsd(const Groups& groups);

/// Unadjusted pooled-variance t tests on the ANOVA error term (Fisher's LSD).
TukeyResult pairwise_t(const Groups& groups);

}  // namespace xai::stats
