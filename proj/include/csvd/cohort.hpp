#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace csvd {

/// One subject's weak labels: predicted and reference counts (or an ordinal
/// rating), presence flags and an optional anatomical region tag.
struct SubjectRecord {
  std::string id;
  double pred_count = 0.0;
  double true_count = 0.0;
  bool presence_pred = false;
  bool presence_true = false;
  std::string region;
};

/// A point statistic with its percentile bootstrap interval.
struct StatResult {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n = 0;               ///< sample size
  std::uint64_t seed = 0;  ///< PRNG seed used for the resampling
  int dropped = 0;         ///< resamples where the statistic was undefined
};

/// (sensitivity + specificity) / 2. Throws when truth has a single class.
double balanced_accuracy(const std::vector<bool>& pred,
                         const std::vector<bool>& truth);

double mae(const std::vector<double>& pred, const std::vector<double>& truth);

/// Sample Pearson correlation; throws on length < 2 or zero variance.
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

/// Spearman's rank correlation: Pearson correlation of average-tie ranks.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

/// Average ranks (1-based; tied values share the mean of their positions).
std::vector<double> average_ranks(const std::vector<double>& values);

/// Linear-interpolation quantile on sorted data (the h = (n-1)q rule).
double quantile_sorted(const std::vector<double>& sorted, double q);

enum class Aggregator { Mean, Median };

/// Percentile bootstrap (2.5th/97.5th of `iters` resampled statistics),
/// resampling subjects with replacement; deterministic given the seed.
StatResult bootstrap_ci(const std::vector<double>& values, Aggregator statistic,
                        int iters = 2000, std::uint64_t seed = 0, int workers = 1);

/// Same interval with the random resamples replaced by full enumeration of
/// all n^n resamples; only feasible for very small n (capped at n <= 8).
StatResult bootstrap_ci_exhaustive(const std::vector<double>& values,
                                   Aggregator statistic);

/// Generic percentile bootstrap over subject indices: `statistic` maps a
/// resampled index multiset to a value, or nullopt where it is undefined
/// (undefined resamples are dropped and counted).
StatResult bootstrap_ci_indexed(
    std::size_t n_subjects,
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    int iters, std::uint64_t seed, int workers = 1);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;  ///< sum of ranks of positive differences
  int n = 0;            ///< pairs remaining after dropping zero differences
  bool exact = false;   ///< exact null distribution vs normal approximation
};

/// Two-sided paired Wilcoxon signed-rank test. Zero differences are dropped
/// (classic convention). For n <= 25 the p-value comes from the exact null
/// distribution over all 2^n sign assignments (with average-tie ranks);
/// beyond that, a normal approximation with tie and continuity corrections.
/// Throws when every difference is zero.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b);

}  // namespace csvd
