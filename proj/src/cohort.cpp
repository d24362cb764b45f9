#include "csvd/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "csvd/parallel.hpp"
#include "csvd/rng.hpp"

namespace csvd {
namespace {

double aggregate(std::vector<double>& scratch, Aggregator statistic) {
  if (statistic == Aggregator::Mean) {
    double s = 0.0;
    for (double v : scratch) s += v;
    return s / double(scratch.size());
  }
  std::sort(scratch.begin(), scratch.end());
  const std::size_t n = scratch.size();
  return n % 2 == 1 ? scratch[n / 2]
                    : 0.5 * (scratch[n / 2 - 1] + scratch[n / 2]);
}

StatResult interval_from_stats(std::vector<double> stats, double point,
                               int n, std::uint64_t seed, int dropped) {
  std::sort(stats.begin(), stats.end());
  StatResult r;
  r.point = point;
  r.ci_low = quantile_sorted(stats, 0.025);
  r.ci_high = quantile_sorted(stats, 0.975);
  r.n = n;
  r.seed = seed;
  r.dropped = dropped;
  return r;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double balanced_accuracy(const std::vector<bool>& pred,
                         const std::vector<bool>& truth) {
  if (pred.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("balanced_accuracy: need equal, non-empty inputs");
  }
  std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) {
      ++pos;
      tp += pred[i];
    } else {
      ++neg;
      tn += !pred[i];
    }
  }
  if (pos == 0 || neg == 0) {
    throw std::runtime_error(
        "balanced_accuracy: truth contains a single class; undefined");
  }
  return 0.5 * (double(tp) / pos + double(tn) / neg);
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("mae: need equal, non-empty inputs");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += std::abs(pred[i] - truth[i]);
  }
  return s / double(pred.size());
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson_r: need equal lengths >= 2");
  }
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::runtime_error("pearson_r: zero variance input");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * (double(i + 1) + double(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman_rho: need equal lengths >= 2");
  }
  return pearson_r(average_ranks(x), average_ranks(y));
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) {
    throw std::invalid_argument("quantile_sorted: empty input");
  }
  const double h = q * double(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - double(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

StatResult bootstrap_ci(const std::vector<double>& values, Aggregator statistic,
                        int iters, std::uint64_t seed, int workers) {
  if (values.empty()) {
    throw std::invalid_argument("bootstrap_ci: values must be non-empty");
  }
  if (iters < 1) {
    throw std::invalid_argument("bootstrap_ci: iters must be >= 1");
  }
  const std::size_t n = values.size();

  std::vector<double> stats(iters);
  parallel_for(std::size_t(iters), workers, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> sample(n);
    for (std::size_t it = lo; it < hi; ++it) {
      Rng rng(derive_seed(seed, it));
      for (std::size_t i = 0; i < n; ++i) {
        sample[i] = values[bounded(rng, n)];
      }
      stats[it] = aggregate(sample, statistic);
    }
  });

  std::vector<double> original = values;
  const double point = aggregate(original, statistic);
  return interval_from_stats(std::move(stats), point, int(n), seed, 0);
}

StatResult bootstrap_ci_exhaustive(const std::vector<double>& values,
                                   Aggregator statistic) {
  const std::size_t n = values.size();
  if (n == 0 || n > 8) {
    throw std::invalid_argument(
        "bootstrap_ci_exhaustive: feasible only for 1 <= n <= 8");
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= n;

  std::vector<double> stats(total);
  std::vector<double> sample(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      sample[i] = values[c % n];
      c /= n;
    }
    std::vector<double> scratch = sample;
    stats[code] = aggregate(scratch, statistic);
  }

  std::vector<double> original = values;
  const double point = aggregate(original, statistic);
  return interval_from_stats(std::move(stats), point, int(n), 0, 0);
}

StatResult bootstrap_ci_indexed(
    std::size_t n_subjects,
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    int iters, std::uint64_t seed, int workers) {
  if (n_subjects == 0) {
    throw std::invalid_argument("bootstrap_ci_indexed: no subjects");
  }
  if (iters < 1) {
    throw std::invalid_argument("bootstrap_ci_indexed: iters must be >= 1");
  }

  std::vector<double> stats(iters);
  std::vector<std::uint8_t> defined(iters, 0);
  parallel_for(std::size_t(iters), workers, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> idx(n_subjects);
    for (std::size_t it = lo; it < hi; ++it) {
      Rng rng(derive_seed(seed, it));
      for (std::size_t i = 0; i < n_subjects; ++i) {
        idx[i] = bounded(rng, n_subjects);
      }
      const auto v = statistic(idx);
      if (v.has_value() && std::isfinite(*v)) {
        stats[it] = *v;
        defined[it] = 1;
      }
    }
  });

  std::vector<double> kept;
  kept.reserve(iters);
  for (int i = 0; i < iters; ++i) {
    if (defined[i]) kept.push_back(stats[i]);
  }
  if (kept.empty()) {
    throw std::runtime_error(
        "bootstrap_ci_indexed: statistic undefined on every resample");
  }

  std::vector<std::size_t> identity(n_subjects);
  std::iota(identity.begin(), identity.end(), 0);
  const auto point = statistic(identity);
  if (!point.has_value()) {
    throw std::runtime_error("bootstrap_ci_indexed: statistic undefined on the sample");
  }
  const int dropped = iters - int(kept.size());
  return interval_from_stats(std::move(kept), *point, int(n_subjects), seed, dropped);
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("wilcoxon_signed_rank: need equal, non-empty inputs");
  }

  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) {
    throw std::runtime_error(
        "wilcoxon_signed_rank: all differences are zero; test undefined");
  }
  const int n = int(diffs.size());

  std::vector<double> abs_diffs(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) abs_diffs[i] = std::abs(diffs[i]);
  const std::vector<double> ranks = average_ranks(abs_diffs);

  double w_plus = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] > 0.0) w_plus += ranks[i];
  }

  WilcoxonResult res;
  res.w_plus = w_plus;
  res.n = n;

  if (n <= 25) {
    // Exact distribution. Average-tie ranks are half-integers, so doubling
    // makes every achievable rank sum an integer; count sign assignments
    // per sum with a subset-sum convolution, which enumerates all 2^n
    // patterns exactly.
    res.exact = true;
    std::vector<std::int64_t> doubled(ranks.size());
    std::int64_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      doubled[i] = std::llround(2.0 * ranks[i]);
      total += doubled[i];
    }
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    std::int64_t reach = 0;
    for (const std::int64_t r : doubled) {
      reach += r;
      for (std::int64_t s = reach; s >= r; --s) {
        count[s] += count[s - r];
      }
    }
    const std::int64_t w2 = std::llround(2.0 * w_plus);
    double below = 0.0, above = 0.0;
    for (std::int64_t s = 0; s <= total; ++s) {
      if (s <= w2) below += count[s];
      if (s >= w2) above += count[s];
    }
    const double denom = std::ldexp(1.0, n);  // 2^n
    res.p_value = std::min(1.0, 2.0 * std::min(below, above) / denom);
  } else {
    res.exact = false;
    const double mean = double(n) * (n + 1) / 4.0;
    double var = double(n) * (n + 1) * (2.0 * n + 1) / 24.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups of |d|.
    std::vector<double> sorted_abs = abs_diffs;
    std::sort(sorted_abs.begin(), sorted_abs.end());
    std::size_t i = 0;
    while (i < sorted_abs.size()) {
      std::size_t j = i;
      while (j + 1 < sorted_abs.size() && sorted_abs[j + 1] == sorted_abs[i]) ++j;
      const double t = double(j - i + 1);
      var -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
    if (var <= 0.0) {
      throw std::runtime_error("wilcoxon_signed_rank: degenerate variance");
    }
    const double delta = w_plus - mean;
    const double corrected = std::max(0.0, std::abs(delta) - 0.5);
    const double z = corrected / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * normal_sf(z));
  }
  return res;
}

}  // namespace csvd
