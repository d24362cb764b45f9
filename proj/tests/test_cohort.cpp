#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csvd/cohort.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csvd;

namespace {

// Independent Wilcoxon oracle: walk all 2^n sign patterns explicitly.
double wilcoxon_enumeration_p(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<double> abs_d(n);
  for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(diffs[i]);

  // average ranks, written independently of the library helper
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < n && abs_d[order[j]] == abs_d[order[i]]) {
      sum += double(j + 1);
      ++j;
    }
    const double avg = sum / double(j - i);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    i = j;
  }

  double w_obs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0.0) w_obs += rank[i];
  }

  std::size_t count_le = 0, count_ge = 0;
  const std::size_t total = std::size_t(1) << n;
  for (std::size_t pattern = 0; pattern < total; ++pattern) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pattern & (std::size_t(1) << i)) w += rank[i];
    }
    count_le += w <= w_obs;
    count_ge += w >= w_obs;
  }
  const double p =
      2.0 * double(std::min(count_le, count_ge)) / double(total);
  return std::min(1.0, p);
}

// Enumeration oracle for the n=3 bootstrap: all 27 resamples by explicit
// nested loops, percentile by the (n-1)q interpolation rule.
std::pair<double, double> bootstrap3_enumeration(const std::vector<double>& v) {
  std::vector<double> stats;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) {
        stats.push_back((v[i] + v[j] + v[k]) / 3.0);
      }
    }
  }
  std::sort(stats.begin(), stats.end());
  auto pct = [&](double q) {
    const double h = q * double(stats.size() - 1);
    const std::size_t lo = std::size_t(h);
    if (lo + 1 >= stats.size()) return stats.back();
    return stats[lo] + (h - double(lo)) * (stats[lo + 1] - stats[lo]);
  };
  return {pct(0.025), pct(0.975)};
}

}  // namespace

TEST_CASE("balanced accuracy") {
  SUBCASE("perfect predictions") {
    CHECK(balanced_accuracy({true, false, true}, {true, false, true}) == 1.0);
  }
  SUBCASE("all-positive predictions on balanced truth") {
    CHECK(balanced_accuracy({true, true, true, true},
                            {true, true, false, false}) == 0.5);
  }
  SUBCASE("hand case: sensitivity 0.8, specificity 0.6") {
    std::vector<bool> truth, pred;
    for (int i = 0; i < 5; ++i) truth.push_back(true);
    for (int i = 0; i < 5; ++i) truth.push_back(false);
    pred = {true, true, true, true, false,      // 4/5 sensitivity
            false, false, false, true, true};   // 3/5 specificity
    CHECK(balanced_accuracy(pred, truth) == doctest::Approx(0.7));
  }
  SUBCASE("single-class truth is an error") {
    CHECK_THROWS(balanced_accuracy({true, false}, {true, true}));
    CHECK_THROWS(balanced_accuracy({true, false}, {false, false}));
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS(balanced_accuracy({true}, {true, false}));
  }
}

TEST_CASE("mean absolute error") {
  CHECK(mae({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(mae({3, 4, 5}, {1, 2, 3}) == 2.0);

  auto rng = testutil::make_rng(61);
  std::uniform_real_distribution<double> dist(-10, 10);
  std::vector<double> a(50), b(50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = dist(rng);
    b[i] = dist(rng);
  }
  double want = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) want += std::abs(a[i] - b[i]);
  want /= 50.0;
  CHECK(mae(a, b) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("pearson correlation") {
  SUBCASE("linear relations") {
    CHECK(pearson_r({1, 2, 3, 4}, {2, 4, 6, 8}) == doctest::Approx(1.0));
    CHECK(pearson_r({1, 2, 3, 4}, {-1, -2, -3, -4}) == doctest::Approx(-1.0));
  }
  SUBCASE("fixed five-point set against the hand-evaluated formula") {
    const std::vector<double> x{1, 2, 4, 5, 8};
    const std::vector<double> y{3, 1, 4, 7, 9};
    // means 4 and 4.8; deviations dx = {-3,-2,0,1,4}, dy = {-1.8,-3.8,-0.8,2.2,4.2}
    // cross sum 5.4+7.6+0+2.2+16.8 = 32; squares 30 and 40.8
    const double want = 32.0 / std::sqrt(30.0 * 40.8);
    CHECK(pearson_r(x, y) == doctest::Approx(want).epsilon(1e-14));
  }
  SUBCASE("zero variance errors") {
    CHECK_THROWS(pearson_r({1, 1, 1}, {1, 2, 3}));
    CHECK_THROWS(pearson_r({1, 2, 3}, {5, 5, 5}));
  }
  SUBCASE("invariance under positive affine maps") {
    auto rng = testutil::make_rng(62);
    std::uniform_real_distribution<double> dist(-5, 5);
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = dist(rng);
      y[i] = dist(rng);
    }
    const double base = pearson_r(x, y);
    std::vector<double> xs = x, ys = y;
    for (double& v : xs) v = 3.5 * v + 11.0;
    for (double& v : ys) v = 0.25 * v - 2.0;
    CHECK(std::abs(pearson_r(xs, ys) - base) <= 1e-12);
  }
}

TEST_CASE("spearman rank correlation") {
  SUBCASE("strictly monotone pairs") {
    CHECK(spearman_rho({1, 5, 9, 20}, {0.1, 0.2, 7.0, 100.0}) ==
          doctest::Approx(1.0));
    CHECK(spearman_rho({1, 5, 9, 20}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  }
  SUBCASE("tied case against explicit average ranks") {
    // x = [1,2,2,3] -> ranks [1, 2.5, 2.5, 4]
    // y = [1,2,3,3] -> ranks [1, 2, 3.5, 3.5]
    const std::vector<double> rx{1, 2.5, 2.5, 4};
    const std::vector<double> ry{1, 2, 3.5, 3.5};
    const double want = pearson_r(rx, ry);
    CHECK(spearman_rho({1, 2, 2, 3}, {1, 2, 3, 3}) == want);
  }
  SUBCASE("equals pearson of average ranks exactly on random tied data") {
    auto rng = testutil::make_rng(63);
    std::uniform_int_distribution<int> small(0, 4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> x(12), y(12);
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = small(rng);
        y[i] = small(rng);
      }
      if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
          std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) {
        continue;
      }
      CHECK(spearman_rho(x, y) == pearson_r(average_ranks(x), average_ranks(y)));
    }
  }
  SUBCASE("invariant under strictly monotone transforms") {
    auto rng = testutil::make_rng(64);
    std::uniform_real_distribution<double> dist(0.1, 5.0);
    std::vector<double> x(15), y(15);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = dist(rng);
      y[i] = dist(rng);
    }
    const double base = spearman_rho(x, y);
    std::vector<double> xs = x;
    for (double& v : xs) v = std::exp(v);
    CHECK(std::abs(spearman_rho(xs, y) - base) <= 1e-12);
  }
  SUBCASE("all-equal input errors") {
    CHECK_THROWS(spearman_rho({2, 2, 2}, {1, 2, 3}));
  }
}

TEST_CASE("bootstrap confidence intervals") {
  SUBCASE("constant values collapse the interval") {
    const auto r = bootstrap_ci({3.0, 3.0, 3.0, 3.0}, Aggregator::Mean, 200, 7);
    CHECK(r.point == 3.0);
    CHECK(r.ci_low == 3.0);
    CHECK(r.ci_high == 3.0);
  }
  SUBCASE("same seed reproduces bit-exactly; different seed differs") {
    const std::vector<double> v{1.0, 4.0, 2.0, 8.0, 5.5, 3.2, 7.7};
    const auto a = bootstrap_ci(v, Aggregator::Mean, 500, 42);
    const auto b = bootstrap_ci(v, Aggregator::Mean, 500, 42);
    CHECK(a.ci_low == b.ci_low);
    CHECK(a.ci_high == b.ci_high);
    const auto c = bootstrap_ci(v, Aggregator::Mean, 500, 43);
    CHECK((c.ci_low != a.ci_low || c.ci_high != a.ci_high));
  }
  SUBCASE("identical across worker counts") {
    const std::vector<double> v{1.0, 4.0, 2.0, 8.0, 5.5};
    const auto a = bootstrap_ci(v, Aggregator::Mean, 1000, 42, 1);
    const auto b = bootstrap_ci(v, Aggregator::Mean, 1000, 42, 4);
    CHECK(a.ci_low == b.ci_low);
    CHECK(a.ci_high == b.ci_high);
  }
  SUBCASE("point sits inside the interval for means") {
    auto rng = testutil::make_rng(65);
    std::uniform_real_distribution<double> dist(0, 10);
    for (int t = 0; t < 10; ++t) {
      std::vector<double> v(12);
      for (double& x : v) x = dist(rng);
      const auto r = bootstrap_ci(v, Aggregator::Mean, 2000, t);
      CHECK(r.ci_low <= r.point);
      CHECK(r.point <= r.ci_high);
    }
  }
  SUBCASE("n=3 exhaustive enumeration matches the oracle") {
    const std::vector<double> v{2.0, 5.0, 11.0};
    const auto r = bootstrap_ci_exhaustive(v, Aggregator::Mean);
    const auto [lo, hi] = bootstrap3_enumeration(v);
    CHECK(r.ci_low == doctest::Approx(lo).epsilon(1e-14));
    CHECK(r.ci_high == doctest::Approx(hi).epsilon(1e-14));
    CHECK(r.point == doctest::Approx(6.0).epsilon(1e-14));
  }
  SUBCASE("median aggregator") {
    const auto r = bootstrap_ci({1.0, 2.0, 100.0}, Aggregator::Median, 500, 3);
    CHECK(r.point == 2.0);
  }
  SUBCASE("interval width shrinks with sample size on average") {
    auto rng = testutil::make_rng(66);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double width_small = 0.0, width_large = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> small(10), large(40);
      for (double& v : small) v = gauss(rng);
      for (double& v : large) v = gauss(rng);
      const auto rs = bootstrap_ci(small, Aggregator::Mean, 400, rep);
      const auto rl = bootstrap_ci(large, Aggregator::Mean, 400, rep);
      width_small += rs.ci_high - rs.ci_low;
      width_large += rl.ci_high - rl.ci_low;
    }
    CHECK(width_large < width_small * 0.8);
  }
  SUBCASE("indexed bootstrap drops undefined resamples") {
    // statistic undefined unless the resample contains index 0
    const auto r = bootstrap_ci_indexed(
        3,
        [](const std::vector<std::size_t>& idx) -> std::optional<double> {
          for (std::size_t i : idx) {
            if (i == 0) return 1.0;
          }
          return std::nullopt;
        },
        300, 9);
    CHECK(r.dropped > 0);
    CHECK(r.point == 1.0);
  }
  SUBCASE("empty input errors") {
    CHECK_THROWS(bootstrap_ci({}, Aggregator::Mean, 100, 1));
  }
}

TEST_CASE("wilcoxon signed-rank test") {
  SUBCASE("equal inputs have no nonzero differences") {
    CHECK_THROWS_WITH_AS(wilcoxon_signed_rank({1, 2, 3}, {1, 2, 3}),
                         doctest::Contains("all differences are zero"),
                         std::runtime_error);
  }
  SUBCASE("five uniformly positive differences") {
    const auto r =
        wilcoxon_signed_rank({2, 3, 4, 5, 6}, {1, 2, 3, 4, 5});
    CHECK(r.exact);
    CHECK(r.n == 5);
    CHECK(r.w_plus == 15.0);
    CHECK(r.p_value == 0.0625);  // 2/2^5
  }
  SUBCASE("zero differences are dropped first") {
    const auto r = wilcoxon_signed_rank({2, 3, 4, 5, 6, 9},
                                        {1, 2, 3, 4, 5, 9});
    CHECK(r.n == 5);
    CHECK(r.p_value == 0.0625);
  }
  SUBCASE("exact path equals the full enumeration oracle") {
    auto rng = testutil::make_rng(67);
    std::uniform_int_distribution<int> len(1, 10);
    std::uniform_int_distribution<int> val(-4, 4);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = len(rng);
      std::vector<double> a(n), b(n);
      for (int i = 0; i < n; ++i) {
        a[i] = val(rng);
        b[i] = val(rng);  // integer draws force plenty of rank ties
      }
      std::vector<double> diffs;
      for (int i = 0; i < n; ++i) {
        if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
      }
      if (diffs.empty()) continue;
      const auto r = wilcoxon_signed_rank(a, b);
      REQUIRE(r.exact);
      CHECK(r.p_value == wilcoxon_enumeration_p(diffs));
      CHECK(r.p_value > 0.0);
      CHECK(r.p_value <= 1.0);
      ++checked;
    }
    CHECK(checked > 60);  // the generator must actually exercise the oracle
  }
  SUBCASE("large samples switch to the normal approximation") {
    std::vector<double> a(30), b(30, 0.0);
    for (int i = 0; i < 30; ++i) a[i] = (i % 2 == 0) ? i + 1.0 : -(i + 1.5);
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(!r.exact);
    CHECK(r.n == 30);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);
  }
  SUBCASE("exact p agrees with the approximation formulas at n=25") {
    auto rng = testutil::make_rng(68);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> a(25), b(25, 0.0);
    for (double& v : a) v = dist(rng);
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    const double mean = 25.0 * 26.0 / 4.0;
    const double var = 25.0 * 26.0 * 51.0 / 24.0;
    const double z = (std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    const double approx = std::erfc(z / std::sqrt(2.0));
    CHECK(r.p_value == doctest::Approx(approx).epsilon(0.15));
  }
}
