#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "lookback/order_stats.hpp"

using namespace lookback;

TEST_CASE("small pinned example") {
  OrderStatAccumulator acc;
  acc.insert(0.2);
  acc.insert(0.9);
  acc.insert(0.5);
  CHECK(acc.count() == 3);
  CHECK(acc.total() == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(acc.sum_top(0) == 0.0);
  CHECK(acc.sum_top(2) == doctest::Approx(1.4).epsilon(1e-15));
  CHECK(acc.sum_bottom(2) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(acc.sum_top(3) == doctest::Approx(1.6).epsilon(1e-15));
  CHECK_THROWS_AS(acc.sum_top(4), std::out_of_range);
  CHECK_THROWS_AS(acc.sum_bottom(-1), std::out_of_range);
}

TEST_CASE("duplicates are retained") {
  OrderStatAccumulator acc;
  for (int i = 0; i < 5; ++i) acc.insert(1.0);
  acc.insert(2.0);
  CHECK(acc.count() == 6);
  CHECK(acc.sum_top(2) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(acc.sum_bottom(5) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("non-finite values rejected") {
  OrderStatAccumulator acc;
  CHECK_THROWS_AS(acc.insert(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(acc.insert(1.0 / 0.0), std::invalid_argument);
  CHECK(acc.count() == 0);
}

TEST_CASE("partial sums agree with a sort oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  OrderStatAccumulator acc;
  std::vector<double> vals;
  for (int i = 0; i < 1000; ++i) {
    double x = U(rng);
    if (i % 7 == 0) x = 0.25;  // force duplicates
    acc.insert(x);
    vals.push_back(x);
  }
  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  RunningSum pre;
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    pre.add(sorted[i]);
    prefix[i + 1] = pre.value();
  }
  double tot = prefix.back();
  for (long long j = 0; j <= acc.count(); ++j) {
    double sb = acc.sum_bottom(j);
    double st = acc.sum_top(j);
    CHECK(std::abs(sb - prefix[static_cast<std::size_t>(j)]) <= 1e-12);
    CHECK(std::abs(st - (tot - prefix[sorted.size() - static_cast<std::size_t>(j)])) <= 1e-12);
    // complement identity
    CHECK(std::abs(st + acc.sum_bottom(acc.count() - j) - acc.total()) <= 1e-12);
  }
}

TEST_CASE("running total matches compensated sequential sum") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  OrderStatAccumulator acc;
  RunningSum ks;
  for (int i = 0; i < 10000; ++i) {
    double x = U(rng);
    acc.insert(x);
    ks.add(x);
  }
  CHECK(std::abs(acc.total() - ks.value()) <= 1e-10);
  acc.force_audit();
}

TEST_CASE("insert comparison cost grows logarithmically") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> per_insert;
  for (int p = 10; p <= 16; p += 3) {
    OrderStatAccumulator acc;
    long long n = 1LL << p;
    for (long long i = 0; i < n; ++i) acc.insert(U(rng));
    per_insert.push_back(static_cast<double>(acc.comparisons()) / static_cast<double>(n));
  }
  // 16/10 = 1.6 in the log ratio; allow slack for the constant term.
  CHECK(per_insert.back() / per_insert.front() <= 2.0);
  CHECK(per_insert.back() <= 100.0);
  CHECK(per_insert.front() >= 5.0);
}
