#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "cia/core.hpp"

using namespace cia;

namespace {

// Rank from integer arithmetic only: alpha = j/100, so
// ceil((1+n)(100-j)/100) = ((1+n)(100-j) + 99) / 100.
std::size_t integer_rank(std::size_t n, int j) { return ((1 + n) * static_cast<std::size_t>(100 - j) + 99) / 100; }

double sort_oracle(std::vector<double> scores, std::size_t k) {
  std::sort(scores.begin(), scores.end());
  return k > scores.size() ? kInf : scores[k - 1];
}

}  // namespace

TEST_CASE("conformal_quantile hand examples") {
  const std::vector<double> a{3.0, 1.0, 2.0};
  CHECK(conformal_quantile(a, 0.5).value == 2.0);
  const std::vector<double> b{5.0};
  CHECK(conformal_quantile(b, 0.1).infinite());
  const std::vector<double> c{0, 0, 0, 0};
  CHECK(conformal_quantile(c, 0.9).value == 0.0);
  CHECK(conformal_quantile(std::vector<double>{}, 0.5).infinite());
}

TEST_CASE("conformal_rank guards integral products") {
  CHECK(conformal_rank(9, 0.1) == 9);
  CHECK(conformal_rank(19, 0.05) == 19);
  CHECK(conformal_rank(99, 0.01) == 99);
  CHECK(conformal_rank(3, 0.5) == 2);
}

TEST_CASE("conformal_quantile rejects bad input") {
  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{1.0, -0.5}, 0.1), InputError);
  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{kInf}, 0.1), InputError);
  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{1.0}, 0.0), InputError);
  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{1.0}, 1.0), InputError);
  CHECK(conformal_quantile(std::vector<double>{-1.0, 2.0}, 0.9, ScoreSign::any).value == -1.0);
  CHECK(conformal_quantile(std::vector<double>{-1.0, 2.0}, 0.5, ScoreSign::any).value == 2.0);
}

TEST_CASE("conformal_quantile matches a full-sort oracle on random instances") {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<std::size_t> size(1, 50);
  std::uniform_int_distribution<int> level(1, 50);
  std::uniform_int_distribution<int> small(0, 5);
  std::exponential_distribution<double> expo(1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = size(rng);
    const int j = level(rng);
    std::vector<double> s(n);
    const bool ties = trial % 3 == 0;
    for (auto& v : s) v = ties ? static_cast<double>(small(rng)) : expo(rng);
    const double alpha = j / 100.0;
    const double expected = sort_oracle(s, integer_rank(n, j));
    REQUIRE(conformal_quantile(s, alpha).value == expected);
    REQUIRE(ScorePool(s).quantile(alpha).value == expected);
  }
}

TEST_CASE("sentinel rule holds exhaustively for n <= 30 on a 0.01 grid") {
  for (std::size_t n = 0; n <= 30; ++n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(i);
    for (int j = 1; j <= 99; ++j) {
      const double alpha = j / 100.0;
      const std::size_t k = integer_rank(n, j);
      INFO("n=" << n << " j=" << j);
      REQUIRE(conformal_rank(n, alpha) == std::max<std::size_t>(k, 1));
      REQUIRE(conformal_quantile(s, alpha).infinite() == (k > n));
    }
  }
}

TEST_CASE("conformal_quantile is monotone in alpha and permutation invariant") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(1 + trial % 40);
    for (auto& v : s) v = u(rng);
    double prev = kInf;
    for (int j = 1; j <= 99; ++j) {
      const double q = conformal_quantile(s, j / 100.0).value;
      REQUIRE(q <= prev);
      prev = q;
    }
    auto shuffled = s;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (double alpha : {0.05, 0.1, 0.3, 0.5}) REQUIRE(conformal_quantile(s, alpha).value == conformal_quantile(shuffled, alpha).value);
  }
}

TEST_CASE("ScorePool leave-one-out equals recomputation without the member") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> small(0, 6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(1 + trial % 25);
    for (auto& v : s) v = static_cast<double>(small(rng));
    const ScorePool pool(s);
    const std::size_t drop = static_cast<std::size_t>(trial) % s.size();
    auto rest = s;
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(drop));
    for (int j = 1; j <= 99; j += 7) {
      const double alpha = j / 100.0;
      REQUIRE(pool.quantile_without(s[drop], alpha).value == conformal_quantile(rest, alpha).value);
    }
  }
  CHECK_THROWS_AS(ScorePool(std::vector<double>{1.0}).quantile_without(2.0, 0.1), InputError);
}

TEST_CASE("group_sum examples") {
  std::vector<LabeledSample> s(2);
  s[0].label = 1.0;
  s[1].label = 2.5;
  CHECK(group_sum(s, Field::label) == 3.5);
  CHECK(group_sum(std::span<const LabeledSample>{}, Field::label) == 0.0);
  s[0].point_pred = -1.0;
  s[1].point_pred = 1.0;
  CHECK(group_sum(s, Field::point_pred) == 0.0);
  CHECK_THROWS_AS(group_sum(s, Field::quant_lo), InputError);
}

TEST_CASE("intervals, groups and stores") {
  const IntervalPrediction iv{0, -1.0, 2.0, 0.1};
  CHECK(iv.finite());
  CHECK(iv.width() == 3.0);
  CHECK(iv.contains(2.0));
  CHECK_FALSE(iv.contains(2.5));
  const IntervalPrediction inf{};
  CHECK(inf.width() == kInf);
  CHECK(inf.contains(1e300));

  const auto g = make_group(3, {5, 1, 5, 2});
  CHECK(g.members == std::vector<SampleIndex>{1, 2, 5});
  CHECK_THROWS_AS(make_group(1, {}), InputError);

  LabeledSample a;
  a.index = 4;
  a.quant_lo = 2.0;
  a.quant_hi = 1.0;
  CHECK_THROWS_AS(validate(a), InputError);
  a.quant_hi = 3.0;
  LabeledSample b = a;
  CHECK_THROWS_AS(SampleStore({a, b}), InputError);
  b.index = 9;
  const SampleStore store({a, b});
  CHECK(store.position(9) == 1);
  CHECK_FALSE(store.contains(5));
  CHECK_THROWS_AS(store.at(5), InputError);
}
