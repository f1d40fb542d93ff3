#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "weaksan/analysis.hpp"
#include "weaksan/errors.hpp"

using namespace weaksan;
using doctest::Approx;

TEST_CASE("expected_same_fraction") {
  CHECK(expected_same_fraction(0.05, 0.8, 0.2) == Approx(0.77).epsilon(1e-12));
  CHECK(expected_same_fraction(0.3, 1.0, 0.0) == Approx(0.7).epsilon(1e-12));
  CHECK(expected_same_fraction(0.2, 0.9, 0.1) == Approx(0.74).epsilon(1e-12));
  CHECK_THROWS_AS(expected_same_fraction(1.2, 0.8, 0.2), ValidationError);
  CHECK_THROWS_AS(expected_same_fraction(0.1, -0.1, 0.2), ValidationError);
}

TEST_CASE("exact poison rates, worked example") {
  const auto r = exact_poison_rates(0.05, 0.8, 0.2);
  CHECK(r.eps_same == Approx(1.0 / 77.0).epsilon(1e-12));
  CHECK(r.eps_diff == Approx(0.04 / 0.23).epsilon(1e-12));
  CHECK(r.method == RateMethod::Exact);
  REQUIRE(r.k.has_value());
  CHECK(*r.k == Approx(4.0));
  CHECK(exact_poison_rates(0.05, 0.5, 0.5).eps_same == Approx(0.05).epsilon(1e-12));
}

TEST_CASE("exact poison rates name the empty subset") {
  try {
    exact_poison_rates(0.0, 0.0, 0.3);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("D_same") != std::string::npos);
  }
  try {
    exact_poison_rates(0.0, 1.0, 0.3);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("D_diff") != std::string::npos);
  }
}

TEST_CASE("binary asr from acc") {
  CHECK(binary_asr_from_acc(0.8) == Approx(0.2));
  CHECK(binary_asr_from_acc(1.0) == 0.0);
  CHECK(binary_asr_from_acc(0.5) == 0.5);
}

TEST_CASE("approximate poison rates") {
  const auto r = approx_poison_rates(0.05, 0.8);
  CHECK(r.eps_diff == Approx(0.2).epsilon(1e-12));
  CHECK(r.eps_same == Approx(0.0125).epsilon(1e-12));
  CHECK(r.warnings.empty());
  const auto wide = approx_poison_rates(0.2, 0.8);
  CHECK(wide.eps_diff == Approx(0.8).epsilon(1e-12));
  CHECK_FALSE(wide.warnings.empty());
  const auto capped = approx_poison_rates(0.3, 0.9);
  CHECK(capped.eps_diff == 1.0);
  CHECK(capped.warnings.size() == 2);
  CHECK_THROWS_AS(approx_poison_rates(0.05, 0.5), ValidationError);
  const auto perfect = approx_poison_rates(0.05, 1.0);
  CHECK(perfect.eps_same == 0.0);
  CHECK_FALSE(perfect.k.has_value());
}

TEST_CASE("subset theorem examples") {
  const auto a = subset_theorem_check(0.05, 0.8, 0.2);
  CHECK(a.better_than_random);
  CHECK(a.cleaner);
  const auto b = subset_theorem_check(0.05, 0.5, 0.5);
  CHECK_FALSE(b.better_than_random);
  CHECK_FALSE(b.cleaner);
}

TEST_CASE("subset theorem on the 243-point grid") {
  std::size_t points = 0;
  for (double eps : {0.01, 0.05, 0.2}) {
    for (int i = 1; i <= 9; ++i) {
      for (int j = 1; j <= 9; ++j) {
        const auto c = subset_theorem_check(eps, i / 10.0, j / 10.0);
        CHECK(c.better_than_random == c.cleaner);
        ++points;
      }
    }
  }
  CHECK(points == 243);
}

TEST_CASE("theorem holds on a dense grid") {
  for (int e = 1; e < 50; ++e) {
    const double eps = e / 50.0;
    for (int i = 1; i < 40; ++i) {
      for (int j = 1; j < 40; ++j) {
        const double acc = i / 40.0, asr = j / 40.0;
        const auto r = exact_poison_rates(eps, acc, asr);
        const int lhs = (acc > asr) - (acc < asr);
        // asr == acc gives eps_same == eps up to rounding.
        if (lhs == 0) {
          CHECK(r.eps_same == Approx(eps).epsilon(1e-12));
          continue;
        }
        const int rhs = (eps > r.eps_same) - (eps < r.eps_same);
        CHECK(lhs == rhs);
      }
    }
  }
}

TEST_CASE("mass conservation for random valid inputs") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 10000; ++n) {
    const double eps = u(gen), acc = u(gen), asr = u(gen);
    const double same = expected_same_fraction(eps, acc, asr);
    if (same <= 0.0 || same >= 1.0) continue;
    const auto r = exact_poison_rates(eps, acc, asr);
    CHECK(std::abs(same * r.eps_same + (1.0 - same) * r.eps_diff - eps) <= 1e-12);
    CHECK(r.eps_same >= 0.0);
    CHECK(r.eps_same <= 1.0);
    CHECK(r.eps_diff >= 0.0);
    CHECK(r.eps_diff <= 1.0);
  }
}

TEST_CASE("binary reduction matches the closed form") {
  for (double eps : {0.01, 0.05, 0.1, 0.3}) {
    for (double acc : {0.55, 0.7, 0.8, 0.9, 0.99}) {
      const auto r = exact_poison_rates(eps, acc, binary_asr_from_acc(acc));
      const double closed = 1.0 / (1.0 + ((1.0 - eps) / eps) * (acc / (1.0 - acc)));
      CHECK(std::abs(r.eps_same - closed) <= 1e-12);
    }
  }
}

TEST_CASE("approximation error stays within 6% in the small-eps regime") {
  for (double eps : {0.001, 0.01, 0.03, 0.05}) {
    for (double acc : {0.7, 0.75, 0.8, 0.85, 0.9, 0.95}) {
      const double exact = exact_poison_rates(eps, acc, 1.0 - acc).eps_same;
      const double approx = approx_poison_rates(eps, acc).eps_same;
      CHECK(std::abs(approx - exact) / exact <= 0.06);
    }
  }
}

TEST_CASE("t bounds") {
  const auto b = t_bounds(0.05, 0.8);
  REQUIRE(b.upper.has_value());
  CHECK(*b.upper == 16.0);
  CHECK(b.lower == 1.0);
  CHECK(b.raw_lower < 1.0);
  CHECK(b.admits(2.0));
  CHECK_FALSE(b.admits(1.0));
  CHECK_FALSE(b.admits(16.0));

  const auto small = t_bounds(0.05, 0.6);
  CHECK(*small.upper == Approx(2.25).epsilon(1e-12));
  CHECK(small.admits(2.0));
  CHECK_FALSE(small.admits(3.0));

  CHECK(t_upper_bound(0.8) == 16.0);
  CHECK_FALSE(t_upper_bound(1.0).has_value());
  CHECK_FALSE(t_bounds(0.05, 1.0).upper.has_value());
  CHECK(t_bounds(0.05, 1.0).admits(1e9));
  CHECK_THROWS_AS(t_bounds(0.2, 0.9), ValidationError);
  CHECK_THROWS_AS(t_bounds(0.05, 0.5), ValidationError);
}

TEST_CASE("validate_t") {
  CHECK_NOTHROW(validate_t(2.0, 0.8));
  CHECK_THROWS_AS(validate_t(1.0, 0.8), ValidationError);
  CHECK_THROWS_AS(validate_t(16.0, 0.8), ValidationError);
  CHECK_THROWS_AS(validate_t(3.0, 0.6), ValidationError);
  CHECK_THROWS_AS(validate_t(2.0, 0.5), ValidationError);
  CHECK_NOTHROW(validate_t(100.0, 1.0));
}

namespace {

PoisonMask mask_of(std::vector<DocId> ids) {
  PoisonMask m;
  m.indices = ids;
  for (DocId id : ids) m.original_labels[id] = 1;
  return m;
}

}  // namespace

TEST_CASE("compare actual vs estimated counts consistently") {
  Partition p;
  for (DocId i = 0; i < 770; ++i) p.same.push_back(i);
  for (DocId i = 770; i < 1000; ++i) p.diff.push_back(i);
  std::vector<DocId> poisoned;
  for (DocId i = 0; i < 10; ++i) poisoned.push_back(i);
  for (DocId i = 770; i < 810; ++i) poisoned.push_back(i);
  const auto c = compare_actual_vs_estimated(p, mask_of(poisoned), 0.8, 0.2);
  CHECK(c.eps == Approx(0.05));
  CHECK(c.same_poison == 10);
  CHECK(c.diff_poison == 40);
  CHECK(*c.actual_eps_same == Approx(1.0 / 77.0));
  CHECK(static_cast<double>(c.poison_count) ==
        Approx(c.same_count * *c.actual_eps_same + c.diff_count * *c.actual_eps_diff));
  REQUIRE(c.exact.has_value());
  CHECK(c.exact->eps_same == Approx(1.0 / 77.0));
  REQUIRE(c.approx.has_value());
  CHECK(c.approx->eps_same == Approx(0.0125));

  const auto j = to_json(c);
  CHECK(j["rows"]["exact"]["abs_dev_eps_same"].get<double>() < 1e-12);
  CHECK(j["rows"]["actual"].contains("eps_same"));
  const auto row = to_csv(c);
  const auto header = comparison_csv_header();
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
}

TEST_CASE("compare with a perfect model reports zero everywhere") {
  Partition p;
  for (DocId i = 0; i < 95; ++i) p.same.push_back(i);
  for (DocId i = 95; i < 100; ++i) p.diff.push_back(i);
  const auto c = compare_actual_vs_estimated(p, mask_of({95, 96, 97, 98, 99}), 1.0, 0.0);
  CHECK(*c.actual_eps_same == 0.0);
  CHECK(c.exact->eps_same == 0.0);
  CHECK(c.approx->eps_same == 0.0);
}

TEST_CASE("compare rejects masks outside the partition") {
  Partition p;
  p.same = {0, 1};
  p.diff = {2};
  CHECK_THROWS_AS(compare_actual_vs_estimated(p, mask_of({7}), 0.8, 0.2), ValidationError);
  const auto undefined = compare_actual_vs_estimated(p, mask_of({2}), 0.5, 0.5);
  CHECK_FALSE(undefined.approx.has_value());
  CHECK_FALSE(undefined.notes.empty());
}
