#include "gmilab/transport.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>

using namespace gmilab;

namespace {

Mat points(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<long>(rows.size()), static_cast<long>(rows.begin()->size()));
  long i = 0;
  for (const auto& r : rows) {
    long j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("w1_exact worked examples") {
  std::mt19937_64 rng(1);
  const Mat a = oracle::gaussian(20, 3, rng);
  CHECK(w1_exact(a, a).value == doctest::Approx(0.0));
  CHECK(w1_exact(points({{0, 0}}), points({{3, 4}})).value == doctest::Approx(5.0));
  CHECK(w1_exact(points({{0}, {1}}), points({{0}, {3}})).value == doctest::Approx(1.0));
  CHECK_THROWS_AS(w1_exact(Mat::Zero(513, 1), Mat::Zero(2, 1)), SizeGuardError);
}

TEST_CASE("the subset-DP oracle agrees with permutation enumeration") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const Mat a = oracle::gaussian(6, 2, rng), b = oracle::gaussian(6, 2, rng, 2.0);
    std::vector<long> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (long i = 0; i < 6; ++i) c += (a.row(i) - b.row(perm[i])).norm();
      best = std::min(best, c / 6.0);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(oracle::brute_force_w1(a, b) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("w1_exact matches brute-force assignment, including unequal sizes") {
  std::mt19937_64 rng(2);
  const std::vector<std::pair<long, long>> sizes = {{3, 3}, {5, 5}, {7, 7}, {2, 3}, {3, 4}, {4, 6}, {1, 5}};
  for (auto [n, m] : sizes)
    for (int rep = 0; rep < 3; ++rep) {
      const Mat a = oracle::gaussian(n, 2, rng), b = oracle::gaussian(m, 2, rng, 2.0);
      CHECK(w1_exact(a, b).value == doctest::Approx(oracle::brute_force_w1(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("w1_exact satisfies the triangle inequality, translation identity and scaling") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const long n = 8 + static_cast<long>(rng() % 57);
    const Mat a = oracle::gaussian(n, 3, rng), b = oracle::gaussian(n, 3, rng, 1.5),
              c = oracle::gaussian(n, 3, rng, 0.5);
    CHECK(w1_exact(a, c).value <= w1_exact(a, b).value + w1_exact(b, c).value + 1e-7);

    const Vec v = oracle::gaussian(1, 3, rng).row(0).transpose();
    const Mat moved = a.rowwise() + v.transpose();
    CHECK(w1_exact(a, moved).value == doctest::Approx(v.norm()).epsilon(1e-9));
    CHECK(w1_exact(2.5 * a, 2.5 * b).value == doctest::Approx(2.5 * w1_exact(a, b).value).epsilon(1e-9));
  }
}

TEST_CASE("w1_sliced examples") {
  std::mt19937_64 rng(4);
  const Mat a = oracle::gaussian(30, 4, rng);
  CHECK(w1_sliced(a, a, 64, 1).value == doctest::Approx(0.0));

  const Mat x = oracle::gaussian(25, 1, rng), y = oracle::gaussian(31, 1, rng, 3.0);
  for (int m : {8, 13, 100})
    CHECK(w1_sliced(x, y, m, 9).value == doctest::Approx(w1_exact(x, y).value).epsilon(1e-9));

  const Mat g1 = oracle::gaussian(128, 8, rng), g2 = oracle::gaussian(128, 8, rng, 1.3);
  const auto s = w1_sliced(g1, g2, 256, 5);
  CHECK(s.value <= w1_exact(g1, g2).value + 3 * s.mc_std);
  CHECK(w1_sliced(g1, g2, 256, 5).value == s.value);
  CHECK_THROWS_AS(w1_sliced(g1, g2, 4, 5), PreconditionError);
}

TEST_CASE("w1_sinkhorn examples") {
  std::mt19937_64 rng(6);
  const Mat a = oracle::gaussian(20, 2, rng);
  CHECK(w1_sinkhorn(a, a, 1e-3, 2000).value <= 1e-3);
  const auto two = w1_sinkhorn(points({{0, 0}}), points({{3, 4}}), 1e-3, 2000);
  CHECK(two.value == doctest::Approx(5.0).epsilon(0.02));
  CHECK_THROWS_AS(w1_sinkhorn(a, a, 0.0, 10), PreconditionError);
}

TEST_CASE("stratified_w1 weights per-stratum distances by stratum probability") {
  std::mt19937_64 rng(7);
  const Mat x = oracle::gaussian(40, 2, rng);
  LabelVector strata(40);
  for (int i = 0; i < 40; ++i) strata[i] = i < 10 ? 0 : (i < 25 ? 1 : 2);
  const auto text = oracle::make_set(x, {}, strata);
  W1Options exact;
  exact.method = W1Method::exact;
  CHECK(stratified_w1(PairedLaws(text, text), exact).value == doctest::Approx(0.0));

  const double delta = 1.7;
  Mat moved = x;
  for (int i = 0; i < 10; ++i) moved(i, 1) += delta;
  const PairedLaws one(oracle::make_set(moved, {}, strata, LawTag::modal), text);
  // Sets are stored as float32, so the translation is exact only to float rounding.
  CHECK(stratified_w1(one, exact).value == doctest::Approx(0.25 * delta).epsilon(1e-6));

  const LabelVector single(40, 0);
  const Mat y = oracle::gaussian(40, 2, rng, 2.0);
  const PairedLaws pooled(oracle::make_set(y, {}, single, LawTag::modal), oracle::make_set(x, {}, single));
  CHECK(stratified_w1(pooled, exact).value == doctest::Approx(w1_exact(y, x).value));
}
