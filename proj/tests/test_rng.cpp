#include "wap/rng.hpp"

#include <doctest.h>

#include "wap/common.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace wap;

TEST_CASE("same seed reproduces every stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 200; ++i) {
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(17) == b.uniform_int(17));
  }
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
}

TEST_CASE("uniform stays in the half-open unit interval") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal moments are close to standard") {
  Rng rng(11);
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("uniform_int covers the range and respects bounds") {
  Rng rng(5);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.uniform_int(6);
    CHECK(v >= 0);
    CHECK(v < 6);
    seen.insert(v);
  }
  CHECK(seen.size() == 6);
  CHECK(rng.uniform_int(1) == 0);
  CHECK_THROWS_AS(rng.uniform_int(0), InvalidArgument);
}

TEST_CASE("sample_without_replacement yields sorted distinct picks") {
  Rng rng(3);
  auto picks = rng.sample_without_replacement(100, 10);
  REQUIRE(picks.size() == 10);
  CHECK(std::is_sorted(picks.begin(), picks.end()));
  CHECK(std::set<int>(picks.begin(), picks.end()).size() == 10);
  for (int p : picks) {
    CHECK(p >= 0);
    CHECK(p < 100);
  }

  auto all = rng.sample_without_replacement(5, 5);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), InvalidArgument);
}

TEST_CASE("shuffle permutes without loss") {
  Rng rng(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  auto w = v;
  rng.shuffle(w);
  CHECK(w != v);  // astronomically unlikely to be identity
  std::sort(w.begin(), w.end());
  CHECK(w == v);

  Rng r1(13), r2(13);
  auto a = v, b = v;
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
}

TEST_CASE("fork gives independent reproducible streams") {
  Rng root(21);
  Rng f1 = root.fork(1);
  Rng f2 = root.fork(2);
  Rng f1_again = root.fork(1);
  int same12 = 0;
  for (int i = 0; i < 64; ++i) {
    const auto a = f1.next_u64();
    const auto b = f2.next_u64();
    CHECK(a == f1_again.next_u64());
    same12 += a == b;
  }
  CHECK(same12 == 0);
}

TEST_CASE("forking does not disturb the parent stream") {
  Rng a(4), b(4);
  (void)a.fork(77);
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("splitmix64 advances state and mixes") {
  std::uint64_t s1 = 0, s2 = 0;
  const auto a = splitmix64(s1);
  const auto b = splitmix64(s1);
  CHECK(s1 != 0);
  CHECK(a != b);
  CHECK(a == splitmix64(s2));  // same start state, same output
}
