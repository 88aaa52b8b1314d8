#include "wap/metrics.hpp"

#include <doctest.h>

#include <vector>

#include "wap/rng.hpp"

using namespace wap;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm;
  const int c = static_cast<int>(rows.size());
  cm.counts.setZero(c, c);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) cm.counts(i, j) = rows[i][j];
  return cm;
}

}  // namespace

TEST_CASE("confusion counts pairs by (true, predicted)") {
  ConfusionMatrix cm = confusion({0, 1}, {1, 1}, 2);
  CHECK(cm.counts(0, 1) == 1);
  CHECK(cm.counts(1, 1) == 1);
  CHECK(cm.counts(0, 0) == 0);
  CHECK(cm.total() == 2);

  SUBCASE("perfect predictions are diagonal") {
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(i % 3);
    ConfusionMatrix diag = confusion(labels, labels, 3);
    CHECK(diag.counts.diagonal().sum() == 10);
    CHECK(diag.total() == 10);
  }
  SUBCASE("empty input gives an all-zero matrix") {
    ConfusionMatrix empty = confusion({}, {}, 3);
    CHECK(empty.classes() == 3);
    CHECK(empty.total() == 0);
  }
  SUBCASE("label range is enforced") {
    CHECK_THROWS_AS(confusion({0, 2}, {0, 0}, 2), InvalidArgument);
    CHECK_THROWS_AS(confusion({0, 0}, {0, -1}, 2), InvalidArgument);
    CHECK_THROWS_AS(confusion({0, 0}, {0}, 2), InvalidArgument);
  }
}

TEST_CASE("metrics on a perfect diagonal are all 1") {
  ConfusionMatrix cm = from_rows({{5, 0}, {0, 5}});
  CHECK(ua(cm) == 1.0);
  CHECK(wa(cm) == 1.0);
  CHECK(macro_f1(cm) == 1.0);
}

TEST_CASE("skewed matrix separates WA from UA and F1") {
  // True counts 9 and 1, everything predicted class 0.
  ConfusionMatrix cm = from_rows({{9, 0}, {1, 0}});
  CHECK(wa(cm) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(ua(cm) == doctest::Approx(0.5).epsilon(1e-12));
  // class 0: precision 9/10, recall 1 -> F1 = 18/19; class 1: 0/0 -> 0.
  CHECK(macro_f1(cm) == doctest::Approx(9.0 / 19.0).epsilon(1e-12));
}

TEST_CASE("uniform confusion gives one half everywhere") {
  ConfusionMatrix cm = from_rows({{1, 1}, {1, 1}});
  CHECK(ua(cm) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wa(cm) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(macro_f1(cm) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zero-support classes are flagged and contribute zero recall") {
  ConfusionMatrix cm = from_rows({{4, 0, 0}, {0, 4, 0}, {0, 0, 0}});
  std::vector<int> empty;
  const double value = ua(cm, &empty);
  CHECK(value == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  REQUIRE(empty.size() == 1);
  CHECK(empty[0] == 2);
}

TEST_CASE("empty confusion matrix is an error") {
  ConfusionMatrix cm;
  cm.counts.resize(0, 0);
  CHECK_THROWS_AS(ua(cm), InvalidArgument);
  CHECK_THROWS_AS(wa(cm), InvalidArgument);
  CHECK_THROWS_AS(macro_f1(cm), InvalidArgument);
}

TEST_CASE("WA equals independently recomputed accuracy on random label sets") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(5));
    const int n = 30 + static_cast<int>(rng.uniform_int(100));
    std::vector<int> truth, pred;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      truth.push_back(static_cast<int>(rng.uniform_int(c)));
      pred.push_back(static_cast<int>(rng.uniform_int(c)));
      correct += truth.back() == pred.back();
    }
    ConfusionMatrix cm = confusion(truth, pred, c);
    CHECK(wa(cm) == doctest::Approx(static_cast<double>(correct) / n).epsilon(1e-12));

    // UA against a direct per-class loop.
    double recall_sum = 0;
    for (int k = 0; k < c; ++k) {
      int support = 0, hit = 0;
      for (int i = 0; i < n; ++i) {
        if (truth[static_cast<std::size_t>(i)] == k) {
          support++;
          hit += pred[static_cast<std::size_t>(i)] == k;
        }
      }
      if (support > 0) recall_sum += static_cast<double>(hit) / support;
    }
    CHECK(ua(cm) == doctest::Approx(recall_sum / c).epsilon(1e-12));
  }
}
