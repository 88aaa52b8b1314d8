#include "wap/codebook.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"

using namespace wap;

namespace {

Mat random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Codebook book_from_rows(const Mat& prototypes) {
  Codebook cb;
  cb.prototypes = prototypes;
  cb.counts.assign(static_cast<std::size_t>(prototypes.rows()), 0);
  cb.stale.assign(static_cast<std::size_t>(prototypes.rows()), 0);
  return cb;
}

}  // namespace

TEST_CASE("init_codebook samples distinct pool rows") {
  Rng rng(1);
  Mat pool = random_mat(100, 6, rng);
  Codebook cb = init_codebook(4, pool, 9);
  REQUIRE(cb.k() == 4);
  REQUIRE(cb.dim() == 6);
  for (int i = 0; i < 4; ++i) {
    bool found = false;
    for (int r = 0; r < pool.rows() && !found; ++r)
      found = (cb.prototypes.row(i) - pool.row(r)).norm() == 0.0;
    CHECK(found);
  }
  for (auto c : cb.counts) CHECK(c == 0);

  Codebook again = init_codebook(4, pool, 9);
  CHECK(again.prototypes == cb.prototypes);

  CHECK_THROWS_WITH_AS(init_codebook(1024, pool, 9), doctest::Contains("insufficient warm-up"),
                       InvalidArgument);
  CHECK_THROWS_AS(init_codebook(1, pool, 9), InvalidArgument);
}

TEST_CASE("assign picks the nearest prototype with low-index ties") {
  Mat p(3, 2);
  p << 0, 0, 1, 0, 0, 1;
  Codebook cb = book_from_rows(p);

  RowVec z(2);
  z << 0.9, 0.1;
  CHECK(assign(cb, z) == 1);

  z << 0, 1;
  CHECK(assign(cb, z) == 2);  // exact match, zero distance

  z << 0.5, 0.5;  // equidistant to (1,0) and (0,1); also farther from (0,0)? no:
  // d((0,0)) = 0.5, d((1,0)) = d((0,1)) = 0.5 -> three-way tie -> lowest index.
  CHECK(assign(cb, z) == 0);

  Mat p2(3, 2);
  p2 << 5, 5, 1, 0, 0, 1;
  Codebook cb2 = book_from_rows(p2);
  CHECK(assign(cb2, z) == 1);  // tie between indices 1 and 2 -> 1

  SUBCASE("appending a farther prototype changes nothing") {
    Mat p3(4, 2);
    p3 << 5, 5, 1, 0, 0, 1, 50, 50;
    Codebook cb3 = book_from_rows(p3);
    CHECK(assign(cb3, z) == assign(cb2, z));
  }
}

TEST_CASE("update_prototype follows the stated step rule") {
  DistillConfig fixed;
  fixed.count_based_eta = false;
  fixed.fixed_eta = 0.5;

  Mat p(2, 2);
  p << 0, 0, 9, 9;
  Codebook cb = book_from_rows(p);
  RowVec z(2);
  z << 1, 1;

  update_prototype(cb, z, 0, fixed);
  CHECK(cb.prototypes(0, 0) == doctest::Approx(0.5));
  CHECK(cb.prototypes(0, 1) == doctest::Approx(0.5));
  CHECK(cb.counts[0] == 1);

  SUBCASE("unit step replaces the prototype") {
    DistillConfig full;
    full.count_based_eta = false;
    full.fixed_eta = 1.0;
    Codebook cb2 = book_from_rows(p);
    update_prototype(cb2, z, 1, full);
    CHECK((cb2.prototypes.row(1) - z).norm() == 0.0);
  }

  SUBCASE("every valid step contracts toward the sample") {
    Rng rng(3);
    for (double eta : {0.05, 0.3, 0.77, 1.0}) {
      DistillConfig dc;
      dc.count_based_eta = false;
      dc.fixed_eta = eta;
      Codebook cb3 = book_from_rows(random_mat(2, 4, rng));
      RowVec target = random_mat(1, 4, rng).row(0);
      const double before = (cb3.prototypes.row(0) - target).norm();
      update_prototype(cb3, target, 0, dc);
      const double after = (cb3.prototypes.row(0) - target).norm();
      CHECK(after == doctest::Approx((1.0 - eta) * before).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(update_prototype(cb, z, 5, fixed), InvalidArgument);
}

TEST_CASE("count-based steps keep each prototype at the running mean") {
  DistillConfig dc;  // count-based by default
  Rng rng(11);
  Codebook cb = book_from_rows(random_mat(3, 4, rng));
  std::vector<Mat> assigned(3, Mat(0, 4));

  for (int step = 0; step < 200; ++step) {
    RowVec z = random_mat(1, 4, rng).row(0);
    const int k = assign(cb, z);
    update_prototype(cb, z, k, dc);
    Mat& bucket = assigned[static_cast<std::size_t>(k)];
    bucket.conservativeResize(bucket.rows() + 1, Eigen::NoChange);
    bucket.row(bucket.rows() - 1) = z;
  }

  for (int k = 0; k < 3; ++k) {
    const Mat& bucket = assigned[static_cast<std::size_t>(k)];
    if (bucket.rows() == 0) continue;
    RowVec mean = bucket.colwise().mean();
    CHECK((cb.prototypes.row(k) - mean).norm() < 1e-9);
    CHECK(cb.counts[static_cast<std::size_t>(k)] == bucket.rows());
  }
}

TEST_CASE("vq_loss equals the brute-force quantization error") {
  SUBCASE("exact hits cost nothing") {
    Mat p(2, 2);
    p << 1, 2, 3, 4;
    Codebook cb = book_from_rows(p);
    Mat batch = p;
    CHECK(vq_loss(cb, batch) == 0.0);
  }
  SUBCASE("one-dimensional arithmetic") {
    Mat p(2, 1);
    p << 1, 100;
    Codebook cb = book_from_rows(p);
    Mat batch(2, 1);
    batch << 0, 2;
    CHECK(vq_loss(cb, batch) == doctest::Approx(2.0));
  }
  SUBCASE("oracle equivalence on random instances") {
    Rng rng(5);
    for (int trial = 0; trial < 120; ++trial) {
      const int k = 2 + static_cast<int>(rng.uniform_int(4));
      const int n = 5 + static_cast<int>(rng.uniform_int(20));
      const int d = 1 + static_cast<int>(rng.uniform_int(3));
      Codebook cb = book_from_rows(random_mat(k, d, rng));
      Mat batch = random_mat(n, d, rng);

      double brute = 0.0;
      for (int i = 0; i < n; ++i) {
        double best = (batch.row(i) - cb.prototypes.row(0)).squaredNorm();
        for (int j = 1; j < k; ++j)
          best = std::min(best, (batch.row(i) - cb.prototypes.row(j)).squaredNorm());
        brute += best;
      }
      CHECK(vq_loss(cb, batch) == doctest::Approx(brute).epsilon(1e-12));
    }
  }
}

TEST_CASE("cosine logits hit the closed-form landmarks") {
  Mat p(3, 3);
  p << 2, 0, 0, 0, 5, 0, -1, 0, 0;
  Codebook cb = book_from_rows(p);
  RowVec z(3);
  z << 0.5, 0, 0;
  RowVec logits = cosine_logits(cb, z, 0.1);
  CHECK(logits(0) == doctest::Approx(10.0).epsilon(1e-6));   // parallel: 1/tau
  CHECK(logits(1) == doctest::Approx(0.0).epsilon(1e-12));   // orthogonal
  CHECK(logits(2) == doctest::Approx(-10.0).epsilon(1e-6));  // anti-parallel: -1/tau
  CHECK_THROWS_AS(cosine_logits(cb, z, 0.0), InvalidArgument);
}

TEST_CASE("pce_loss matches an independent cross-entropy computation") {
  SUBCASE("uniform logits give ln K") {
    // Prototypes along four axes of a 5-D space, student embedding on the fifth:
    // all cosines are zero, so the softmax is uniform.
    Mat p = Mat::Zero(4, 5);
    for (int i = 0; i < 4; ++i) p(i, i) = 1.0;
    Codebook cb = book_from_rows(p);
    Mat z = Mat::Zero(2, 5);
    z(0, 4) = 3.0;
    z(1, 4) = -2.0;
    const double loss = pce_loss(z, {0, 1}, {2, 0}, cb, 0.1);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }

  SUBCASE("aligned embedding with a small temperature drives the loss to zero") {
    Mat p(3, 2);
    p << 1, 0, 0, 1, -1, 0;
    Codebook cb = book_from_rows(p);
    Mat z(1, 2);
    z << 4, 0;  // parallel to prototype 0
    const double loss = pce_loss(z, {0}, {0}, cb, 0.01);
    CHECK(loss < 1e-6);
  }

  SUBCASE("random instances against a direct reference") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 2 + static_cast<int>(rng.uniform_int(5));
      const int d = 2 + static_cast<int>(rng.uniform_int(4));
      const int t = 3 + static_cast<int>(rng.uniform_int(5));
      Codebook cb = book_from_rows(random_mat(k, d, rng));
      Mat z = random_mat(t, d, rng);
      std::vector<int> masked, labels;
      for (int i = 0; i < t; i += 2) {
        masked.push_back(i);
        labels.push_back(static_cast<int>(rng.uniform_int(k)));
      }
      const double tau = 0.1 + rng.uniform();

      double reference = 0.0;
      for (std::size_t j = 0; j < masked.size(); ++j) {
        RowVec logits(k);
        for (int q = 0; q < k; ++q) {
          const RowVec zr = z.row(masked[j]);
          const RowVec pr = cb.prototypes.row(q);
          logits(q) = zr.dot(pr) / (zr.norm() * pr.norm() + 1e-8) / tau;
        }
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        reference += lse - logits(labels[j]);
      }
      reference /= static_cast<double>(masked.size());

      CHECK(pce_loss(z, masked, labels, cb, tau) == doctest::Approx(reference).epsilon(1e-10));
    }
  }

  SUBCASE("invariant under positive rescaling of the student embedding") {
    Rng rng(13);
    Codebook cb = book_from_rows(random_mat(5, 4, rng));
    Mat z = random_mat(6, 4, rng);
    const double base = pce_loss(z, {1, 3}, {2, 4}, cb, 0.2);
    // Not bit-exact: the epsilon guard in the cosine denominator shifts by the
    // scale factor, contributing a relative difference of order 1e-8.
    Mat scaled = 37.5 * z;
    CHECK(pce_loss(scaled, {1, 3}, {2, 4}, cb, 0.2) == doctest::Approx(base).epsilon(1e-6));
  }

  SUBCASE("input validation") {
    Rng rng(1);
    Codebook cb = book_from_rows(random_mat(3, 2, rng));
    Mat z = random_mat(4, 2, rng);
    CHECK_THROWS_AS(pce_loss(z, {}, {}, cb, 0.1), InvalidArgument);
    CHECK_THROWS_AS(pce_loss(z, {0}, {0, 1}, cb, 0.1), InvalidArgument);
    CHECK_THROWS_AS(pce_loss(z, {9}, {0}, cb, 0.1), InvalidArgument);
    CHECK_THROWS_AS(pce_loss(z, {0}, {7}, cb, 0.1), InvalidArgument);
  }
}

TEST_CASE("starved prototypes are reseeded after the threshold") {
  Rng rng(19);
  Mat p = random_mat(3, 2, rng, 0.5);
  p.row(2) << 1e6, 1e6;  // never the argmin for data near the origin
  Codebook cb = book_from_rows(p);

  DistillConfig dc;
  const int threshold = 4;
  Mat last_batch;
  int reseeded_at = -1;
  for (int batch = 0; batch < 10 && reseeded_at < 0; ++batch) {
    last_batch = random_mat(8, 2, rng, 0.5);
    std::vector<std::int64_t> hist(3, 0);
    for (int i = 0; i < last_batch.rows(); ++i) {
      const int k = assign(cb, last_batch.row(i));
      update_prototype(cb, last_batch.row(i), k, dc);
      hist[static_cast<std::size_t>(k)]++;
    }
    CHECK(hist[2] == 0);
    note_batch_usage(cb, hist);
    if (reseed_dead(cb, last_batch, threshold, rng) > 0) reseeded_at = batch;
  }
  REQUIRE(reseeded_at == threshold - 1);  // stale counts reach the threshold
  CHECK(cb.prototypes.row(2).norm() < 1e3);
  CHECK(cb.counts[2] == 0);
  bool from_batch = false;
  for (int i = 0; i < last_batch.rows() && !from_batch; ++i)
    from_batch = (cb.prototypes.row(2) - last_batch.row(i)).norm() == 0.0;
  CHECK(from_batch);

  SUBCASE("recently used prototypes stay put") {
    Codebook fresh = book_from_rows(random_mat(2, 2, rng));
    note_batch_usage(fresh, {3, 5});
    Rng r2(1);
    CHECK(reseed_dead(fresh, last_batch, 1, r2) == 0);
  }
}

TEST_CASE("codebook serialization round-trips through a checkpoint") {
  Rng rng(23);
  Codebook cb = book_from_rows(random_mat(4, 3, rng));
  cb.counts = {5, 0, 12, 3};

  Checkpoint ckpt;
  cb.save_to(ckpt, "codebook/");
  auto dir = testutil::temp_dir("codebook_ckpt");
  write_checkpoint((dir / "cb.wapc").string(), ckpt);
  Checkpoint loaded = read_checkpoint((dir / "cb.wapc").string());
  Codebook back = Codebook::load_from(loaded, "codebook/");
  CHECK(back.prototypes.cast<float>() == cb.prototypes.cast<float>());
  CHECK(back.counts == cb.counts);
}
