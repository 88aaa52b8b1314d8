#include "doctest.h"

#include "wap/gradcheck_suite.hpp"
#include "wap/ops.hpp"
#include "wap/params.hpp"
#include "wap/rng.hpp"

#include <cmath>

using namespace wap;

namespace {
Mat randn(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}
}  // namespace

TEST_CASE("affine matches straight matrix algebra") {
  Mat x(2, 3), w(3, 2), b(1, 2);
  x << 1, 2, 3, 4, 5, 6;
  w << 1, 0, 0, 1, 1, 1;
  b << 10, 20;
  Mat y = affine_forward(x, w, b);
  CHECK(y(0, 0) == doctest::Approx(1 + 3 + 10));
  CHECK(y(0, 1) == doctest::Approx(2 + 3 + 20));
  CHECK(y(1, 0) == doctest::Approx(4 + 6 + 10));
  CHECK_THROWS_AS(affine_forward(x, Mat::Zero(4, 2), b), InvalidArgument);
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  Mat x = randn(5, 7, 42);
  Mat g = Mat::Ones(1, 7), b = Mat::Zero(1, 7);
  Mat y = layer_norm_forward(x, g, b, 1e-10, nullptr);
  for (int i = 0; i < 5; ++i) {
    CHECK(y.row(i).mean() == doctest::Approx(0.0).epsilon(1e-9));
    const double var = (y.row(i).array() - y.row(i).mean()).square().sum() / 7.0;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Mat x = randn(4, 6, 43);
  Mat y = softmax_rows(x);
  for (int i = 0; i < 4; ++i) CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  Mat shifted = x;
  shifted.array() += 123.0;
  Mat y2 = softmax_rows(shifted);
  CHECK((y - y2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y.array() >= 0.0).all());
}

TEST_CASE("attention with zero query/key projections averages the values") {
  const int t = 4, d = 6, h = 2;
  Mat x = randn(t, d, 44);
  Mat zero_w = Mat::Zero(d, d), zero_b = Mat::Zero(1, d);
  Mat wv = randn(d, d, 45), bv = randn(1, d, 46);
  Mat wo = Mat::Identity(d, d), bo = Mat::Zero(1, d);
  MhaParamsView p{zero_w, zero_b, zero_w, zero_b, wv, bv, wo, bo};
  Mat y = mha_forward(x, p, h, nullptr);
  Mat v = affine_forward(x, wv, bv);
  Mat mean_v = v.colwise().mean().replicate(t, 1);
  CHECK((y - mean_v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention with a single frame returns its projected value") {
  const int d = 4;
  Mat x = randn(1, d, 47);
  Mat wq = randn(d, d, 48), bq = randn(1, d, 49);
  Mat wv = randn(d, d, 50), bv = randn(1, d, 51);
  Mat wo = Mat::Identity(d, d), bo = Mat::Zero(1, d);
  MhaParamsView p{wq, bq, wq, bq, wv, bv, wo, bo};
  Mat y = mha_forward(x, p, 2, nullptr);
  Mat v = affine_forward(x, wv, bv);
  CHECK((y - v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rejects widths not divisible by the head count") {
  Mat x = randn(3, 6, 52);
  Mat w = Mat::Zero(6, 6), b = Mat::Zero(1, 6);
  MhaParamsView p{w, b, w, b, w, b, w, b};
  CHECK_THROWS_AS(mha_forward(x, p, 4, nullptr), InvalidArgument);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Param p;
  p.init_const(2, 2, 3.5);
  adam_step(p, 0.1);
  CHECK((p.value.array() == 3.5).all());
}

TEST_CASE("first adam step moves each coordinate by about the learning rate") {
  Param p;
  p.init_const(1, 3, 1.0);
  p.grad << 0.5, -2.0, 10.0;
  adam_step(p, 0.01);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(std::abs(p.value(0, i) - 1.0) - 0.01) < 1e-6);
  }
  CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);  // cleared
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  Param p;
  p.init_const(1, 1, 1.0);
  for (int i = 0; i < 100; ++i) {
    p.grad(0, 0) = 2.0 * p.value(0, 0);
    adam_step(p, 0.1);
  }
  CHECK(std::abs(p.value(0, 0)) < 0.05);
}

TEST_CASE("adam refuses non-finite gradients") {
  Param p;
  p.init_const(1, 1, 0.0);
  p.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(p, 0.1), NumericError);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
  LrSchedule s{1e-4, 100, 0.0};
  CHECK(cosine_lr(s, 0) == doctest::Approx(1e-4));
  CHECK(cosine_lr(s, 100) == doctest::Approx(0.0));
  CHECK(cosine_lr(s, 50) == doctest::Approx(5e-5));
  CHECK_THROWS_AS(cosine_lr(s, 101), InvalidArgument);
  CHECK_THROWS_AS(cosine_lr(s, -1), InvalidArgument);
}

TEST_CASE("cosine schedule never increases") {
  LrSchedule s{3e-3, 37, 1e-5};
  double prev = cosine_lr(s, 0);
  for (int e = 1; e <= 37; ++e) {
    const double cur = cosine_lr(s, e);
    CHECK(cur <= prev + 1e-18);
    prev = cur;
  }
  CHECK(cosine_lr(s, 37) == doctest::Approx(1e-5));
}

TEST_CASE("global norm clipping rescales only when above the threshold") {
  Param a, b;
  a.init_zero(1, 2);
  b.init_zero(1, 2);
  a.grad << 3.0, 0.0;
  b.grad << 0.0, 4.0;
  std::vector<NamedParam> params{{"a", &a}, {"b", &b}};
  CHECK(global_grad_norm(params) == doctest::Approx(5.0));
  clip_global_grad_norm(params, 10.0);
  CHECK(a.grad(0, 0) == doctest::Approx(3.0));
  clip_global_grad_norm(params, 2.5);
  CHECK(global_grad_norm(params) == doctest::Approx(2.5));
  CHECK(a.grad(0, 0) == doctest::Approx(1.5));
  CHECK(b.grad(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("every differentiable piece passes its finite-difference check") {
  auto cases = run_gradcheck_suite(false);
  for (const auto& c : cases) {
    INFO(c.name, " max rel error ", c.max_rel_error);
    CHECK(c.passed);
  }
}

TEST_CASE("the checker flags a sabotaged backward pass") {
  auto cases = run_gradcheck_suite(true);
  bool saw_backbone_failure = false;
  for (const auto& c : cases) {
    if (c.name == "backbone_rec(sign-flipped)") {
      saw_backbone_failure = true;
      CHECK_FALSE(c.passed);
      CHECK(c.max_rel_error > 0.5);
    }
    if (c.name == "checker_sensitivity") CHECK(c.passed);
  }
  CHECK(saw_backbone_failure);
}
