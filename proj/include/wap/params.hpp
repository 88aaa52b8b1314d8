#pragma once

#include "wap/common.hpp"
#include "wap/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace wap {

// One trainable tensor plus its gradient and Adam state. Copying a Param
// copies everything, so a deep model clone is just the default copy.
struct Param {
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
  std::int64_t step = 0;

  void init_zero(Eigen::Index rows, Eigen::Index cols);
  void init_const(Eigen::Index rows, Eigen::Index cols, double c);
  void init_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update. Throws NumericError on non-finite
// gradients and clears the gradient afterwards.
void adam_step(Param& p, double lr, const AdamHyper& hyper = {});

using NamedParam = std::pair<std::string, Param*>;

void zero_grads(const std::vector<NamedParam>& params);
double global_grad_norm(const std::vector<NamedParam>& params);
// Scales all gradients by max_norm / norm when norm exceeds max_norm.
void clip_global_grad_norm(const std::vector<NamedParam>& params, double max_norm);
void adam_step_all(const std::vector<NamedParam>& params, double lr, const AdamHyper& hyper = {});
// dst.grad += src.grad, matched by position; shapes must agree.
void accumulate_grads(const std::vector<NamedParam>& dst, const std::vector<NamedParam>& src);
// dst.value = alpha dst.value + (1 - alpha) src.value, matched by position.
void ema_blend(const std::vector<NamedParam>& dst, const std::vector<NamedParam>& src,
               double alpha);

}  // namespace wap
