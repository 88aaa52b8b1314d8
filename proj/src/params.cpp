#include "wap/params.hpp"

#include <cmath>

namespace wap {

void Param::init_zero(Eigen::Index rows, Eigen::Index cols) {
  value = Mat::Zero(rows, cols);
  grad = Mat::Zero(rows, cols);
  m = Mat::Zero(rows, cols);
  v = Mat::Zero(rows, cols);
  step = 0;
}

void Param::init_const(Eigen::Index rows, Eigen::Index cols, double c) {
  init_zero(rows, cols);
  value.setConstant(c);
}

void Param::init_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  init_zero(rows, cols);
  for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = stddev * rng.normal();
}

void adam_step(Param& p, double lr, const AdamHyper& hyper) {
  if (!all_finite(p.grad)) throw NumericError("non-finite gradient in optimizer step");
  p.step += 1;
  p.m = hyper.beta1 * p.m + (1.0 - hyper.beta1) * p.grad;
  p.v = hyper.beta2 * p.v.array() + (1.0 - hyper.beta2) * p.grad.array().square();
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(p.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(p.step));
  p.value.array() -= lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + hyper.eps);
  p.grad.setZero();
}

void zero_grads(const std::vector<NamedParam>& params) {
  for (const auto& [name, p] : params) p->zero_grad();
}

double global_grad_norm(const std::vector<NamedParam>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_global_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
  if (max_norm <= 0.0) throw InvalidArgument("clip threshold must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& [name, p] : params) p->grad *= scale;
  }
}

void adam_step_all(const std::vector<NamedParam>& params, double lr, const AdamHyper& hyper) {
  for (const auto& [name, p] : params) adam_step(*p, lr, hyper);
}

void accumulate_grads(const std::vector<NamedParam>& dst, const std::vector<NamedParam>& src) {
  if (dst.size() != src.size()) throw InvalidArgument("gradient accumulation: size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second->grad.rows() != src[i].second->grad.rows() ||
        dst[i].second->grad.cols() != src[i].second->grad.cols())
      throw InvalidArgument("gradient accumulation: shape mismatch at " + dst[i].first);
    dst[i].second->grad += src[i].second->grad;
  }
}

void ema_blend(const std::vector<NamedParam>& dst, const std::vector<NamedParam>& src,
               double alpha) {
  if (dst.size() != src.size()) throw InvalidArgument("ema: size mismatch");
  if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("ema: alpha outside [0, 1]");
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i].second->value = alpha * dst[i].second->value + (1.0 - alpha) * src[i].second->value;
}

}  // namespace wap
