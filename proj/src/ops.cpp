#include "wap/ops.hpp"

#include "wap/rng.hpp"

#include <cmath>
#include <numbers>

namespace wap {

Mat affine_forward(const Mat& x, const Mat& W, const Mat& b) {
  if (x.cols() != W.rows())
    throw InvalidArgument("affine: input width " + std::to_string(x.cols()) +
                          " does not match weight rows " + std::to_string(W.rows()));
  if (b.rows() != 1 || b.cols() != W.cols())
    throw InvalidArgument("affine: bias must be 1 x output width");
  Mat y = x * W;
  y.rowwise() += b.row(0);
  return y;
}

Mat affine_backward(const Mat& x, const Mat& W, const Mat& dy, Mat& dW, Mat& db) {
  dW.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * W.transpose();
}

Mat layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias, double eps,
                       LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (gain.cols() != d || bias.cols() != d || gain.rows() != 1 || bias.rows() != 1)
    throw InvalidArgument("layer_norm: gain/bias must be 1 x feature width");
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * is;
    inv_std(i) = is;
  }
  Mat y = xhat.array().rowwise() * gain.row(0).array();
  y.array().rowwise() += bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache,
                        Mat& dgain, Mat& dbias) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat dx(n, d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean_dxhat = dxhat.row(i).mean();
    const double mean_dxhat_xhat = (dxhat.row(i).array() * cache.xhat.row(i).array()).sum() * inv_d;
    dx.row(i) = cache.inv_std(i) *
                (dxhat.row(i).array() - mean_dxhat - cache.xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

Mat softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  Mat dx(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double dot = (y.row(i).array() * dy.row(i).array()).sum();
    dx.row(i) = y.row(i).array() * (dy.row(i).array() - dot);
  }
  return dx;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Mat gelu_forward(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  Mat local = x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
    return cdf + v * pdf;
  });
  return dy.array() * local.array();
}

Mat mha_forward(const Mat& x, const MhaParamsView& p, int heads, MhaCache* cache) {
  const auto t = x.rows();
  const auto d = x.cols();
  if (heads < 1 || d % heads != 0)
    throw InvalidArgument("attention: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = affine_forward(x, p.Wq, p.bq);
  Mat k = affine_forward(x, p.Wk, p.bk);
  Mat v = affine_forward(x, p.Wv, p.bv);

  Mat concat(t, d);
  std::vector<Mat> attn(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat scores = (qh * kh.transpose()) * scale;
    attn[static_cast<std::size_t>(h)] = softmax_rows(scores);
    concat.middleCols(h * dh, dh).noalias() = attn[static_cast<std::size_t>(h)] * vh;
  }
  Mat y = affine_forward(concat, p.Wo, p.bo);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->concat = std::move(concat);
  }
  return y;
}

Mat mha_backward(const Mat& dy, const MhaParamsView& p, int heads, const MhaCache& cache,
                 const MhaGradsView& grads) {
  const auto t = cache.x.rows();
  const auto d = cache.x.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dconcat = affine_backward(cache.concat, p.Wo, dy, grads.Wo, grads.bo);

  Mat dq = Mat::Zero(t, d), dk = Mat::Zero(t, d), dv = Mat::Zero(t, d);
  for (int h = 0; h < heads; ++h) {
    const Mat& a = cache.attn[static_cast<std::size_t>(h)];
    auto vh = cache.v.middleCols(h * dh, dh);
    auto dout = dconcat.middleCols(h * dh, dh);
    Mat da = dout * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dout;
    Mat dscores = softmax_rows_backward(a, da) * scale;
    dq.middleCols(h * dh, dh).noalias() = dscores * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * cache.q.middleCols(h * dh, dh);
  }

  Mat dx = affine_backward(cache.x, p.Wq, dq, grads.Wq, grads.bq);
  dx += affine_backward(cache.x, p.Wk, dk, grads.Wk, grads.bk);
  dx += affine_backward(cache.x, p.Wv, dv, grads.Wv, grads.bv);
  return dx;
}

void LrSchedule::validate() const {
  if (initial_lr <= 0.0) throw InvalidArgument("learning rate must be positive");
  if (total_epochs < 1) throw InvalidArgument("total epochs must be at least 1");
  if (min_lr < 0.0 || min_lr > initial_lr)
    throw InvalidArgument("min learning rate must lie in [0, initial]");
}

double cosine_lr(const LrSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 0 || epoch > schedule.total_epochs)
    throw InvalidArgument("epoch " + std::to_string(epoch) + " outside schedule");
  const double frac = static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
  return schedule.min_lr +
         0.5 * (schedule.initial_lr - schedule.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<GradCheckTensor>& tensors, double step,
                           int max_coords, std::uint64_t seed) {
  GradCheckReport report;
  Rng rng(seed);
  for (const auto& t : tensors) {
    const auto size = static_cast<int>(t.value->size());
    if (t.grad->size() != t.value->size())
      throw InvalidArgument("grad_check: shape mismatch for " + t.name);
    std::vector<int> coords;
    if (size <= max_coords) {
      coords.resize(static_cast<std::size_t>(size));
      for (int i = 0; i < size; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      coords = rng.sample_without_replacement(size, max_coords);
    }
    double* data = t.value->data();
    const double* gdata = t.grad->data();
    for (int idx : coords) {
      const double saved = data[idx];
      data[idx] = saved + step;
      const double up = loss();
      data[idx] = saved - step;
      const double down = loss();
      data[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = gdata[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = t.name;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

}  // namespace wap
