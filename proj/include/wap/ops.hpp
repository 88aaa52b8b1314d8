#pragma once

#include "wap/common.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wap {

// y = x W + b with b broadcast over rows. x: N x Din, W: Din x Dout, b: 1 x Dout.
Mat affine_forward(const Mat& x, const Mat& W, const Mat& b);
// Accumulates into dW/db, returns dx.
Mat affine_backward(const Mat& x, const Mat& W, const Mat& dy, Mat& dW, Mat& db);

struct LayerNormCache {
  Mat xhat;     // normalized input
  Vec inv_std;  // per row
};
// Row-wise normalization to zero mean and unit variance, then gain/bias.
// gain and bias are 1 x D.
Mat layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias, double eps,
                       LayerNormCache* cache);
Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache,
                        Mat& dgain, Mat& dbias);

// Numerically stable row softmax (max subtraction).
Mat softmax_rows(const Mat& x);
// dx given the forward output y and upstream dy.
Mat softmax_rows_backward(const Mat& y, const Mat& dy);

Mat gelu_forward(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

// Multi-head scaled dot-product self-attention over a T x D sequence.
struct MhaParamsView {
  const Mat &Wq, &bq, &Wk, &bk, &Wv, &bv, &Wo, &bo;
};
struct MhaGradsView {
  Mat &Wq, &bq, &Wk, &bk, &Wv, &bv, &Wo, &bo;
};
struct MhaCache {
  Mat x, q, k, v;
  std::vector<Mat> attn;  // per-head T x T attention weights
  Mat concat;
};
Mat mha_forward(const Mat& x, const MhaParamsView& p, int heads, MhaCache* cache);
Mat mha_backward(const Mat& dy, const MhaParamsView& p, int heads, const MhaCache& cache,
                 const MhaGradsView& grads);

struct LrSchedule {
  double initial_lr = 1e-4;
  int total_epochs = 100;
  double min_lr = 0.0;

  void validate() const;
};
// min + 0.5 (initial - min) (1 + cos(pi epoch / total)); epoch in [0, total].
double cosine_lr(const LrSchedule& schedule, int epoch);

// Central-difference gradient verification. The loss closure must recompute
// the scalar from the tensors' current values on every call. Tensors larger
// than max_coords are checked on a deterministic random subsample.
struct GradCheckTensor {
  std::string name;
  Mat* value;
  const Mat* grad;
};
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  int worst_index = -1;
};
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<GradCheckTensor>& tensors, double step = 1e-3,
                           int max_coords = 200, std::uint64_t seed = 12345);

}  // namespace wap
