#pragma once

#include "wap/checkpoint.hpp"
#include "wap/ops.hpp"
#include "wap/params.hpp"

#include <string>
#include <vector>

namespace wap {

struct WapConfig {
  int d_in = 1024;
  int d_model = 384;
  int layers = 3;
  int heads = 6;
  int ffn_dim = 1536;
  int t_max = 1024;
  double ln_eps = 1e-5;
  double init_stddev = 0.02;
  // Normalize the layer-combination weights with a softmax; raw weights
  // otherwise.
  bool softmax_layer_weights = true;
  // When set, the aggregation MLP output joins the weighted pool as an extra
  // branch instead of post-processing the pooled sequence.
  bool pool_includes_agg = false;

  void validate() const;
  int pool_branches() const { return pool_includes_agg ? layers + 1 : layers; }
};

// One pre-norm transformer block: x + attn(norm(x)), then + ffn(norm(.)).
struct BlockParams {
  Param ln1_g, ln1_b;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln2_g, ln2_b;
  Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct BlockCache {
  Mat x_in;
  LayerNormCache ln1;
  Mat ln1_out;
  MhaCache mha;
  Mat x_mid;
  LayerNormCache ln2;
  Mat ln2_out;
  Mat ffn_pre;
  Mat ffn_act;
};

struct MlpCache {
  Mat x_in;
  Mat pre1, act1;
  Mat pre2, act2;
};

struct WapCache {
  Mat seq_in;
  std::vector<int> mask;
  Mat embedded;
  std::vector<BlockCache> blocks;
  std::vector<Mat> layer_outputs;
  RowVec norm_weights;
  Mat pooled;
  MlpCache agg;
};

struct WapForwardResult {
  std::vector<Mat> layer_outputs;  // per-branch sequences feeding the pool
  RowVec norm_weights;             // normalized combination weights
  Mat pooled;                      // weighted combination of the branches
  Mat output;                      // sequence handed to downstream heads
};

struct WapModel {
  WapConfig cfg;
  Param patch_w, patch_b;
  Param pos_embed;   // t_max x d_model
  Param mask_embed;  // 1 x d_model
  std::vector<BlockParams> blocks;
  Param agg_w1, agg_b1, agg_w2, agg_b2, agg_w3, agg_b3;
  Param layer_weights;  // 1 x pool_branches()

  WapModel(const WapConfig& config, Rng& rng);

  // Patch projection, optional replacement of masked rows with the learned
  // mask embedding, then positional rows 0..T-1.
  Mat embed_input(const Mat& seq, const std::vector<int>& mask) const;

  // Full pass from raw frames. The cache is required for backward().
  WapForwardResult forward(const Mat& seq, const std::vector<int>& mask,
                           WapCache* cache = nullptr) const;

  // Accumulates parameter gradients for d(loss)/d(result.output).
  void backward(const Mat& d_output, const WapCache& cache);

  std::vector<NamedParam> named_params();

  void save_to(Checkpoint& ckpt, const std::string& prefix) const;
  void load_from(const Checkpoint& ckpt, const std::string& prefix);
  static WapConfig config_from(const Checkpoint& ckpt, const std::string& prefix);
};

}  // namespace wap
