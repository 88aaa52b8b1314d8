#include "wap/wap_model.hpp"

#include <algorithm>
#include <cstdio>

namespace wap {

void WapConfig::validate() const {
  if (d_in < 1 || d_model < 1) throw InvalidArgument("model widths must be positive");
  if (layers < 1) throw InvalidArgument("need at least one block");
  if (heads < 1 || d_model % heads != 0)
    throw InvalidArgument("width " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(heads) + " heads");
  if (ffn_dim < 1) throw InvalidArgument("feed-forward width must be positive");
  if (t_max < 1) throw InvalidArgument("positional table must have at least one row");
  if (ln_eps <= 0.0) throw InvalidArgument("layer-norm epsilon must be positive");
  if (init_stddev <= 0.0) throw InvalidArgument("init stddev must be positive");
}

namespace {

std::string block_key(const std::string& prefix, int i, const char* leaf) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return prefix + "blocks/" + buf + "/" + leaf;
}

void init_affine(Param& w, Param& b, int din, int dout, double stddev, Rng& rng) {
  w.init_normal(din, dout, stddev, rng);
  b.init_zero(1, dout);
}

Mat mlp_forward(const Mat& x, const Param& w1, const Param& b1, const Param& w2, const Param& b2,
                const Param& w3, const Param& b3, MlpCache* cache) {
  Mat pre1 = affine_forward(x, w1.value, b1.value);
  Mat act1 = gelu_forward(pre1);
  Mat pre2 = affine_forward(act1, w2.value, b2.value);
  Mat act2 = gelu_forward(pre2);
  Mat out = affine_forward(act2, w3.value, b3.value);
  if (cache) {
    cache->x_in = x;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
  }
  return out;
}

Mat mlp_backward(const Mat& dy, const MlpCache& c, Param& w1, Param& b1, Param& w2, Param& b2,
                 Param& w3, Param& b3) {
  Mat d_act2 = affine_backward(c.act2, w3.value, dy, w3.grad, b3.grad);
  Mat d_pre2 = gelu_backward(c.pre2, d_act2);
  Mat d_act1 = affine_backward(c.act1, w2.value, d_pre2, w2.grad, b2.grad);
  Mat d_pre1 = gelu_backward(c.pre1, d_act1);
  return affine_backward(c.x_in, w1.value, d_pre1, w1.grad, b1.grad);
}

}  // namespace

WapModel::WapModel(const WapConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  init_affine(patch_w, patch_b, cfg.d_in, cfg.d_model, cfg.init_stddev, rng);
  pos_embed.init_normal(cfg.t_max, cfg.d_model, cfg.init_stddev, rng);
  mask_embed.init_normal(1, cfg.d_model, cfg.init_stddev, rng);
  blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& blk : blocks) {
    blk.ln1_g.init_const(1, cfg.d_model, 1.0);
    blk.ln1_b.init_zero(1, cfg.d_model);
    init_affine(blk.wq, blk.bq, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
    init_affine(blk.wk, blk.bk, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
    init_affine(blk.wv, blk.bv, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
    init_affine(blk.wo, blk.bo, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
    blk.ln2_g.init_const(1, cfg.d_model, 1.0);
    blk.ln2_b.init_zero(1, cfg.d_model);
    init_affine(blk.ffn_w1, blk.ffn_b1, cfg.d_model, cfg.ffn_dim, cfg.init_stddev, rng);
    init_affine(blk.ffn_w2, blk.ffn_b2, cfg.ffn_dim, cfg.d_model, cfg.init_stddev, rng);
  }
  init_affine(agg_w1, agg_b1, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
  init_affine(agg_w2, agg_b2, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
  init_affine(agg_w3, agg_b3, cfg.d_model, cfg.d_model, cfg.init_stddev, rng);
  layer_weights.init_zero(1, cfg.pool_branches());
}

Mat WapModel::embed_input(const Mat& seq, const std::vector<int>& mask) const {
  const auto t = seq.rows();
  if (t < 1) throw InvalidArgument("empty sequence");
  if (seq.cols() != cfg.d_in)
    throw InvalidArgument("frame dim " + std::to_string(seq.cols()) + " does not match model d_in " +
                          std::to_string(cfg.d_in));
  if (t > cfg.t_max)
    throw InvalidArgument("sequence length " + std::to_string(t) +
                          " exceeds positional table size " + std::to_string(cfg.t_max));
  Mat x = affine_forward(seq, patch_w.value, patch_b.value);
  for (int pos : mask) {
    if (pos < 0 || pos >= t) throw InvalidArgument("mask position out of range");
    x.row(pos) = mask_embed.value.row(0);
  }
  x += pos_embed.value.topRows(t);
  return x;
}

WapForwardResult WapModel::forward(const Mat& seq, const std::vector<int>& mask,
                                   WapCache* cache) const {
  Mat x = embed_input(seq, mask);
  if (cache) {
    cache->seq_in = seq;
    cache->mask = mask;
    cache->embedded = x;
    cache->blocks.resize(blocks.size());
  }

  WapForwardResult res;
  res.layer_outputs.reserve(static_cast<std::size_t>(cfg.pool_branches()));
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const BlockParams& blk = blocks[l];
    BlockCache local;
    BlockCache* bc = cache ? &cache->blocks[l] : &local;
    bc->x_in = x;
    bc->ln1_out = layer_norm_forward(x, blk.ln1_g.value, blk.ln1_b.value, cfg.ln_eps, &bc->ln1);
    MhaParamsView attn{blk.wq.value, blk.bq.value, blk.wk.value, blk.bk.value,
                       blk.wv.value, blk.bv.value, blk.wo.value, blk.bo.value};
    Mat attn_out = mha_forward(bc->ln1_out, attn, cfg.heads, &bc->mha);
    bc->x_mid = x + attn_out;
    bc->ln2_out =
        layer_norm_forward(bc->x_mid, blk.ln2_g.value, blk.ln2_b.value, cfg.ln_eps, &bc->ln2);
    bc->ffn_pre = affine_forward(bc->ln2_out, blk.ffn_w1.value, blk.ffn_b1.value);
    bc->ffn_act = gelu_forward(bc->ffn_pre);
    x = bc->x_mid + affine_forward(bc->ffn_act, blk.ffn_w2.value, blk.ffn_b2.value);
    if (!all_finite(x))
      throw NumericError("non-finite activation in block " + std::to_string(l + 1));
    res.layer_outputs.push_back(x);
  }

  MlpCache agg_local;
  MlpCache* ac = cache ? &cache->agg : &agg_local;
  if (cfg.pool_includes_agg) {
    Mat extra = mlp_forward(res.layer_outputs.back(), agg_w1, agg_b1, agg_w2, agg_b2, agg_w3,
                            agg_b3, ac);
    if (!all_finite(extra)) throw NumericError("non-finite activation in aggregation block");
    res.layer_outputs.push_back(std::move(extra));
  }

  if (cfg.softmax_layer_weights) {
    res.norm_weights = softmax_rows(layer_weights.value).row(0);
  } else {
    res.norm_weights = layer_weights.value.row(0);
  }
  res.pooled = Mat::Zero(x.rows(), cfg.d_model);
  for (std::size_t l = 0; l < res.layer_outputs.size(); ++l)
    res.pooled += res.norm_weights(static_cast<Eigen::Index>(l)) * res.layer_outputs[l];

  if (cfg.pool_includes_agg) {
    res.output = res.pooled;
  } else {
    res.output = mlp_forward(res.pooled, agg_w1, agg_b1, agg_w2, agg_b2, agg_w3, agg_b3, ac);
    if (!all_finite(res.output)) throw NumericError("non-finite activation in aggregation block");
  }

  if (cache) {
    cache->layer_outputs = res.layer_outputs;
    cache->norm_weights = res.norm_weights;
    cache->pooled = res.pooled;
  }
  return res;
}

void WapModel::backward(const Mat& d_output, const WapCache& cache) {
  const auto t = cache.embedded.rows();
  const auto branches = cache.layer_outputs.size();

  Mat d_pooled;
  std::vector<Mat> d_layer(branches);
  if (cfg.pool_includes_agg) {
    d_pooled = d_output;
  } else {
    d_pooled = mlp_backward(d_output, cache.agg, agg_w1, agg_b1, agg_w2, agg_b2, agg_w3, agg_b3);
  }

  // Pool: pooled = sum_l w_l X^l.
  RowVec d_norm = RowVec::Zero(static_cast<Eigen::Index>(branches));
  for (std::size_t l = 0; l < branches; ++l) {
    d_layer[l] = cache.norm_weights(static_cast<Eigen::Index>(l)) * d_pooled;
    d_norm(static_cast<Eigen::Index>(l)) =
        (d_pooled.array() * cache.layer_outputs[l].array()).sum();
  }
  if (cfg.softmax_layer_weights) {
    Mat y(1, static_cast<Eigen::Index>(branches));
    y.row(0) = cache.norm_weights;
    Mat dn(1, static_cast<Eigen::Index>(branches));
    dn.row(0) = d_norm;
    layer_weights.grad += softmax_rows_backward(y, dn);
  } else {
    layer_weights.grad.row(0) += d_norm;
  }

  // The aggregation branch (4-way mode) feeds back into the last block output.
  Mat d_x = std::move(d_layer[static_cast<std::size_t>(cfg.layers) - 1]);
  if (cfg.pool_includes_agg) {
    Mat d_extra = mlp_backward(d_layer.back(), cache.agg, agg_w1, agg_b1, agg_w2, agg_b2, agg_w3,
                               agg_b3);
    d_x += d_extra;
  }

  for (int l = cfg.layers - 1; l >= 0; --l) {
    BlockParams& blk = blocks[static_cast<std::size_t>(l)];
    const BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];
    // x_out = x_mid + ffn(ln2(x_mid))
    Mat d_ffn_act = affine_backward(bc.ffn_act, blk.ffn_w2.value, d_x, blk.ffn_w2.grad,
                                    blk.ffn_b2.grad);
    Mat d_ffn_pre = gelu_backward(bc.ffn_pre, d_ffn_act);
    Mat d_ln2_out = affine_backward(bc.ln2_out, blk.ffn_w1.value, d_ffn_pre, blk.ffn_w1.grad,
                                    blk.ffn_b1.grad);
    Mat d_mid = d_x + layer_norm_backward(d_ln2_out, blk.ln2_g.value, bc.ln2, blk.ln2_g.grad,
                                          blk.ln2_b.grad);
    // x_mid = x_in + attn(ln1(x_in))
    MhaParamsView attn{blk.wq.value, blk.bq.value, blk.wk.value, blk.bk.value,
                       blk.wv.value, blk.bv.value, blk.wo.value, blk.bo.value};
    MhaGradsView attn_g{blk.wq.grad, blk.bq.grad, blk.wk.grad, blk.bk.grad,
                        blk.wv.grad, blk.bv.grad, blk.wo.grad, blk.bo.grad};
    Mat d_ln1_out = mha_backward(d_mid, attn, cfg.heads, bc.mha, attn_g);
    d_x = d_mid + layer_norm_backward(d_ln1_out, blk.ln1_g.value, bc.ln1, blk.ln1_g.grad,
                                      blk.ln1_b.grad);
    if (l > 0) d_x += d_layer[static_cast<std::size_t>(l) - 1];
  }

  // Through the embedding: x = proj-or-mask + pos rows.
  pos_embed.grad.topRows(t) += d_x;
  Mat d_proj = d_x;
  for (int pos : cache.mask) {
    mask_embed.grad.row(0) += d_x.row(pos);
    d_proj.row(pos).setZero();
  }
  patch_w.grad.noalias() += cache.seq_in.transpose() * d_proj;
  patch_b.grad.row(0) += d_proj.colwise().sum();
}

std::vector<NamedParam> WapModel::named_params() {
  std::vector<NamedParam> out;
  out.emplace_back("patch_embed/w", &patch_w);
  out.emplace_back("patch_embed/b", &patch_b);
  out.emplace_back("pos_embed", &pos_embed);
  out.emplace_back("mask_embed", &mask_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& blk = blocks[i];
    const int n = static_cast<int>(i);
    out.emplace_back(block_key("", n, "ln1/g"), &blk.ln1_g);
    out.emplace_back(block_key("", n, "ln1/b"), &blk.ln1_b);
    out.emplace_back(block_key("", n, "attn/wq"), &blk.wq);
    out.emplace_back(block_key("", n, "attn/bq"), &blk.bq);
    out.emplace_back(block_key("", n, "attn/wk"), &blk.wk);
    out.emplace_back(block_key("", n, "attn/bk"), &blk.bk);
    out.emplace_back(block_key("", n, "attn/wv"), &blk.wv);
    out.emplace_back(block_key("", n, "attn/bv"), &blk.bv);
    out.emplace_back(block_key("", n, "attn/wo"), &blk.wo);
    out.emplace_back(block_key("", n, "attn/bo"), &blk.bo);
    out.emplace_back(block_key("", n, "ln2/g"), &blk.ln2_g);
    out.emplace_back(block_key("", n, "ln2/b"), &blk.ln2_b);
    out.emplace_back(block_key("", n, "ffn/w1"), &blk.ffn_w1);
    out.emplace_back(block_key("", n, "ffn/b1"), &blk.ffn_b1);
    out.emplace_back(block_key("", n, "ffn/w2"), &blk.ffn_w2);
    out.emplace_back(block_key("", n, "ffn/b2"), &blk.ffn_b2);
  }
  out.emplace_back("agg/0/w", &agg_w1);
  out.emplace_back("agg/0/b", &agg_b1);
  out.emplace_back("agg/1/w", &agg_w2);
  out.emplace_back("agg/1/b", &agg_b2);
  out.emplace_back("agg/2/w", &agg_w3);
  out.emplace_back("agg/2/b", &agg_b3);
  out.emplace_back("layer_weights", &layer_weights);
  return out;
}

void WapModel::save_to(Checkpoint& ckpt, const std::string& prefix) const {
  Mat conf(1, 9);
  conf << cfg.d_in, cfg.d_model, cfg.layers, cfg.heads, cfg.ffn_dim, cfg.t_max, cfg.ln_eps,
      cfg.softmax_layer_weights ? 1.0 : 0.0, cfg.pool_includes_agg ? 1.0 : 0.0;
  ckpt.put(prefix + "config", conf);
  auto params = const_cast<WapModel*>(this)->named_params();
  for (const auto& [name, p] : params) ckpt.put(prefix + name, p->value);
}

WapConfig WapModel::config_from(const Checkpoint& ckpt, const std::string& prefix) {
  Mat conf = ckpt.get_mat(prefix + "config");
  if (conf.size() != 9) throw IoError("malformed model config in checkpoint");
  WapConfig cfg;
  cfg.d_in = static_cast<int>(conf(0, 0));
  cfg.d_model = static_cast<int>(conf(0, 1));
  cfg.layers = static_cast<int>(conf(0, 2));
  cfg.heads = static_cast<int>(conf(0, 3));
  cfg.ffn_dim = static_cast<int>(conf(0, 4));
  cfg.t_max = static_cast<int>(conf(0, 5));
  cfg.ln_eps = conf(0, 6);
  cfg.softmax_layer_weights = conf(0, 7) != 0.0;
  cfg.pool_includes_agg = conf(0, 8) != 0.0;
  cfg.validate();
  return cfg;
}

void WapModel::load_from(const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& [name, p] : named_params()) {
    Mat stored = ckpt.get_mat(prefix + name);
    if (stored.rows() != p->value.rows() || stored.cols() != p->value.cols())
      throw IoError("checkpoint tensor " + prefix + name + " has shape " +
                    std::to_string(stored.rows()) + "x" + std::to_string(stored.cols()) +
                    ", expected " + std::to_string(p->value.rows()) + "x" +
                    std::to_string(p->value.cols()));
    p->value = std::move(stored);
  }
}

}  // namespace wap
