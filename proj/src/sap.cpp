#include "wap/sap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace wap {

namespace {
constexpr double kNormEps = 1e-8;

int argmax_row(const Mat& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.cols(); ++i)
    if (row(0, i) > row(0, best)) best = static_cast<int>(i);
  return best;
}

RowVec l2_normalize(const Eigen::Map<const RowVec>& f) {
  return f / (f.norm() + kNormEps);
}

// d(f / (|f| + eps)) pullback.
RowVec l2_normalize_backward(const RowVec& f, const RowVec& dn) {
  const double r = f.norm();
  const double g = r + kNormEps;
  RowVec df = dn / g;
  if (r > 0.0) df -= f * (f.dot(dn) / (r * g * g));
  return df;
}
}  // namespace

void SapConfig::validate() const {
  if (heads < 1) throw InvalidArgument("attention needs at least one head");
  if (num_classes < 2) throw InvalidArgument("need at least two classes");
  if (init_stddev <= 0.0) throw InvalidArgument("init stddev must be positive");
}

SapModel::SapModel(int d_model_in, const SapConfig& config, Rng& rng)
    : cfg(config), d_model(d_model_in) {
  cfg.validate();
  if (d_model < 1) throw InvalidArgument("model width must be positive");
  attn_w.init_normal(d_model, cfg.heads, cfg.init_stddev, rng);
  attn_b.init_zero(1, cfg.heads);
  clf_w.init_normal(2 * d_model * cfg.heads, cfg.num_classes, cfg.init_stddev, rng);
  clf_b.init_zero(1, cfg.num_classes);
}

Mat SapModel::attention(const Mat& z) const {
  if (z.rows() < 1) throw InvalidArgument("empty sequence");
  Mat scores = affine_forward(z, attn_w.value, attn_b.value);
  // softmax along the time axis = row softmax of the transpose
  return softmax_rows(scores.transpose()).transpose();
}

void SapModel::stat_pool(const Mat& z, const Mat& a, Mat& mu, Mat& var, Mat* m2_out) const {
  if (z.rows() != a.rows()) throw InvalidArgument("pooling shapes disagree");
  mu = z.transpose() * a;
  Mat z2 = z.array().square();
  Mat m2;
  if (cfg.literal_second_moment) {
    m2 = z2.transpose() * a.array().square().matrix();
  } else {
    m2 = z2.transpose() * a;
  }
  var = (m2 - mu.array().square().matrix()).cwiseMax(0.0);
  if (m2_out) *m2_out = std::move(m2);
}

Mat SapModel::utterance_embed(const Mat& z, SapCache* cache) const {
  Mat scores = affine_forward(z, attn_w.value, attn_b.value);
  Mat a = softmax_rows(scores.transpose()).transpose();
  Mat mu, var, m2;
  stat_pool(z, a, mu, var, &m2);

  const auto dh = static_cast<Eigen::Index>(d_model) * cfg.heads;
  Eigen::Map<const RowVec> mu_flat(mu.data(), dh);
  Eigen::Map<const RowVec> var_flat(var.data(), dh);
  Mat embed(1, 2 * dh);
  embed.row(0).leftCols(dh) = l2_normalize(mu_flat);
  embed.row(0).rightCols(dh) = l2_normalize(var_flat);

  if (cache) {
    cache->z = z;
    cache->scores = std::move(scores);
    cache->a = std::move(a);
    cache->mu = std::move(mu);
    cache->m2 = std::move(m2);
    cache->var = std::move(var);
    cache->embed = embed;
  }
  return embed;
}

Mat SapModel::forward(const Mat& z, SapCache* cache) const {
  Mat embed = utterance_embed(z, cache);
  return affine_forward(embed, clf_w.value, clf_b.value);
}

Mat SapModel::backward(const Mat& d_logits, const SapCache& cache) {
  Mat d_embed = affine_backward(cache.embed, clf_w.value, d_logits, clf_w.grad, clf_b.grad);

  const auto dh = static_cast<Eigen::Index>(d_model) * cfg.heads;
  Eigen::Map<const RowVec> mu_flat(cache.mu.data(), dh);
  Eigen::Map<const RowVec> var_flat(cache.var.data(), dh);
  RowVec d_mu_flat = l2_normalize_backward(mu_flat, d_embed.row(0).leftCols(dh));
  RowVec d_var_flat = l2_normalize_backward(var_flat, d_embed.row(0).rightCols(dh));
  Eigen::Map<const Mat> d_mu_pool(d_mu_flat.data(), d_model, cfg.heads);
  Eigen::Map<const Mat> d_var(d_var_flat.data(), d_model, cfg.heads);

  // var = max(m2 - mu^2, 0): the clamp gates the gradient.
  Mat pre = cache.m2 - cache.mu.array().square().matrix();
  Mat d_varpre = (pre.array() > 0.0).select(d_var, Mat::Zero(d_model, cfg.heads));
  Mat d_m2 = d_varpre;
  Mat d_mu = d_mu_pool - 2.0 * (cache.mu.array() * d_varpre.array()).matrix();

  // mu = z^T a; m2 = (z.^2)^T a (or with a.^2 in the literal mode).
  Mat z2 = cache.z.array().square();
  Mat dz = cache.a * d_mu.transpose();
  Mat da = cache.z * d_mu;
  if (cfg.literal_second_moment) {
    Mat a2 = cache.a.array().square();
    dz += 2.0 * (cache.z.array() * (a2 * d_m2.transpose()).array()).matrix();
    da += 2.0 * (cache.a.array() * (z2 * d_m2).array()).matrix();
  } else {
    dz += 2.0 * (cache.z.array() * (cache.a * d_m2.transpose()).array()).matrix();
    da += z2 * d_m2;
  }

  // through the per-head time softmax
  Mat d_scores = softmax_rows_backward(cache.a.transpose(), da.transpose()).transpose();
  dz += affine_backward(cache.z, attn_w.value, d_scores, attn_w.grad, attn_b.grad);
  return dz;
}

std::vector<NamedParam> SapModel::named_params() {
  return {{"sap/attn/w", &attn_w},
          {"sap/attn/b", &attn_b},
          {"clf/w", &clf_w},
          {"clf/b", &clf_b}};
}

void SapModel::save_to(Checkpoint& ckpt, const std::string& prefix) const {
  Mat conf(1, 4);
  conf << cfg.heads, cfg.num_classes, cfg.literal_second_moment ? 1.0 : 0.0, d_model;
  ckpt.put(prefix + "sap/config", conf);
  auto params = const_cast<SapModel*>(this)->named_params();
  for (const auto& [name, p] : params) ckpt.put(prefix + name, p->value);
}

SapConfig SapModel::config_from(const Checkpoint& ckpt, const std::string& prefix, int* d_model) {
  Mat conf = ckpt.get_mat(prefix + "sap/config");
  if (conf.size() != 4) throw IoError("malformed head config in checkpoint");
  SapConfig cfg;
  cfg.heads = static_cast<int>(conf(0, 0));
  cfg.num_classes = static_cast<int>(conf(0, 1));
  cfg.literal_second_moment = conf(0, 2) != 0.0;
  if (d_model) *d_model = static_cast<int>(conf(0, 3));
  cfg.validate();
  return cfg;
}

void SapModel::load_from(const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& [name, p] : named_params()) {
    Mat stored = ckpt.get_mat(prefix + name);
    if (stored.rows() != p->value.rows() || stored.cols() != p->value.cols())
      throw IoError("checkpoint tensor " + prefix + name + " has unexpected shape");
    p->value = std::move(stored);
  }
}

double softmax_ce(const Mat& logits, int label, Mat* d_logits) {
  if (logits.rows() != 1) throw InvalidArgument("logits must be a single row");
  if (label < 0 || label >= logits.cols()) throw InvalidArgument("label out of range");
  const double mx = logits.maxCoeff();
  RowVec ex = (logits.row(0).array() - mx).exp();
  const double sum = ex.sum();
  const double loss = -(logits(0, label) - mx - std::log(sum));
  if (d_logits) {
    *d_logits = Mat(1, logits.cols());
    d_logits->row(0) = ex / sum;
    (*d_logits)(0, label) -= 1.0;
  }
  return loss;
}

std::vector<TrainItem> augment_minority(const Dataset& data, const std::vector<int>& train_indices,
                                        int num_classes, double mask_ratio, Rng& rng) {
  std::vector<TrainItem> items;
  items.reserve(train_indices.size());
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
  for (int idx : train_indices) {
    if (idx < 0 || idx >= static_cast<int>(data.sequences.size()))
      throw InvalidArgument("train index out of range");
    const int label = data.manifest.records[static_cast<std::size_t>(idx)].label;
    if (label < 0 || label >= num_classes)
      throw InvalidArgument("label " + std::to_string(label) + " outside the configured " +
                            std::to_string(num_classes) + " classes");
    by_class[static_cast<std::size_t>(label)].push_back(idx);
    items.push_back(TrainItem{idx, {}});
  }
  std::size_t max_count = 0;
  for (const auto& v : by_class) max_count = std::max(max_count, v.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto& sources = by_class[static_cast<std::size_t>(c)];
    if (sources.empty()) continue;  // nothing to copy from
    for (std::size_t j = sources.size(); j < max_count; ++j) {
      const int src = sources[(j - sources.size()) % sources.size()];
      const int t = data.sequences[static_cast<std::size_t>(src)].t();
      items.push_back(TrainItem{src, sample_mask(t, mask_ratio, rng)});
    }
  }
  return items;
}

void FinetuneConfig::validate() const {
  if (num_classes < 2) throw InvalidArgument("need at least two classes");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  lr_schedule().validate();
  if (sap_heads < 1) throw InvalidArgument("attention needs at least one head");
  if (augment && (augment_mask_ratio <= 0.0 || augment_mask_ratio >= 1.0))
    throw InvalidArgument("augmentation mask ratio must lie strictly between 0 and 1");
  if (threads < 1) throw InvalidArgument("thread count must be at least 1");
}

namespace {

struct TrainModels {
  WapModel adapter;
  SapModel head;
};

// Forward/backward over items[begin..end), gradient accumulation into the
// given models. d_logits scale folds in the 1/batch factor.
void finetune_range(const Dataset& data, const std::vector<TrainItem>& items,
                    const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                    double inv_batch, bool freeze_adapter, WapModel& adapter, SapModel& head,
                    double& ce_sum) {
  for (std::size_t i = begin; i < end; ++i) {
    const TrainItem& item = items[order[i]];
    const FrameSequence& s = data.sequences[static_cast<std::size_t>(item.record_index)];
    const Mat seq = s.frames.cast<double>();
    WapCache acache;
    WapForwardResult res = adapter.forward(seq, item.masked, freeze_adapter ? nullptr : &acache);
    SapCache hcache;
    Mat logits = head.forward(res.output, &hcache);
    Mat d_logits;
    ce_sum += softmax_ce(logits, s.label.value(), &d_logits);
    d_logits *= inv_batch;
    Mat dz = head.backward(d_logits, hcache);
    if (!freeze_adapter) adapter.backward(dz, acache);
  }
}

}  // namespace

std::vector<int> predict(const WapModel& adapter, const SapModel& head, const Dataset& data,
                         const std::vector<int>& indices) {
  std::vector<int> preds;
  preds.reserve(indices.size());
  for (int idx : indices) {
    const Mat seq = data.sequences[static_cast<std::size_t>(idx)].frames.cast<double>();
    WapForwardResult res = adapter.forward(seq, {}, nullptr);
    Mat logits = head.forward(res.output, nullptr);
    preds.push_back(argmax_row(logits));
  }
  return preds;
}

FinetuneResult finetune(const WapModel& pretrained, const Dataset& data, const Fold& fold,
                        const FinetuneConfig& cfg, std::ostream* progress,
                        const std::filesystem::path* log_path) {
  cfg.validate();
  if (fold.train.empty() || fold.validation.empty())
    throw InvalidArgument("fold must have nonempty train and validation splits");
  for (int idx : fold.validation) {
    const int label = data.manifest.records[static_cast<std::size_t>(idx)].label;
    if (label < 0 || label >= cfg.num_classes)
      throw InvalidArgument("validation label outside the configured class count");
  }

  Rng rng(cfg.seed);
  WapModel adapter = pretrained;
  SapConfig sap_cfg;
  sap_cfg.heads = cfg.sap_heads;
  sap_cfg.num_classes = cfg.num_classes;
  sap_cfg.literal_second_moment = cfg.literal_second_moment;
  SapModel head(adapter.cfg.d_model, sap_cfg, rng);

  std::vector<TrainItem> items;
  if (cfg.augment) {
    items = augment_minority(data, fold.train, cfg.num_classes, cfg.augment_mask_ratio, rng);
  } else {
    items.reserve(fold.train.size());
    for (int idx : fold.train) items.push_back(TrainItem{idx, {}});
  }

  std::ofstream log;
  if (log_path) {
    log.open(*log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open " + log_path->string() + " for writing");
  }

  std::vector<int> val_truth;
  val_truth.reserve(fold.validation.size());
  for (int idx : fold.validation)
    val_truth.push_back(data.manifest.records[static_cast<std::size_t>(idx)].label);

  FinetuneResult result{adapter, head, {}, -1, -1.0, {}};

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_value = cosine_lr(cfg.lr_schedule(), epoch);
    Rng order_rng = rng.fork(static_cast<std::uint64_t>(epoch) + 1);
    order_rng.shuffle(order);

    double ce_sum = 0.0;
    const std::size_t n = items.size();
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, at + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - at);

      zero_grads(head.named_params());
      if (!cfg.freeze_adapter) zero_grads(adapter.named_params());

      const auto workers = static_cast<std::size_t>(std::min<std::size_t>(
          static_cast<std::size_t>(cfg.threads), stop - at));
      if (workers <= 1) {
        finetune_range(data, items, order, at, stop, inv_batch, cfg.freeze_adapter, adapter, head,
                       ce_sum);
      } else {
        std::vector<TrainModels> clones;
        clones.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) clones.push_back(TrainModels{adapter, head});
        std::vector<double> ce_w(workers, 0.0);
        std::vector<std::thread> pool;
        const std::size_t len = stop - at;
        const std::size_t base = len / workers, rem = len % workers;
        std::size_t start = at;
        for (std::size_t w = 0; w < workers; ++w) {
          const std::size_t wlen = base + (w < rem ? 1 : 0);
          const std::size_t wstop = start + wlen;
          pool.emplace_back([&, w, start, wstop] {
            finetune_range(data, items, order, start, wstop, inv_batch, cfg.freeze_adapter,
                           clones[w].adapter, clones[w].head, ce_w[w]);
          });
          start = wstop;
        }
        for (auto& th : pool) th.join();
        auto head_dst = head.named_params();
        auto adapter_dst = adapter.named_params();
        for (std::size_t w = 0; w < workers; ++w) {
          auto hs = clones[w].head.named_params();
          accumulate_grads(head_dst, hs);
          if (!cfg.freeze_adapter) {
            auto as = clones[w].adapter.named_params();
            accumulate_grads(adapter_dst, as);
          }
          ce_sum += ce_w[w];
        }
      }

      std::vector<NamedParam> trainable = head.named_params();
      if (!cfg.freeze_adapter) {
        auto ap = adapter.named_params();
        trainable.insert(trainable.end(), ap.begin(), ap.end());
      }
      if (cfg.clip_norm > 0.0) clip_global_grad_norm(trainable, cfg.clip_norm);
      adam_step_all(trainable, lr_value);
    }

    std::vector<int> preds = predict(adapter, head, data, fold.validation);
    ConfusionMatrix cm = confusion(val_truth, preds, cfg.num_classes);
    FinetuneEpochStats es;
    es.epoch = epoch;
    es.train_ce = ce_sum / static_cast<double>(items.size());
    es.val_ua = ua(cm);
    es.val_wa = wa(cm);
    es.val_f1 = macro_f1(cm);
    result.epochs.push_back(es);

    if (es.val_ua > result.best_ua) {
      result.best_ua = es.val_ua;
      result.best_epoch = epoch;
      result.adapter = adapter;
      result.head = head;
      result.best_confusion = cm;
    }

    const std::string line = std::to_string(es.epoch) + "\t" + fmt_sci(es.train_ce) + "\t" +
                             fmt_fixed(es.val_ua) + "\t" + fmt_fixed(es.val_wa) + "\t" +
                             fmt_fixed(es.val_f1);
    if (log_path) log << line << "\n";
    if (progress) (*progress) << line << "\n";
  }

  if (log_path) {
    log.flush();
    if (!log) throw IoError("write failed for " + log_path->string());
  }
  return result;
}

}  // namespace wap
