#pragma once

#include "wap/feature_store.hpp"
#include "wap/metrics.hpp"
#include "wap/ssl.hpp"
#include "wap/wap_model.hpp"

#include <filesystem>
#include <ostream>
#include <vector>

namespace wap {

struct SapConfig {
  int heads = 4;
  int num_classes = 4;
  // Second moment weighted by squared attention, exactly as the pooling
  // formula is usually transcribed; off = standard attentive statistics.
  bool literal_second_moment = false;
  double init_stddev = 0.02;

  void validate() const;
};

struct SapCache {
  Mat z;       // T x D input sequence
  Mat scores;  // T x H pre-softmax
  Mat a;       // T x H attention, columns sum to 1
  Mat mu;      // D x H
  Mat m2;      // D x H raw second moment
  Mat var;     // D x H, clamped at 0
  Mat embed;   // 1 x 2DH
};

struct SapModel {
  SapConfig cfg;
  int d_model = 0;
  Param attn_w, attn_b;  // per-frame projection D -> H
  Param clf_w, clf_b;    // 2*D*H -> num_classes

  SapModel(int d_model_in, const SapConfig& config, Rng& rng);

  // Attention map: per-frame affine then softmax along time, per head.
  Mat attention(const Mat& z) const;
  // Weighted mean and (clamped) variance per feature and head.
  void stat_pool(const Mat& z, const Mat& a, Mat& mu, Mat& var, Mat* m2 = nullptr) const;
  // L2-normalized mu and var halves, concatenated, mu first. 1 x 2DH.
  Mat utterance_embed(const Mat& z, SapCache* cache = nullptr) const;
  // Full head: logits for one utterance. 1 x num_classes.
  Mat forward(const Mat& z, SapCache* cache = nullptr) const;
  // Accumulates head gradients, returns d(loss)/d(z).
  Mat backward(const Mat& d_logits, const SapCache& cache);

  std::vector<NamedParam> named_params();
  void save_to(Checkpoint& ckpt, const std::string& prefix) const;
  void load_from(const Checkpoint& ckpt, const std::string& prefix);
  static SapConfig config_from(const Checkpoint& ckpt, const std::string& prefix, int* d_model);
};

// Softmax cross-entropy for a 1 x C logit row; optional gradient output.
double softmax_ce(const Mat& logits, int label, Mat* d_logits = nullptr);

struct FinetuneConfig {
  int num_classes = 4;
  int batch_size = 96;
  int epochs = 100;
  double lr = 1e-4;
  double min_lr = 0.0;
  double clip_norm = 5.0;
  int sap_heads = 4;
  bool literal_second_moment = false;
  bool augment = true;
  double augment_mask_ratio = 0.15;
  bool freeze_adapter = false;  // head-only fine-tuning
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
  LrSchedule lr_schedule() const { return LrSchedule{lr, epochs, min_lr}; }
};

// One training example: a dataset record plus embedding-stage mask positions
// (empty for originals).
struct TrainItem {
  int record_index = 0;
  std::vector<int> masked;
};

// Oversamples minority classes with masked copies until all classes match the
// majority count. Originals are untouched and come first.
std::vector<TrainItem> augment_minority(const Dataset& data, const std::vector<int>& train_indices,
                                        int num_classes, double mask_ratio, Rng& rng);

struct FinetuneEpochStats {
  int epoch = 0;
  double train_ce = 0, val_ua = 0, val_wa = 0, val_f1 = 0;
};

struct FinetuneResult {
  WapModel adapter;  // best-epoch parameters
  SapModel head;     // best-epoch parameters
  std::vector<FinetuneEpochStats> epochs;
  int best_epoch = -1;
  double best_ua = 0.0;
  ConfusionMatrix best_confusion;
};

// Supervised fine-tuning of adapter + head on one fold; best epoch selected
// by validation UA. Teacher and codebook stay untouched.
FinetuneResult finetune(const WapModel& pretrained, const Dataset& data, const Fold& fold,
                        const FinetuneConfig& cfg, std::ostream* progress = nullptr,
                        const std::filesystem::path* log_path = nullptr);

// Predictions for a set of records under a trained adapter + head.
std::vector<int> predict(const WapModel& adapter, const SapModel& head, const Dataset& data,
                         const std::vector<int>& indices);

}  // namespace wap
