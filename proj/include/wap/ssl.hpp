#pragma once

#include "wap/codebook.hpp"
#include "wap/feature_store.hpp"
#include "wap/wap_model.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

namespace wap {

struct SslConfig {
  double mask_ratio = 0.4;
  double alpha = 0.999;  // teacher EMA smoothing
  double lambda_start = 1.0;
  double lambda_end = 0.5;
  bool cosine_lambda = false;  // linear ramp by default
  int batch_size = 96;
  int epochs = 100;
  double lr = 1e-4;
  double min_lr = 0.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int codebook_k = 1024;
  int warmup_batches = 2;  // teacher batches pooled before codebook init
  DistillConfig distill;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
  LrSchedule lr_schedule() const { return LrSchedule{lr, epochs, min_lr}; }
};

// Student (trainable) and its EMA teacher, identical at construction.
struct BranchPair {
  WapModel student;
  WapModel teacher;

  BranchPair(const WapConfig& cfg, Rng& rng) : student(cfg, rng), teacher(student) {}
};

// teacher <- alpha teacher + (1 - alpha) student, every parameter.
void ema_update(BranchPair& pair, double alpha);

// round(ratio * T) masked positions, clamped to [1, T-1]; T == 1 is an error.
std::vector<int> sample_mask(int t, double ratio, Rng& rng);

// Mean squared frame error over masked rows; optional gradient w.r.t. z_s.
double rec_loss(const Mat& z_s, const Mat& z_t, const std::vector<int>& masked,
                Mat* d_zs = nullptr);

// Interpolation from start at epoch 0 to end at total_epochs.
double lambda_schedule(int epoch, int total_epochs, double start, double end,
                       bool cosine_shape = false);

struct StepStats {
  double total = 0, rec = 0, pce = 0;
};

struct EpochStats {
  int epoch = 0;
  double rec = 0, pce = 0, lambda = 0, lr = 0, entropy = 0;
};

class SslTrainer {
 public:
  SslTrainer(const WapConfig& model_cfg, const SslConfig& cfg);

  struct BatchLosses {
    double rec = 0, pce = 0, total = 0;
    std::vector<Mat> teacher_out;  // per utterance, batch order
  };

  // Phase 1: losses + student gradients. Teacher and codebook are read-only.
  BatchLosses batch_losses(const std::vector<const FrameSequence*>& batch, double lambda);
  // Phase 2: clip + Adam on the student.
  void optimizer_step(double lr_value);
  // Phase 3: teacher EMA.
  void apply_ema();
  // Phase 4: warm-up pooling or online prototype updates + reseeding.
  void update_codebook(const std::vector<Mat>& teacher_out);

  // All four phases in order.
  StepStats ssl_step(const std::vector<const FrameSequence*>& batch, int epoch, double lr_value);

  double epoch_entropy() const;  // natural-log entropy of this epoch's assignments
  void reset_epoch_histogram();

  WapModel& student() { return pair_.student; }
  WapModel& teacher() { return pair_.teacher; }
  bool codebook_ready() const { return codebook_.has_value(); }
  const Codebook& codebook() const;
  Codebook& codebook();
  const SslConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  void losses_for_range(const std::vector<const FrameSequence*>& batch,
                        const std::vector<std::vector<int>>& masks, std::size_t begin,
                        std::size_t end, double lambda, double inv_batch, WapModel& student_model,
                        std::vector<Mat>& teacher_slots, double& rec_sum, double& pce_sum) const;

  WapConfig model_cfg_;
  SslConfig cfg_;
  Rng rng_;
  BranchPair pair_;
  std::optional<Codebook> codebook_;
  std::vector<Mat> warmup_pool_;
  int warmup_batches_seen_ = 0;
  std::vector<std::int64_t> epoch_hist_;
};

struct PretrainResult {
  std::vector<EpochStats> epochs;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
};

// Full pretraining loop over a dataset; writes checkpoint + metrics log into
// out_dir. Progress lines go to `progress` when given.
PretrainResult pretrain(const Dataset& data, const WapConfig& model_cfg, const SslConfig& cfg,
                        const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

}  // namespace wap
