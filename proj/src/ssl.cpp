#include "wap/ssl.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

namespace wap {

void SslConfig::validate() const {
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0)
    throw InvalidArgument("mask ratio must lie strictly between 0 and 1");
  if (alpha < 0.0 || alpha >= 1.0) throw InvalidArgument("ema alpha must lie in [0, 1)");
  if (lambda_start < 0.0 || lambda_start > 1.0 || lambda_end < 0.0 || lambda_end > 1.0)
    throw InvalidArgument("lambda endpoints must lie in [0, 1]");
  if (lambda_start < lambda_end)
    throw InvalidArgument("lambda schedule must not increase");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  lr_schedule().validate();
  if (codebook_k < 2) throw InvalidArgument("codebook needs at least 2 prototypes");
  if (warmup_batches < 1) throw InvalidArgument("warm-up needs at least 1 batch");
  if (threads < 1) throw InvalidArgument("thread count must be at least 1");
  distill.validate();
}

void ema_update(BranchPair& pair, double alpha) {
  auto t = pair.teacher.named_params();
  auto s = pair.student.named_params();
  ema_blend(t, s, alpha);
}

std::vector<int> sample_mask(int t, double ratio, Rng& rng) {
  if (t < 1) throw InvalidArgument("empty sequence");
  if (t == 1) throw InvalidArgument("sequence too short to mask");
  int count = static_cast<int>(std::lround(ratio * t));
  count = std::max(1, std::min(count, t - 1));
  return rng.sample_without_replacement(t, count);
}

double rec_loss(const Mat& z_s, const Mat& z_t, const std::vector<int>& masked, Mat* d_zs) {
  if (masked.empty()) throw InvalidArgument("no masked positions for reconstruction loss");
  if (z_s.rows() != z_t.rows() || z_s.cols() != z_t.cols())
    throw InvalidArgument("reconstruction loss: shape mismatch");
  if (d_zs) *d_zs = Mat::Zero(z_s.rows(), z_s.cols());
  const double inv_m = 1.0 / static_cast<double>(masked.size());
  double loss = 0.0;
  for (int pos : masked) {
    if (pos < 0 || pos >= z_s.rows()) throw InvalidArgument("masked position out of range");
    loss += (z_s.row(pos) - z_t.row(pos)).squaredNorm();
    if (d_zs) d_zs->row(pos) = 2.0 * inv_m * (z_s.row(pos) - z_t.row(pos));
  }
  return loss * inv_m;
}

double lambda_schedule(int epoch, int total_epochs, double start, double end, bool cosine_shape) {
  if (total_epochs < 1) throw InvalidArgument("total epochs must be at least 1");
  if (epoch < 0 || epoch > total_epochs)
    throw InvalidArgument("epoch " + std::to_string(epoch) + " outside schedule");
  const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  if (cosine_shape) return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * frac));
  return start - (start - end) * frac;
}

SslTrainer::SslTrainer(const WapConfig& model_cfg, const SslConfig& cfg)
    : model_cfg_(model_cfg), cfg_(cfg), rng_(cfg.seed), pair_(model_cfg, rng_) {
  cfg_.validate();
}

const Codebook& SslTrainer::codebook() const {
  if (!codebook_) throw InvalidArgument("codebook not initialized yet");
  return *codebook_;
}

Codebook& SslTrainer::codebook() {
  if (!codebook_) throw InvalidArgument("codebook not initialized yet");
  return *codebook_;
}

void SslTrainer::losses_for_range(const std::vector<const FrameSequence*>& batch,
                                  const std::vector<std::vector<int>>& masks, std::size_t begin,
                                  std::size_t end, double lambda, double inv_batch,
                                  WapModel& student_model, std::vector<Mat>& teacher_slots,
                                  double& rec_sum, double& pce_sum) const {
  const bool use_pce = codebook_.has_value();
  const double w_rec = lambda * inv_batch;
  const double w_pce = (1.0 - lambda) * inv_batch;
  for (std::size_t i = begin; i < end; ++i) {
    const FrameSequence& s = *batch[i];
    const Mat seq = s.frames.cast<double>();
    WapCache cache;
    WapForwardResult res_s = student_model.forward(seq, masks[i], &cache);
    WapForwardResult res_t = pair_.teacher.forward(seq, {}, nullptr);

    Mat d_rec;
    rec_sum += rec_loss(res_s.output, res_t.output, masks[i], &d_rec);
    Mat d_total = w_rec * d_rec;

    if (use_pce) {
      std::vector<int> labels(masks[i].size());
      for (std::size_t j = 0; j < masks[i].size(); ++j)
        labels[j] = assign(*codebook_, res_t.output.row(masks[i][j]));
      Mat d_pce;
      const bool need_grad = w_pce != 0.0;
      pce_sum += pce_loss(res_s.output, masks[i], labels, *codebook_,
                          cfg_.distill.temperature, need_grad ? &d_pce : nullptr);
      if (need_grad) d_total += w_pce * d_pce;
    }
    student_model.backward(d_total, cache);
    teacher_slots[i] = std::move(res_t.output);
  }
}

SslTrainer::BatchLosses SslTrainer::batch_losses(const std::vector<const FrameSequence*>& batch,
                                                 double lambda) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  if (lambda < 0.0 || lambda > 1.0) throw InvalidArgument("lambda outside [0, 1]");
  const std::size_t n = batch.size();
  const double inv_batch = 1.0 / static_cast<double>(n);

  zero_grads(pair_.student.named_params());

  // Masks come from the trainer rng up front so threading cannot change them.
  std::vector<std::vector<int>> masks(n);
  for (std::size_t i = 0; i < n; ++i)
    masks[i] = sample_mask(batch[i]->t(), cfg_.mask_ratio, rng_);

  BatchLosses out;
  out.teacher_out.resize(n);
  double rec_sum = 0.0, pce_sum = 0.0;

  const auto workers = static_cast<std::size_t>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg_.threads), n));
  if (workers <= 1) {
    losses_for_range(batch, masks, 0, n, lambda, inv_batch, pair_.student, out.teacher_out,
                     rec_sum, pce_sum);
  } else {
    // Per-worker parameter clones; gradients reduce in a fixed chunk order so
    // a run is reproducible for a given thread count.
    std::vector<WapModel> clones(workers, pair_.student);
    std::vector<double> rec_w(workers, 0.0), pce_w(workers, 0.0);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t base = n / workers, rem = n % workers;
    std::size_t start = 0;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t len = base + (w < rem ? 1 : 0);
      const std::size_t stop = start + len;
      pool.emplace_back([&, w, start, stop] {
        losses_for_range(batch, masks, start, stop, lambda, inv_batch, clones[w],
                         out.teacher_out, rec_w[w], pce_w[w]);
      });
      start = stop;
    }
    for (auto& th : pool) th.join();
    auto dst = pair_.student.named_params();
    for (std::size_t w = 0; w < workers; ++w) {
      auto src = clones[w].named_params();
      accumulate_grads(dst, src);
      rec_sum += rec_w[w];
      pce_sum += pce_w[w];
    }
  }

  out.rec = rec_sum * inv_batch;
  out.pce = pce_sum * inv_batch;
  out.total = lambda * out.rec + (1.0 - lambda) * out.pce;
  return out;
}

void SslTrainer::optimizer_step(double lr_value) {
  auto params = pair_.student.named_params();
  if (cfg_.clip_norm > 0.0) clip_global_grad_norm(params, cfg_.clip_norm);
  adam_step_all(params, lr_value);
}

void SslTrainer::apply_ema() { ema_update(pair_, cfg_.alpha); }

void SslTrainer::update_codebook(const std::vector<Mat>& teacher_out) {
  if (!codebook_) {
    for (const Mat& m : teacher_out) warmup_pool_.push_back(m);
    warmup_batches_seen_ += 1;
    if (warmup_batches_seen_ >= cfg_.warmup_batches) {
      Eigen::Index rows = 0;
      for (const Mat& m : warmup_pool_) rows += m.rows();
      Mat pool(rows, model_cfg_.d_model);
      Eigen::Index at = 0;
      for (const Mat& m : warmup_pool_) {
        pool.middleRows(at, m.rows()) = m;
        at += m.rows();
      }
      codebook_ = init_codebook(cfg_.codebook_k, pool, rng_.next_u64());
      epoch_hist_.assign(static_cast<std::size_t>(cfg_.codebook_k), 0);
      warmup_pool_.clear();
      warmup_pool_.shrink_to_fit();
    }
    return;
  }

  Codebook& cb = *codebook_;
  std::vector<std::int64_t> hist(static_cast<std::size_t>(cb.k()), 0);
  for (const Mat& m : teacher_out) {
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      const int a = assign(cb, m.row(t));
      update_prototype(cb, m.row(t), a, cfg_.distill);
      hist[static_cast<std::size_t>(a)] += 1;
      epoch_hist_[static_cast<std::size_t>(a)] += 1;
    }
  }
  note_batch_usage(cb, hist);

  int max_stale = 0;
  for (int s : cb.stale) max_stale = std::max(max_stale, s);
  if (max_stale >= cfg_.distill.dead_threshold) {
    Eigen::Index rows = 0;
    for (const Mat& m : teacher_out) rows += m.rows();
    Mat recent(rows, model_cfg_.d_model);
    Eigen::Index at = 0;
    for (const Mat& m : teacher_out) {
      recent.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    reseed_dead(cb, recent, cfg_.distill.dead_threshold, rng_);
  }
}

StepStats SslTrainer::ssl_step(const std::vector<const FrameSequence*>& batch, int epoch,
                               double lr_value) {
  const double lambda =
      lambda_schedule(epoch, cfg_.epochs, cfg_.lambda_start, cfg_.lambda_end, cfg_.cosine_lambda);
  BatchLosses losses = batch_losses(batch, lambda);
  optimizer_step(lr_value);
  apply_ema();
  update_codebook(losses.teacher_out);
  return StepStats{losses.total, losses.rec, losses.pce};
}

double SslTrainer::epoch_entropy() const {
  std::int64_t total = 0;
  for (auto c : epoch_hist_) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (auto c : epoch_hist_) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

void SslTrainer::reset_epoch_histogram() {
  std::fill(epoch_hist_.begin(), epoch_hist_.end(), 0);
}

PretrainResult pretrain(const Dataset& data, const WapConfig& model_cfg, const SslConfig& cfg,
                        const std::filesystem::path& out_dir, std::ostream* progress) {
  model_cfg.validate();
  cfg.validate();
  if (data.sequences.empty()) throw InvalidArgument("empty dataset");
  if (data.dim() != model_cfg.d_in)
    throw InvalidArgument("dataset frame width " + std::to_string(data.dim()) +
                          " does not match model input width " + std::to_string(model_cfg.d_in));
  if (data.max_t() > model_cfg.t_max)
    throw InvalidArgument("dataset has sequences of length " + std::to_string(data.max_t()) +
                          " but the positional table only covers " +
                          std::to_string(model_cfg.t_max));

  std::filesystem::create_directories(out_dir);
  SslTrainer trainer(model_cfg, cfg);
  const int n = static_cast<int>(data.sequences.size());

  PretrainResult result;
  result.log_path = out_dir / "pretrain_log.tsv";
  result.checkpoint_path = out_dir / "pretrain.wapc";
  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + result.log_path.string() + " for writing");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_value = cosine_lr(cfg.lr_schedule(), epoch);
    const double lambda =
        lambda_schedule(epoch, cfg.epochs, cfg.lambda_start, cfg.lambda_end, cfg.cosine_lambda);

    Rng order_rng = trainer.rng().fork(static_cast<std::uint64_t>(epoch) + 1);
    order_rng.shuffle(order);

    trainer.reset_epoch_histogram();
    double rec_sum = 0.0, pce_sum = 0.0;
    for (int at = 0; at < n; at += cfg.batch_size) {
      const int stop = std::min(n, at + cfg.batch_size);
      std::vector<const FrameSequence*> batch;
      batch.reserve(static_cast<std::size_t>(stop - at));
      for (int i = at; i < stop; ++i)
        batch.push_back(&data.sequences[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      StepStats st = trainer.ssl_step(batch, epoch, lr_value);
      rec_sum += st.rec * static_cast<double>(stop - at);
      pce_sum += st.pce * static_cast<double>(stop - at);
    }

    EpochStats es;
    es.epoch = epoch;
    es.rec = rec_sum / static_cast<double>(n);
    es.pce = pce_sum / static_cast<double>(n);
    es.lambda = lambda;
    es.lr = lr_value;
    es.entropy = trainer.epoch_entropy();
    result.epochs.push_back(es);

    const std::string line = std::to_string(es.epoch) + "\t" + fmt_sci(es.rec) + "\t" +
                             fmt_sci(es.pce) + "\t" + fmt_fixed(es.lambda) + "\t" +
                             fmt_sci(es.lr) + "\t" + fmt_fixed(es.entropy);
    log << line << "\n";
    if (progress) (*progress) << line << "\n";
  }
  log.flush();
  if (!log) throw IoError("write failed for " + result.log_path.string());

  if (!trainer.codebook_ready())
    throw InvalidArgument(
        "pretraining finished before the codebook warm-up pool was complete; "
        "lower warmup_batches or add data");

  Checkpoint ckpt;
  trainer.student().save_to(ckpt, "student/wap/");
  trainer.teacher().save_to(ckpt, "teacher/wap/");
  trainer.codebook().save_to(ckpt, "codebook/");
  write_checkpoint(result.checkpoint_path.string(), ckpt);
  return result;
}

}  // namespace wap
