#pragma once

#include "wap/checkpoint.hpp"
#include "wap/common.hpp"
#include "wap/rng.hpp"

#include <cstdint>
#include <vector>

namespace wap {

struct DistillConfig {
  double temperature = 0.1;
  // Count-based step 1/(n+1) keeps each prototype at the running mean of its
  // assignments; a fixed step is available for ablation.
  bool count_based_eta = true;
  double fixed_eta = 0.05;
  int dead_threshold = 50;

  void validate() const;
};

struct Codebook {
  Mat prototypes;                    // K x D
  std::vector<std::int64_t> counts;  // lifetime assignments per prototype
  std::vector<int> stale;            // consecutive batches without assignment

  int k() const { return static_cast<int>(prototypes.rows()); }
  int dim() const { return static_cast<int>(prototypes.cols()); }

  void save_to(Checkpoint& ckpt, const std::string& prefix) const;
  static Codebook load_from(const Checkpoint& ckpt, const std::string& prefix);
};

// Prototypes start as k distinct rows sampled from the warm-up pool.
Codebook init_codebook(int k, const Mat& warmup_pool, std::uint64_t seed);

// Nearest prototype by squared Euclidean distance, ties to the lowest index.
int assign(const Codebook& cb, const Eigen::Ref<const RowVec>& z);

// p <- p + eta (z - p) and count bump; eta from the config mode.
void update_prototype(Codebook& cb, const Eigen::Ref<const RowVec>& z, int index,
                      const DistillConfig& dc);

// Total squared quantization error of the batch under current assignments.
// Monitoring only; nothing is backpropagated through this.
double vq_loss(const Codebook& cb, const Mat& batch);

// cos(z, p_k) / tau for every prototype, epsilon-guarded denominators.
RowVec cosine_logits(const Codebook& cb, const Eigen::Ref<const RowVec>& z, double tau);

// Mean cross-entropy over masked rows of z_student against pseudo-labels.
// Prototypes are constants here; if d_z_student is given it receives the
// gradient for exactly the masked rows (other rows zero).
double pce_loss(const Mat& z_student, const std::vector<int>& masked, const std::vector<int>& labels,
                const Codebook& cb, double tau, Mat* d_z_student = nullptr);

// Bump staleness, clearing it for prototypes assigned this batch.
void note_batch_usage(Codebook& cb, const std::vector<std::int64_t>& batch_histogram);

// Replace prototypes stale for at least `threshold` batches with random rows
// of `recent`; returns how many were replaced.
int reseed_dead(Codebook& cb, const Mat& recent, int threshold, Rng& rng);

}  // namespace wap
