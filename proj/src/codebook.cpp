#include "wap/codebook.hpp"

#include <cmath>

namespace wap {

namespace {
constexpr double kCosEps = 1e-8;
}

void DistillConfig::validate() const {
  if (temperature <= 0.0) throw InvalidArgument("temperature must be positive");
  if (!count_based_eta && (fixed_eta <= 0.0 || fixed_eta > 1.0))
    throw InvalidArgument("fixed eta must lie in (0, 1]");
  if (dead_threshold < 1) throw InvalidArgument("dead threshold must be at least 1");
}

void Codebook::save_to(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put(prefix + "prototypes", prototypes);
  Mat c(1, k());
  for (int i = 0; i < k(); ++i) c(0, i) = static_cast<double>(counts[static_cast<std::size_t>(i)]);
  ckpt.put(prefix + "counts", c);
}

Codebook Codebook::load_from(const Checkpoint& ckpt, const std::string& prefix) {
  Codebook cb;
  cb.prototypes = ckpt.get_mat(prefix + "prototypes");
  Mat c = ckpt.get_mat(prefix + "counts");
  if (c.size() != cb.prototypes.rows())
    throw IoError("codebook counts length does not match prototype count");
  cb.counts.resize(static_cast<std::size_t>(c.size()));
  for (Eigen::Index i = 0; i < c.size(); ++i)
    cb.counts[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(c(0, i));
  cb.stale.assign(cb.counts.size(), 0);
  return cb;
}

Codebook init_codebook(int k, const Mat& warmup_pool, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("codebook needs at least 2 prototypes");
  if (warmup_pool.rows() < k)
    throw InvalidArgument("insufficient warm-up pool: need " + std::to_string(k) +
                          " samples, have " + std::to_string(warmup_pool.rows()));
  if (!all_finite(warmup_pool)) throw NumericError("non-finite warm-up embeddings");
  Rng rng(seed);
  auto picks = rng.sample_without_replacement(static_cast<int>(warmup_pool.rows()), k);
  Codebook cb;
  cb.prototypes.resize(k, warmup_pool.cols());
  for (int i = 0; i < k; ++i) cb.prototypes.row(i) = warmup_pool.row(picks[static_cast<std::size_t>(i)]);
  cb.counts.assign(static_cast<std::size_t>(k), 0);
  cb.stale.assign(static_cast<std::size_t>(k), 0);
  return cb;
}

int assign(const Codebook& cb, const Eigen::Ref<const RowVec>& z) {
  if (cb.k() < 1) throw InvalidArgument("codebook is empty");
  int best = 0;
  double best_d = (cb.prototypes.row(0) - z).squaredNorm();
  for (int i = 1; i < cb.k(); ++i) {
    const double d = (cb.prototypes.row(i) - z).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void update_prototype(Codebook& cb, const Eigen::Ref<const RowVec>& z, int index,
                      const DistillConfig& dc) {
  if (index < 0 || index >= cb.k()) throw InvalidArgument("prototype index out of range");
  auto& n = cb.counts[static_cast<std::size_t>(index)];
  const double eta =
      dc.count_based_eta ? 1.0 / static_cast<double>(n + 1) : dc.fixed_eta;
  cb.prototypes.row(index) += eta * (z - cb.prototypes.row(index));
  n += 1;
}

double vq_loss(const Codebook& cb, const Mat& batch) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const int a = assign(cb, batch.row(i));
    total += (batch.row(i) - cb.prototypes.row(a)).squaredNorm();
  }
  return total;
}

RowVec cosine_logits(const Codebook& cb, const Eigen::Ref<const RowVec>& z, double tau) {
  if (tau <= 0.0) throw InvalidArgument("temperature must be positive");
  const double zn = z.norm();
  RowVec out(cb.k());
  for (int i = 0; i < cb.k(); ++i) {
    const double pn = cb.prototypes.row(i).norm();
    out(i) = z.dot(cb.prototypes.row(i)) / (zn * pn + kCosEps) / tau;
  }
  return out;
}

double pce_loss(const Mat& z_student, const std::vector<int>& masked, const std::vector<int>& labels,
                const Codebook& cb, double tau, Mat* d_z_student) {
  if (masked.empty()) throw InvalidArgument("no masked positions for distillation loss");
  if (masked.size() != labels.size())
    throw InvalidArgument("pseudo-label count does not match masked positions");
  if (d_z_student) *d_z_student = Mat::Zero(z_student.rows(), z_student.cols());

  const double inv_m = 1.0 / static_cast<double>(masked.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < masked.size(); ++j) {
    const int row = masked[j];
    const int label = labels[j];
    if (row < 0 || row >= z_student.rows()) throw InvalidArgument("masked position out of range");
    if (label < 0 || label >= cb.k()) throw InvalidArgument("pseudo-label out of range");
    const RowVec z = z_student.row(row);
    RowVec logits = cosine_logits(cb, z, tau);
    const double mx = logits.maxCoeff();
    RowVec ex = (logits.array() - mx).exp();
    const double sum = ex.sum();
    loss += -(logits(label) - mx - std::log(sum));

    if (d_z_student) {
      const double zn = z.norm();
      RowVec dlogit = ex / sum;  // softmax probabilities
      dlogit(label) -= 1.0;
      dlogit *= inv_m;
      RowVec dz = RowVec::Zero(z.size());
      for (int k = 0; k < cb.k(); ++k) {
        const auto p = cb.prototypes.row(k);
        const double pn = p.norm();
        const double denom = zn * pn + kCosEps;
        const double cosv = z.dot(p) / denom;
        // d/dz [ z.p / (|z||p| + eps) ] = p/denom - cos * |p| z / (|z| denom)
        if (zn > 0.0)
          dz += dlogit(k) / tau * (p / denom - (cosv * pn / (zn * denom)) * z);
        else
          dz += dlogit(k) / tau * (p / denom);
      }
      d_z_student->row(row) += dz;
    }
  }
  return loss * inv_m;
}

void note_batch_usage(Codebook& cb, const std::vector<std::int64_t>& batch_histogram) {
  if (batch_histogram.size() != cb.stale.size())
    throw InvalidArgument("usage histogram length does not match codebook size");
  for (std::size_t i = 0; i < cb.stale.size(); ++i) {
    if (batch_histogram[i] > 0)
      cb.stale[i] = 0;
    else
      cb.stale[i] += 1;
  }
}

int reseed_dead(Codebook& cb, const Mat& recent, int threshold, Rng& rng) {
  if (recent.rows() < 1) return 0;
  int reseeded = 0;
  for (int i = 0; i < cb.k(); ++i) {
    if (cb.stale[static_cast<std::size_t>(i)] >= threshold) {
      const auto pick = rng.uniform_int(recent.rows());
      cb.prototypes.row(i) = recent.row(pick);
      cb.counts[static_cast<std::size_t>(i)] = 0;
      cb.stale[static_cast<std::size_t>(i)] = 0;
      ++reseeded;
    }
  }
  return reseeded;
}

}  // namespace wap
