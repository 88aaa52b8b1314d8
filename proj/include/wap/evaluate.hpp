#pragma once

#include "wap/sap.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace wap {

struct FoldScore {
  double ua = 0, wa = 0, f1 = 0;
  int best_epoch = -1;
  ConfusionMatrix cm;
};

struct CvReport {
  std::vector<FoldScore> folds;
  double mean_ua = 0, mean_wa = 0, mean_f1 = 0;
  // Same metrics over the fold-summed confusion matrix; published numbers are
  // sometimes one interpretation and sometimes the other, so both are kept.
  ConfusionMatrix pooled;
  double pooled_ua = 0, pooled_wa = 0, pooled_f1 = 0;
  std::vector<std::string> class_names;
};

// Fine-tunes and scores every fold of the plan, sequentially, fold seeds
// derived from cfg.seed. Per-fold epoch logs land in log_dir when given.
CvReport run_cv(const Dataset& data, const WapModel& pretrained, const FoldPlan& plan,
                const FinetuneConfig& cfg, std::ostream* progress = nullptr,
                const std::filesystem::path* log_dir = nullptr);

std::string format_report(const CvReport& report);
void write_report(const CvReport& report, const std::filesystem::path& path);

// Utterance embeddings for every record: an N x 2DH feature file plus a
// per-row label table, for external projection tools.
void export_embeddings(const WapModel& adapter, const SapModel& head, const Dataset& data,
                       const std::filesystem::path& out_dir);

// Accuracy of a nearest-class-centroid classifier over per-utterance mean
// frames: centroids from `train`, scored on `eval_indices`. The reference
// baseline the learned pipeline is compared against.
double nearest_centroid_accuracy(const Dataset& data, const std::vector<int>& train,
                                 const std::vector<int>& eval_indices);

}  // namespace wap
