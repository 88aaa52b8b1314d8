#include "wap/evaluate.hpp"

#include <fstream>
#include <limits>
#include <sstream>

namespace wap {

CvReport run_cv(const Dataset& data, const WapModel& pretrained, const FoldPlan& plan,
                const FinetuneConfig& cfg, std::ostream* progress,
                const std::filesystem::path* log_dir) {
  if (plan.folds.empty()) throw InvalidArgument("empty fold plan");
  CvReport report;
  report.class_names = data.manifest.class_names;

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    FinetuneConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + f;
    std::filesystem::path log_path;
    const std::filesystem::path* log_ptr = nullptr;
    if (log_dir) {
      log_path = *log_dir / ("finetune_fold" + std::to_string(f) + ".tsv");
      log_ptr = &log_path;
    }
    if (progress) (*progress) << "fold " << f << "\n";
    FinetuneResult res =
        finetune(pretrained, data, plan.folds[f], fold_cfg, progress, log_ptr);
    FoldScore score;
    score.best_epoch = res.best_epoch;
    score.cm = res.best_confusion;
    score.ua = ua(score.cm);
    score.wa = wa(score.cm);
    score.f1 = macro_f1(score.cm);
    report.folds.push_back(std::move(score));
  }

  const auto n = static_cast<double>(report.folds.size());
  report.pooled.counts.setZero(report.folds.front().cm.classes(),
                               report.folds.front().cm.classes());
  for (const FoldScore& s : report.folds) {
    report.mean_ua += s.ua / n;
    report.mean_wa += s.wa / n;
    report.mean_f1 += s.f1 / n;
    report.pooled.counts += s.cm.counts;
  }
  report.pooled_ua = ua(report.pooled);
  report.pooled_wa = wa(report.pooled);
  report.pooled_f1 = macro_f1(report.pooled);
  return report;
}

namespace {

void append_grid(std::ostringstream& out, const ConfusionMatrix& cm,
                 const std::vector<std::string>& names, const std::string& title) {
  out << "# confusion " << title << " (rows true, columns predicted)\n";
  out << "#";
  for (int c = 0; c < cm.classes(); ++c)
    out << "\t" << (c < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                       : std::to_string(c));
  out << "\n";
  for (int r = 0; r < cm.classes(); ++r) {
    out << (r < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(r)]
                                               : std::to_string(r));
    for (int c = 0; c < cm.classes(); ++c) out << "\t" << cm.counts(r, c);
    out << "\n";
  }
}

}  // namespace

std::string format_report(const CvReport& report) {
  std::ostringstream out;
  out << "#fold\tUA\tWA\tF1\n";
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    const FoldScore& s = report.folds[f];
    out << f << "\t" << fmt_fixed(s.ua) << "\t" << fmt_fixed(s.wa) << "\t" << fmt_fixed(s.f1)
        << "\n";
  }
  out << "mean\t" << fmt_fixed(report.mean_ua) << "\t" << fmt_fixed(report.mean_wa) << "\t"
      << fmt_fixed(report.mean_f1) << "\n";
  out << "pooled\t" << fmt_fixed(report.pooled_ua) << "\t" << fmt_fixed(report.pooled_wa) << "\t"
      << fmt_fixed(report.pooled_f1) << "\n";
  for (std::size_t f = 0; f < report.folds.size(); ++f)
    append_grid(out, report.folds[f].cm, report.class_names, "fold " + std::to_string(f));
  append_grid(out, report.pooled, report.class_names, "pooled");
  return out.str();
}

void write_report(const CvReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_report(report);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

double nearest_centroid_accuracy(const Dataset& data, const std::vector<int>& train,
                                 const std::vector<int>& eval_indices) {
  if (train.empty() || eval_indices.empty())
    throw InvalidArgument("nearest-centroid baseline needs non-empty train and eval sets");
  const int num_classes = data.manifest.num_classes();
  Mat centroids = Mat::Zero(num_classes, data.dim());
  std::vector<int> support(static_cast<std::size_t>(num_classes), 0);
  for (int idx : train) {
    const FrameSequence& seq = data.sequences[static_cast<std::size_t>(idx)];
    if (!seq.label) throw InvalidArgument("unlabeled record in baseline train set");
    centroids.row(*seq.label) += seq.frames.colwise().mean().cast<double>();
    support[static_cast<std::size_t>(*seq.label)]++;
  }
  for (int c = 0; c < num_classes; ++c)
    if (support[static_cast<std::size_t>(c)] > 0)
      centroids.row(c) /= static_cast<double>(support[static_cast<std::size_t>(c)]);

  int hits = 0;
  for (int idx : eval_indices) {
    const FrameSequence& seq = data.sequences[static_cast<std::size_t>(idx)];
    if (!seq.label) throw InvalidArgument("unlabeled record in baseline eval set");
    const Mat mean = seq.frames.colwise().mean().cast<double>();
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int c = 0; c < num_classes; ++c) {
      if (support[static_cast<std::size_t>(c)] == 0) continue;
      const double dist = (centroids.row(c) - mean).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (best == *seq.label) hits++;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_indices.size());
}

void export_embeddings(const WapModel& adapter, const SapModel& head, const Dataset& data,
                       const std::filesystem::path& out_dir) {
  if (data.sequences.empty()) throw InvalidArgument("empty dataset");
  std::filesystem::create_directories(out_dir);

  const auto n = static_cast<Eigen::Index>(data.sequences.size());
  const Eigen::Index width = 2 * static_cast<Eigen::Index>(head.d_model) * head.cfg.heads;
  MatF table(n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Mat seq = data.sequences[static_cast<std::size_t>(i)].frames.cast<double>();
    WapForwardResult res = adapter.forward(seq, {}, nullptr);
    Mat embed = head.utterance_embed(res.output, nullptr);
    table.row(i) = embed.row(0).cast<float>();
  }

  FrameSequence out_seq;
  out_seq.frames = std::move(table);
  write_feature_file(out_seq, out_dir / "embeddings.wapf");

  std::ofstream labels(out_dir / "embeddings_labels.tsv", std::ios::trunc);
  if (!labels) throw IoError("cannot open embeddings_labels.tsv for writing");
  std::string class_line = "#classes: ";
  for (std::size_t c = 0; c < data.manifest.class_names.size(); ++c) {
    if (c) class_line += ",";
    class_line += data.manifest.class_names[c];
  }
  labels << class_line << "\n";
  labels << "#row\tutterance\tlabel\tsession\tspeaker\n";
  for (std::size_t i = 0; i < data.manifest.records.size(); ++i) {
    const ManifestRecord& r = data.manifest.records[i];
    labels << i << "\t" << r.path << "\t" << r.label << "\t" << r.session_id << "\t"
           << r.speaker_id << "\n";
  }
  labels.flush();
  if (!labels) throw IoError("write failed for embeddings_labels.tsv");
}

}  // namespace wap
