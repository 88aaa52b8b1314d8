#include "wap/metrics.hpp"

namespace wap {

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int num_classes) {
  if (truth.size() != predicted.size())
    throw InvalidArgument("confusion: label list lengths differ");
  if (num_classes < 1) throw InvalidArgument("confusion: need at least one class");
  ConfusionMatrix cm;
  cm.counts.setZero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw InvalidArgument("confusion: label out of range at position " + std::to_string(i));
    cm.counts(t, p) += 1;
  }
  return cm;
}

double ua(const ConfusionMatrix& cm, std::vector<int>* empty_classes) {
  if (cm.total() == 0) throw InvalidArgument("metrics on an empty confusion matrix");
  if (empty_classes) empty_classes->clear();
  double sum = 0.0;
  for (int c = 0; c < cm.classes(); ++c) {
    const auto support = cm.counts.row(c).sum();
    if (support == 0) {
      if (empty_classes) empty_classes->push_back(c);
      continue;  // recall term 0
    }
    sum += static_cast<double>(cm.counts(c, c)) / static_cast<double>(support);
  }
  return sum / static_cast<double>(cm.classes());
}

double wa(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidArgument("metrics on an empty confusion matrix");
  return static_cast<double>(cm.counts.trace()) / static_cast<double>(cm.total());
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidArgument("metrics on an empty confusion matrix");
  double sum = 0.0;
  for (int c = 0; c < cm.classes(); ++c) {
    const auto tp = cm.counts(c, c);
    const auto support = cm.counts.row(c).sum();
    const auto predicted = cm.counts.col(c).sum();
    const double recall = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    const double precision =
        predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double denom = precision + recall;
    sum += denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
  }
  return sum / static_cast<double>(cm.classes());
}

}  // namespace wap
