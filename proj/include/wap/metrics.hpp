#pragma once

#include "wap/common.hpp"

#include <cstdint>
#include <vector>

namespace wap {

struct ConfusionMatrix {
  // rows = true class, columns = predicted class
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int classes() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int num_classes);

// Unweighted accuracy: mean per-class recall. Classes without true samples
// contribute recall 0; their indices are reported through empty_classes when
// given.
double ua(const ConfusionMatrix& cm, std::vector<int>* empty_classes = nullptr);
// Weighted accuracy: plain accuracy, trace / total.
double wa(const ConfusionMatrix& cm);
// Macro F1 with the 0/0 -> 0 convention per class.
double macro_f1(const ConfusionMatrix& cm);

}  // namespace wap
