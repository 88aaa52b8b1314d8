#pragma once

#include "wap/common.hpp"

#include <map>
#include <string>

namespace wap {

// Named float32 tensor container. Iteration (and the on-disk layout) is
// ordered by tensor name.
struct Checkpoint {
  std::map<std::string, MatF> tensors;

  void put(const std::string& name, const Mat& value);
  void put(const std::string& name, const MatF& value);
  void put_scalar(const std::string& name, double value);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const MatF& get(const std::string& name) const;
  Mat get_mat(const std::string& name) const;
  double get_scalar(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace wap
