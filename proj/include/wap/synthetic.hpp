#pragma once

#include "wap/feature_store.hpp"
#include "wap/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wap {

struct SynthSpec {
  int num_classes = 4;
  // One entry per class; a single entry is broadcast to all classes.
  std::vector<int> utterances_per_class = {50};
  int dim = 64;
  int t_min = 16;
  int t_max = 32;
  double separation = 6.0;  // minimum pairwise distance between class centroids
  double noise = 1.0;       // per-frame noise scale before temporal smoothing
  int num_sessions = 5;
  std::uint64_t seed = 1;

  void validate() const;
  int count_for_class(int c) const;
  int total_utterances() const;
};

// Writes one feature file per utterance plus "manifest.tsv" into out_dir and
// returns the manifest. Output is fully determined by the spec.
Manifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Class centroids as drawn for this spec (row c = centroid of class c).
// Exposed so tests can relate generated data back to its ground truth.
Mat synthetic_centroids(const SynthSpec& spec);

}  // namespace wap
