#pragma once

#include "wap/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wap {

// One utterance worth of frame-level embeddings plus dataset metadata.
struct FrameSequence {
  MatF frames;  // T x D, float32
  std::string utterance_id;
  std::optional<int> label;
  int session_id = 0;
  std::string speaker_id;

  int t() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

// Feature file container, little-endian:
//   bytes 0-3   magic "WAPF"
//   bytes 4-7   u32 version (currently 1)
//   bytes 8-11  u32 D
//   bytes 12-15 u32 T
//   then T*D float32 values, frame-major.
void write_feature_file(const FrameSequence& seq, const std::filesystem::path& path);
FrameSequence read_feature_file(const std::filesystem::path& path);

struct ManifestRecord {
  std::string path;  // relative to the manifest file
  int label = 0;
  int session_id = 0;
  std::string speaker_id;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  // Additional "#key: value" header lines, preserved verbatim (e.g. a note on
  // which encoder layer produced the features).
  std::vector<std::string> extra_headers;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;  // throws InvalidArgument on any broken invariant
};

// Text format: one "#classes: a,b,c" header line, optional further "#" lines,
// then one record per line as path<TAB>label<TAB>session<TAB>speaker.
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct Fold {
  std::vector<int> train;       // record indices
  std::vector<int> validation;  // record indices
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// One fold per session, ordered by ascending session id; fold i validates on
// session i and trains on all others. Requires at least two sessions.
FoldPlan make_folds(const Manifest& m);

// Reads the record's feature file and fills metadata from the manifest.
FrameSequence load_record(const Manifest& m, const std::filesystem::path& manifest_dir, int index);

struct Dataset {
  Manifest manifest;
  std::vector<FrameSequence> sequences;  // same order as manifest.records

  int max_t() const;
  int dim() const;  // frame width; all sequences must agree
};

// Reads the manifest and every feature file it references.
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace wap
