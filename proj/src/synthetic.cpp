#include "wap/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace wap {
namespace {

constexpr int kSmoothWindow = 5;
constexpr int kSpeakersPerSession = 2;

Mat draw_centroids(const SynthSpec& spec, Rng& rng) {
  // Scale chosen so typical pairwise distance is about 1.5x the requested
  // minimum; rejection below enforces the hard bound.
  const double scale = 1.5 * spec.separation / std::sqrt(2.0 * spec.dim);
  Mat centroids(spec.num_classes, spec.dim);
  for (int c = 0; c < spec.num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      RowVec candidate(spec.dim);
      for (int d = 0; d < spec.dim; ++d) candidate(d) = scale * rng.normal();
      placed = true;
      for (int prev = 0; prev < c; ++prev) {
        if ((centroids.row(prev) - candidate).norm() < spec.separation) {
          placed = false;
          break;
        }
      }
      if (placed) centroids.row(c) = candidate;
    }
    if (!placed) {
      throw InvalidArgument(
          "generate_synthetic: could not place class centroids at the requested "
          "separation; lower it or raise the dimension");
    }
  }
  return centroids;
}

}  // namespace

void SynthSpec::validate() const {
  if (num_classes < 1) throw InvalidArgument("synth spec: num_classes must be >= 1");
  if (utterances_per_class.empty()) throw InvalidArgument("synth spec: utterances_per_class empty");
  if (utterances_per_class.size() != 1 &&
      static_cast<int>(utterances_per_class.size()) != num_classes) {
    throw InvalidArgument("synth spec: utterances_per_class must have 1 or num_classes entries");
  }
  for (int n : utterances_per_class) {
    if (n < 1) throw InvalidArgument("synth spec: utterances per class must be >= 1");
  }
  if (dim < 1) throw InvalidArgument("synth spec: dim must be >= 1");
  if (t_min < 4) throw InvalidArgument("synth spec: t_min must be >= 4");
  if (t_max < t_min) throw InvalidArgument("synth spec: t_max must be >= t_min");
  if (!(separation > 0)) throw InvalidArgument("synth spec: separation must be > 0");
  if (!(noise > 0)) throw InvalidArgument("synth spec: noise must be > 0");
  if (num_sessions < 1) throw InvalidArgument("synth spec: num_sessions must be >= 1");
}

int SynthSpec::count_for_class(int c) const {
  return utterances_per_class.size() == 1 ? utterances_per_class[0] : utterances_per_class[c];
}

int SynthSpec::total_utterances() const {
  int total = 0;
  for (int c = 0; c < num_classes; ++c) total += count_for_class(c);
  return total;
}

Mat synthetic_centroids(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  return draw_centroids(spec, rng);
}

Manifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);

  Rng rng(spec.seed);
  const Mat centroids = draw_centroids(spec, rng);

  Manifest manifest;
  for (int c = 0; c < spec.num_classes; ++c) {
    manifest.class_names.push_back("class" + std::to_string(c));
  }

  for (int c = 0; c < spec.num_classes; ++c) {
    const int count = spec.count_for_class(c);
    for (int j = 0; j < count; ++j) {
      const int t = spec.t_min + static_cast<int>(rng.uniform_int(spec.t_max - spec.t_min + 1));

      // i.i.d. noise smoothed with a uniform window along time so neighboring
      // frames are correlated and masked frames are predictable from context.
      Mat raw(t + kSmoothWindow - 1, spec.dim);
      for (int i = 0; i < raw.rows(); ++i) {
        for (int d = 0; d < spec.dim; ++d) raw(i, d) = spec.noise * rng.normal();
      }
      FrameSequence seq;
      seq.frames.resize(t, spec.dim);
      for (int i = 0; i < t; ++i) {
        RowVec smoothed = raw.middleRows(i, kSmoothWindow).colwise().mean();
        seq.frames.row(i) = (centroids.row(c) + smoothed).cast<float>();
      }

      char name[32];
      std::snprintf(name, sizeof(name), "c%d_u%04d.wapf", c, j);
      ManifestRecord record;
      record.path = name;
      record.label = c;
      record.session_id = j % spec.num_sessions;
      record.speaker_id = "s" + std::to_string(record.session_id) + "_p" +
                          std::to_string((j / spec.num_sessions) % kSpeakersPerSession);
      write_feature_file(seq, out_dir / record.path);
      manifest.records.push_back(std::move(record));
    }
  }

  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace wap
