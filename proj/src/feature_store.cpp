#include "wap/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "feature files are little-endian; big-endian hosts are unsupported");

namespace wap {
namespace {

constexpr char kMagic[4] = {'W', 'A', 'P', 'F'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError(std::string("truncated header: missing ") + what);
  return v;
}

}  // namespace

void write_feature_file(const FrameSequence& seq, const std::filesystem::path& path) {
  if (seq.t() < 1) throw InvalidArgument("write_feature_file: sequence must have T >= 1");
  if (seq.dim() < 1) throw InvalidArgument("write_feature_file: sequence must have D >= 1");
  if (!all_finite(seq.frames)) throw InvalidArgument("write_feature_file: non-finite values in frames");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(seq.dim()));
  write_u32(out, static_cast<std::uint32_t>(seq.t()));
  out.write(reinterpret_cast<const char*>(seq.frames.data()),
            static_cast<std::streamsize>(sizeof(float) * seq.frames.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

FrameSequence read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());

  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad magic in " + path.string());
  }
  const std::uint32_t version = read_u32(in, "version");
  if (version != kVersion) {
    throw IoError("version mismatch in " + path.string() + ": got " + std::to_string(version));
  }
  const std::uint32_t d = read_u32(in, "D");
  const std::uint32_t t = read_u32(in, "T");
  if (t == 0) throw IoError("T = 0 in " + path.string());
  if (d == 0) throw IoError("D = 0 in " + path.string());

  FrameSequence seq;
  seq.frames.resize(t, d);
  const std::streamsize payload = static_cast<std::streamsize>(sizeof(float)) * t * d;
  in.read(reinterpret_cast<char*>(seq.frames.data()), payload);
  if (in.gcount() != payload) {
    throw IoError("truncated payload in " + path.string() + ": expected " +
                  std::to_string(payload) + " bytes, got " + std::to_string(in.gcount()));
  }
  return seq;
}

void Manifest::validate() const {
  if (class_names.empty()) throw InvalidArgument("manifest: no class names");
  std::set<std::string> seen_names(class_names.begin(), class_names.end());
  if (seen_names.size() != class_names.size()) {
    throw InvalidArgument("manifest: duplicate class names");
  }
  std::set<std::string> paths;
  for (const auto& r : records) {
    if (!paths.insert(r.path).second) {
      throw InvalidArgument("manifest: duplicate path " + r.path);
    }
    if (r.label < 0 || r.label >= num_classes()) {
      throw InvalidArgument("manifest: label out of range for " + r.path);
    }
  }
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  m.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "#classes: ";
  for (std::size_t i = 0; i < m.class_names.size(); ++i) {
    if (i) out << ',';
    out << m.class_names[i];
  }
  out << '\n';
  for (const auto& h : m.extra_headers) out << '#' << h << '\n';
  for (const auto& r : m.records) {
    out << r.path << '\t' << r.label << '\t' << r.session_id << '\t' << r.speaker_id << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  Manifest m;
  std::string line;
  bool have_classes = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string classes_prefix = "#classes: ";
      if (line.rfind(classes_prefix, 0) == 0) {
        if (have_classes) throw IoError("manifest: repeated #classes header");
        std::stringstream ss(line.substr(classes_prefix.size()));
        std::string name;
        while (std::getline(ss, name, ',')) m.class_names.push_back(name);
        have_classes = true;
      } else {
        m.extra_headers.push_back(line.substr(1));
      }
      continue;
    }
    std::stringstream ss(line);
    ManifestRecord r;
    std::string label_s, session_s;
    if (!std::getline(ss, r.path, '\t') || !std::getline(ss, label_s, '\t') ||
        !std::getline(ss, session_s, '\t') || !std::getline(ss, r.speaker_id)) {
      throw IoError("manifest: malformed record at line " + std::to_string(lineno));
    }
    try {
      r.label = std::stoi(label_s);
      r.session_id = std::stoi(session_s);
    } catch (const std::exception&) {
      throw IoError("manifest: non-numeric field at line " + std::to_string(lineno));
    }
    m.records.push_back(std::move(r));
  }
  if (!have_classes) throw IoError("manifest: missing #classes header");
  m.validate();
  return m;
}

FoldPlan make_folds(const Manifest& m) {
  std::map<int, std::vector<int>> by_session;
  for (int i = 0; i < static_cast<int>(m.records.size()); ++i) {
    by_session[m.records[i].session_id].push_back(i);
  }
  if (by_session.size() < 2) {
    throw InvalidArgument("make_folds: need at least 2 distinct sessions, got " +
                          std::to_string(by_session.size()));
  }
  FoldPlan plan;
  for (const auto& [session, val_indices] : by_session) {
    Fold fold;
    fold.validation = val_indices;
    for (const auto& [other, indices] : by_session) {
      if (other == session) continue;
      fold.train.insert(fold.train.end(), indices.begin(), indices.end());
    }
    std::sort(fold.train.begin(), fold.train.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

FrameSequence load_record(const Manifest& m, const std::filesystem::path& manifest_dir, int index) {
  if (index < 0 || index >= static_cast<int>(m.records.size())) {
    throw InvalidArgument("load_record: index out of range");
  }
  const ManifestRecord& r = m.records[index];
  FrameSequence seq = read_feature_file(manifest_dir / r.path);
  seq.utterance_id = r.path;
  seq.label = r.label;
  seq.session_id = r.session_id;
  seq.speaker_id = r.speaker_id;
  return seq;
}

int Dataset::max_t() const {
  int t = 0;
  for (const auto& s : sequences) t = std::max(t, s.t());
  return t;
}

int Dataset::dim() const {
  if (sequences.empty()) throw InvalidArgument("empty dataset");
  return sequences.front().dim();
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  ds.sequences.reserve(ds.manifest.records.size());
  for (int i = 0; i < static_cast<int>(ds.manifest.records.size()); ++i) {
    ds.sequences.push_back(load_record(ds.manifest, dir, i));
  }
  for (const auto& s : ds.sequences) {
    if (s.dim() != ds.sequences.front().dim())
      throw IoError("inconsistent frame width in dataset: " + s.utterance_id + " has " +
                    std::to_string(s.dim()) + ", expected " +
                    std::to_string(ds.sequences.front().dim()));
  }
  return ds;
}

}  // namespace wap
