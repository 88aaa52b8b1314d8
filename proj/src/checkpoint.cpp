#include "wap/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace wap {

namespace {

constexpr char kMagic[4] = {'W', 'A', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

bool take_u32(std::istream& in, std::uint32_t& v) {
  in.read(reinterpret_cast<char*>(&v), 4);
  return in.gcount() == 4;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Mat& value) {
  tensors[name] = value.cast<float>();
}

void Checkpoint::put(const std::string& name, const MatF& value) { tensors[name] = value; }

void Checkpoint::put_scalar(const std::string& name, double value) {
  MatF m(1, 1);
  m(0, 0) = static_cast<float>(value);
  tensors[name] = m;
}

const MatF& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint is missing tensor " + name);
  return it->second;
}

Mat Checkpoint::get_mat(const std::string& name) const { return get(name).cast<double>(); }

double Checkpoint::get_scalar(const std::string& name) const {
  const MatF& m = get(name);
  if (m.size() != 1) throw IoError("checkpoint tensor " + name + " is not a scalar");
  return static_cast<double>(m(0, 0));
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  // std::map iterates in lexicographic key order, which fixes the layout.
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.empty()) throw InvalidArgument("checkpoint tensor names must be nonempty");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
    put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(tensor.size())));
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in " + path);
  std::uint32_t version = 0;
  if (!take_u32(in, version)) throw IoError("truncated header in " + path);
  if (version != kVersion)
    throw IoError("version mismatch in " + path + ": expected " + std::to_string(kVersion) +
                  ", got " + std::to_string(version));

  Checkpoint ckpt;
  for (;;) {
    std::uint32_t name_len = 0;
    if (!take_u32(in, name_len)) break;  // clean end of file
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (in.gcount() != static_cast<std::streamsize>(name_len))
      throw IoError("truncated tensor name in " + path);
    std::uint32_t rank = 0;
    if (!take_u32(in, rank)) throw IoError("truncated tensor header in " + path);
    if (rank < 1 || rank > 2)
      throw IoError("unsupported tensor rank " + std::to_string(rank) + " in " + path);
    std::uint32_t rows = 1, cols = 1;
    if (rank == 1) {
      if (!take_u32(in, cols)) throw IoError("truncated tensor header in " + path);
    } else {
      if (!take_u32(in, rows) || !take_u32(in, cols))
        throw IoError("truncated tensor header in " + path);
    }
    if (ckpt.tensors.count(name)) throw IoError("duplicate tensor " + name + " in " + path);
    MatF tensor(rows, cols);
    const auto bytes = static_cast<std::streamsize>(sizeof(float) * rows * cols);
    in.read(reinterpret_cast<char*>(tensor.data()), bytes);
    if (in.gcount() != bytes)
      throw IoError("truncated payload for tensor " + name + " in " + path);
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

}  // namespace wap
