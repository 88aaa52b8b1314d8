#include "wap/checkpoint.hpp"

#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "wap/rng.hpp"
#include "test_util.hpp"

using namespace wap;
using testutil::temp_dir;

namespace {

std::string pack_u32(std::uint32_t v) {
  std::string s(4, '\0');
  std::memcpy(s.data(), &v, 4);
  return s;
}

std::string pack_tensor(const std::string& name, std::uint32_t rank, std::uint32_t rows,
                        std::uint32_t cols, const std::vector<float>& values) {
  std::string s = pack_u32(static_cast<std::uint32_t>(name.size())) + name + pack_u32(rank);
  if (rank == 2) s += pack_u32(rows);
  s += pack_u32(cols);
  s.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  return s;
}

const std::string kHeader = std::string("WAPC") + pack_u32(1);

}  // namespace

TEST_CASE("checkpoint round-trips scalars and matrices") {
  auto dir = temp_dir("ckpt_roundtrip");
  Checkpoint ckpt;
  Rng rng(1);
  MatF m(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) m(i, j) = static_cast<float>(rng.normal());
  ckpt.put("wap/patch/w", m);
  ckpt.put_scalar("meta/epochs", 42.0);

  const std::string path = (dir / "model.wapc").string();
  write_checkpoint(path, ckpt);
  Checkpoint back = read_checkpoint(path);
  REQUIRE(back.has("wap/patch/w"));
  CHECK(back.get("wap/patch/w") == m);
  CHECK(back.get_scalar("meta/epochs") == 42.0);
  CHECK_THROWS_WITH_AS(back.get("absent"), doctest::Contains("missing tensor"), IoError);
  CHECK_THROWS_WITH_AS(back.get_scalar("wap/patch/w"), doctest::Contains("not a scalar"), IoError);
}

TEST_CASE("tensors are laid out in lexicographic name order") {
  auto dir = temp_dir("ckpt_order");
  Checkpoint ckpt;
  MatF one(1, 1);
  one(0, 0) = 1.0f;
  // Insert deliberately out of order.
  ckpt.put("zeta", one);
  ckpt.put("alpha", one);
  ckpt.put("mid/key", one);
  const std::string path = (dir / "ordered.wapc").string();
  write_checkpoint(path, ckpt);

  const std::string bytes = testutil::slurp(path);
  const auto pos_alpha = bytes.find("alpha");
  const auto pos_mid = bytes.find("mid/key");
  const auto pos_zeta = bytes.find("zeta");
  REQUIRE(pos_alpha != std::string::npos);
  REQUIRE(pos_mid != std::string::npos);
  REQUIRE(pos_zeta != std::string::npos);
  CHECK(pos_alpha < pos_mid);
  CHECK(pos_mid < pos_zeta);

  // Same contents inserted in another order produce identical bytes.
  Checkpoint ckpt2;
  ckpt2.put("mid/key", one);
  ckpt2.put("alpha", one);
  ckpt2.put("zeta", one);
  const std::string path2 = (dir / "ordered2.wapc").string();
  write_checkpoint(path2, ckpt2);
  CHECK(testutil::same_bytes(path, path2));
}

TEST_CASE("rank-1 tensors read back as single rows") {
  auto dir = temp_dir("ckpt_rank1");
  const std::string path = (dir / "r1.wapc").string();
  testutil::spit(path, kHeader + pack_tensor("vec", 1, 1, 3, {1.0f, 2.0f, 3.0f}));
  Checkpoint ckpt = read_checkpoint(path);
  const MatF& v = ckpt.get("vec");
  REQUIRE(v.rows() == 1);
  REQUIRE(v.cols() == 3);
  CHECK(v(0, 2) == 3.0f);
}

TEST_CASE("malformed checkpoints are rejected with specific errors") {
  auto dir = temp_dir("ckpt_malformed");
  const std::string good = kHeader + pack_tensor("w", 2, 2, 2, {1, 2, 3, 4});

  SUBCASE("bad magic") {
    testutil::spit(dir / "m.wapc", "XXXX" + good.substr(4));
    CHECK_THROWS_WITH_AS(read_checkpoint((dir / "m.wapc").string()),
                         doctest::Contains("bad magic"), IoError);
  }
  SUBCASE("version mismatch") {
    testutil::spit(dir / "v.wapc", std::string("WAPC") + pack_u32(7) + good.substr(8));
    CHECK_THROWS_WITH_AS(read_checkpoint((dir / "v.wapc").string()),
                         doctest::Contains("version mismatch"), IoError);
  }
  SUBCASE("truncated payload") {
    testutil::spit(dir / "t.wapc", good.substr(0, good.size() - 6));
    CHECK_THROWS_WITH_AS(read_checkpoint((dir / "t.wapc").string()),
                         doctest::Contains("truncated payload"), IoError);
  }
  SUBCASE("duplicate tensor name") {
    testutil::spit(dir / "d.wapc",
                   kHeader + pack_tensor("w", 2, 1, 1, {1}) + pack_tensor("w", 2, 1, 1, {2}));
    CHECK_THROWS_WITH_AS(read_checkpoint((dir / "d.wapc").string()),
                         doctest::Contains("duplicate tensor"), IoError);
  }
  SUBCASE("unsupported rank") {
    testutil::spit(dir / "r.wapc", kHeader + pack_tensor("w", 3, 1, 1, {1}));
    CHECK_THROWS_WITH_AS(read_checkpoint((dir / "r.wapc").string()),
                         doctest::Contains("unsupported tensor rank"), IoError);
  }
  SUBCASE("empty file") {
    testutil::spit(dir / "e.wapc", "");
    CHECK_THROWS_AS(read_checkpoint((dir / "e.wapc").string()), IoError);
  }
}

TEST_CASE("reading stops cleanly at end of file with no count field") {
  auto dir = temp_dir("ckpt_eof");
  const std::string path = (dir / "two.wapc").string();
  testutil::spit(path, kHeader + pack_tensor("a", 2, 1, 2, {1, 2}) +
                           pack_tensor("b", 1, 1, 1, {3}));
  Checkpoint ckpt = read_checkpoint(path);
  CHECK(ckpt.tensors.size() == 2);
  CHECK(ckpt.get("a")(0, 1) == 2.0f);
  CHECK(ckpt.get("b")(0, 0) == 3.0f);
}
