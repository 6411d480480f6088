#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowlab/container.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/rng.hpp"

using namespace flowlab;

TEST_CASE("container: round trip of arrays and metadata") {
  Rng rng(1);
  Container c;
  c.meta = {{"kind", "test"}, {"note", "hello"}, {"value", 3.5}};
  c.f64["a/matrix"] = rng.normal_matrix(4, 3);
  c.f64["b"] = rng.normal_matrix(1, 1);
  c.i64["kinds"] = {0, 1, 1, 1};

  const auto path = std::filesystem::temp_directory_path() / "flowlab_container_test.flab";
  c.write(path);
  const Container r = Container::read(path);
  CHECK(r.meta["kind"] == "test");
  CHECK(r.meta["value"] == 3.5);
  CHECK(r.mat("a/matrix") == c.f64["a/matrix"]);
  CHECK(r.mat("b") == c.f64["b"]);
  CHECK(r.ints("kinds") == c.i64["kinds"]);
  CHECK(r.has_mat("a/matrix"));
  CHECK(!r.has_mat("missing"));
  CHECK_THROWS_AS(r.mat("missing"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("container: identical content writes identical bytes") {
  Rng rng(2);
  Container c;
  c.meta = {{"kind", "test"}};
  c.f64["x"] = rng.normal_matrix(5, 5);
  const auto p1 = std::filesystem::temp_directory_path() / "flowlab_c1.flab";
  const auto p2 = std::filesystem::temp_directory_path() / "flowlab_c2.flab";
  c.write(p1);
  c.write(p2);
  CHECK(file_hash_hex(p1) == file_hash_hex(p2));

  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("container: rejects foreign files with a clear message") {
  const auto path = std::filesystem::temp_directory_path() / "flowlab_notacontainer.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "something else entirely";
  }
  CHECK_THROWS_AS(Container::read(path), DataError);
  std::filesystem::remove(path);
}
