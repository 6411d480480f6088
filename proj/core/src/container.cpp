#include "flowlab/container.hpp"

#include <cstring>
#include <fstream>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void Container::write(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "flowlab-container";
  header["version"] = kFormatVersion;
  header["meta"] = meta;

  std::uint64_t offset = 0;
  nlohmann::json dir_f64 = nlohmann::json::object();
  for (const auto& [name, m] : f64) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(m.size()) * sizeof(double);
    dir_f64[name] = {{"shape", {m.rows(), m.cols()}}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  nlohmann::json dir_i64 = nlohmann::json::object();
  for (const auto& [name, v] : i64) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(v.size()) * sizeof(std::int64_t);
    dir_i64[name] = {{"len", v.size()}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  header["f64"] = dir_f64;
  header["i64"] = dir_i64;

  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(kMagic, 8);
  put_u64(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, m] : f64) {
    // Row-major on disk regardless of Eigen's in-memory layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double d = m(r, c);
        os.write(reinterpret_cast<const char*>(&d), sizeof(double));
      }
  }
  for (const auto& [name, v] : i64)
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(std::int64_t)));
  if (!os) throw DataError("write failed: " + path.string());
}

Container Container::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a flowlab container (bad magic): " + path.string());
  const std::uint64_t header_len = get_u64(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json header = nlohmann::json::parse(header_str, nullptr, false);
  if (header.is_discarded()) throw DataError("corrupt container header: " + path.string());
  const int version = header.value("version", -1);
  if (version != kFormatVersion)
    throw DataError("container version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kFormatVersion) + "); re-export with a matching tool version");

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  const std::streampos payload_start = is.tellg();
  for (auto& [name, entry] : header["f64"].items()) {
    const auto rows = entry["shape"][0].get<Eigen::Index>();
    const auto cols = entry["shape"][1].get<Eigen::Index>();
    const auto offset = entry["offset"].get<std::uint64_t>();
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index col = 0; col < cols; ++col) {
        double d;
        is.read(reinterpret_cast<char*>(&d), sizeof(double));
        m(r, col) = d;
      }
    c.f64.emplace(name, std::move(m));
  }
  for (auto& [name, entry] : header["i64"].items()) {
    const auto len = entry["len"].get<std::size_t>();
    const auto offset = entry["offset"].get<std::uint64_t>();
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    std::vector<std::int64_t> v(len);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len * sizeof(std::int64_t)));
    c.i64.emplace(name, std::move(v));
  }
  if (!is) throw DataError("truncated container: " + path.string());
  return c;
}

const Mat& Container::mat(const std::string& name) const {
  auto it = f64.find(name);
  if (it == f64.end()) throw DataError("container missing array: " + name);
  return it->second;
}

const std::vector<std::int64_t>& Container::ints(const std::string& name) const {
  auto it = i64.find(name);
  if (it == i64.end()) throw DataError("container missing int array: " + name);
  return it->second;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for hashing: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (is.eof()) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace flowlab
