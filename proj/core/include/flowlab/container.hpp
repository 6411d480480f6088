#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowlab/autodiff.hpp"

namespace flowlab {

// Self-describing binary container: 8-byte magic, little-endian u64 header
// length, JSON header (meta + array directory), then packed array payloads.
// Arrays are float64 row-major or int64. Used for corpora, checkpoints and
// sample archives; `meta["kind"]` names the payload type.
struct Container {
  static constexpr char kMagic[9] = "FLABC001";
  static constexpr int kFormatVersion = 1;

  nlohmann::json meta;
  std::map<std::string, Mat> f64;
  std::map<std::string, std::vector<std::int64_t>> i64;

  void write(const std::filesystem::path& path) const;
  static Container read(const std::filesystem::path& path);

  const Mat& mat(const std::string& name) const;
  const std::vector<std::int64_t>& ints(const std::string& name) const;
  bool has_mat(const std::string& name) const { return f64.count(name) > 0; }
  bool has_ints(const std::string& name) const { return i64.count(name) > 0; }
};

// FNV-1a over a file's bytes; used for checkpoint provenance in archives.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace flowlab
