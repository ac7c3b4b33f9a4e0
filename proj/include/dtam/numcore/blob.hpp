#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dtam/numcore/types.hpp"

namespace dtam {

// FNV-1a, 64 bit. Used for payload and vocabulary fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL);
std::string hex64(std::uint64_t v);

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct TensorRecord {
  std::string name;
  std::variant<Mat<float>, Mat<double>> data;

  DType dtype() const { return data.index() == 0 ? DType::F32 : DType::F64; }
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

// Named tensors plus flat key/value metadata. On disk:
//   <dir>/tensors.bin   per record: u32 name length, UTF-8 name, u8 dtype,
//                       u32 rank (=2), u64 dims..., row-major little-endian payload
//   <dir>/manifest.txt  plain-text index with offsets and FNV-1a hashes
struct TensorBlob {
  static constexpr int kFormatVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;

  template <typename Derived>
  void add(std::string name, const Eigen::MatrixBase<Derived>& m) {
    tensors.push_back(TensorRecord{std::move(name), Mat<typename Derived::Scalar>(m)});
  }
};

void write_blob(const std::filesystem::path& dir, const TensorBlob& blob);

// Throws CorruptionError on truncated payloads, hash or shape mismatches.
TensorBlob read_blob(const std::filesystem::path& dir);

}  // namespace dtam
