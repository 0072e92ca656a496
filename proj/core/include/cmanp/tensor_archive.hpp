#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmanp/tensor.hpp"

namespace cmanp {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat binary container: magic, format version, string metadata, a manifest of
// (name, shape, offset) entries, the payload as little-endian 64-bit floats,
// and a trailing checksum over everything before it.
struct TensorArchive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
  bool has_meta(const std::string& key) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void save_archive(const std::string& path, const TensorArchive& archive);
// Verifies magic, version and checksum; truncation or corruption throws
// ArchiveError with a diagnostic.
TensorArchive load_archive(const std::string& path);

}  // namespace cmanp
