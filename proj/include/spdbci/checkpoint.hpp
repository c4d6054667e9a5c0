#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "SBCK"                       4-byte magic
//   u32 version                  currently 1
//   u32 n, n bytes               metadata, UTF-8 JSON
//   u32 count                    number of tensors
//   per tensor:
//     u32 n, n bytes             name
//     u32 ndim                   always 2 (rows, cols)
//     u64 dims[ndim]
//     f64 values[prod(dims)]     row-major

#include "spdbci/signal.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace spdbci {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string metadata;
  std::vector<NamedTensor> tensors;

  const Matrix& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace spdbci
