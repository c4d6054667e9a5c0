#include "spdbci/checkpoint.hpp"

#include "binary_io.hpp"
#include "spdbci/error.hpp"

#include <fstream>

namespace spdbci {

namespace {
constexpr char kMagic[4] = {'S', 'B', 'C', 'K'};
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.value;
  }
  fail(ErrorKind::Format, "checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot open " + path.string() + " for writing");
  io::Writer w(out);
  w.bytes(kMagic, 4);
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(2);
    w.u64(static_cast<std::uint64_t>(t.value.rows()));
    w.u64(static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) w.f64(t.value(r, c));
    }
  }
  out.flush();
  if (!w.ok()) fail(ErrorKind::Data, "write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "cannot open checkpoint " + path.string());
  io::Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::Format, path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    fail(ErrorKind::Format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = r.str("metadata");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str("tensor name", 4096);
    const std::uint32_t ndim = r.u32("tensor rank");
    if (ndim != 2) fail(ErrorKind::Format, path.string() + ": tensor '" + t.name + "' has rank " + std::to_string(ndim));
    const std::uint64_t rows = r.u64("tensor shape");
    const std::uint64_t cols = r.u64("tensor shape");
    if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (1ull << 30)) {
      fail(ErrorKind::Format, path.string() + ": implausible shape for tensor '" + t.name + "'");
    }
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = r.f64("tensor values");
    }
    ckpt.tensors.push_back(std::move(t));
  }
  r.expect_end();
  return ckpt;
}

}  // namespace spdbci
