#include <cstring>
#include <fstream>

#include "csdenoise/checkpoint.hpp"

namespace csd {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 0;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is, const char* what, size_t& off) {
  uint32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw ParseError(std::string("checkpoint truncated at ") + what, off);
  off += 4;
  return v;
}

uint64_t get_u64(std::istream& is, const char* what, size_t& off) {
  uint64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw ParseError(std::string("checkpoint truncated at ") + what, off);
  off += 8;
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValueError("checkpoint: cannot open '" + path + "' for writing");
  f.write(kMagic, 8);
  put_u32(f, kVersion);
  put_u64(f, ckpt.config_text.size());
  f.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  put_u64(f, static_cast<uint64_t>(ckpt.step));
  put_u32(f, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    f.put(static_cast<char>(kDtypeF64));
    put_u32(f, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) put_u64(f, static_cast<uint64_t>(d));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!f) throw ValueError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("checkpoint: cannot open '" + path + "'");
  size_t off = 0;
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a checkpoint file", 0);
  off += 8;
  const uint32_t version = get_u32(f, "version", off);
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), off - 4);
  Checkpoint ckpt;
  const uint64_t cfg_len = get_u64(f, "config length", off);
  ckpt.config_text.resize(cfg_len);
  if (cfg_len && !f.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len)))
    throw ParseError("checkpoint truncated in config text", off);
  off += cfg_len;
  ckpt.step = static_cast<int64_t>(get_u64(f, "step", off));
  const uint32_t count = get_u32(f, "tensor count", off);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(f, "tensor name length", off);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) throw ParseError("checkpoint truncated in name", off);
    off += name_len;
    const int dtype = f.get();
    if (dtype != kDtypeF64)
      throw ParseError("unsupported dtype tag " + std::to_string(dtype) + " for '" + name + "'",
                       off);
    off += 1;
    const uint32_t ndim = get_u32(f, "rank", off);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<int64_t>(get_u64(f, "extent", off));
    RTensor t(shape);
    if (!f.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double))))
      throw ParseError("checkpoint truncated in tensor '" + name + "'", off);
    off += t.data.size() * sizeof(double);
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace csd
