#pragma once

// Binary checkpoint: little-endian magic "SVIS", format version u32, then
// length-prefixed named tensors (name bytes, rank u32, dims u64 each, raw
// f64 data).

#include <cstring>
#include <fstream>
#include <string>

#include "svis/params.hpp"

namespace svis {

inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("SVIS", 4);
  auto write_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto write_u64 = [&](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  write_u32(kCheckpointVersion);
  write_u32((uint32_t)params.size());
  for (const auto& [name, t] : params.all()) {
    write_u32((uint32_t)name.size());
    f.write(name.data(), (std::streamsize)name.size());
    write_u32((uint32_t)t.rank());
    for (int i = 0; i < t.rank(); ++i) write_u64((uint64_t)t.dim(i));
    f.write(reinterpret_cast<const char*>(t.data().data()),
            (std::streamsize)(t.numel() * sizeof(double)));
  }
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

// Loads values into an existing (already shaped) parameter store. A shape
// or name mismatch means the checkpoint was written for a different
// configuration.
inline void load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SVIS", 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  auto read_u32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto read_u64 = [&]() {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  const uint32_t version = read_u32();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = read_u32();
  if (count != params.size())
    throw ContractError("checkpoint has " + std::to_string(count) +
                        " tensors, model expects " + std::to_string(params.size()));
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32();
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rank = read_u32();
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = (int)read_u64();
    if (!params.has(name))
      throw ContractError("checkpoint tensor not in model: " + name);
    Tensor t = params.get(name);
    if (t.shape() != shape)
      throw ContractError("checkpoint shape mismatch for " + name + ": file " +
                          shape_str(shape) + " vs model " + shape_str(t.shape()));
    f.read(reinterpret_cast<char*>(t.mutable_data().data()),
           (std::streamsize)(t.numel() * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint: " + path);
  }
}

}  // namespace svis
