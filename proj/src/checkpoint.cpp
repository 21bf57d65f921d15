// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/checkpoint.h"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace ins {

namespace {

constexpr char kMagic[8] = {'I', 'N', 'S', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
  return v;
}

void write_blob(std::ostream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_blob(std::istream& in, const char* what) {
  const uint64_t len = read_pod<uint64_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kVersion);
  write_blob(out, config_json);
  write_blob(out, meta_json);
  write_pod<uint32_t>(out, static_cast<uint32_t>(arrays.size()));
  for (const Param& a : arrays) {
    write_pod<uint16_t>(out, static_cast<uint16_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_pod<uint8_t>(out, static_cast<uint8_t>(a.shape.size()));
    for (int d : a.shape) write_pod<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not an INS checkpoint: " + path);
  const uint32_t version = read_pod<uint32_t>(in, "version");
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_json = read_blob(in, "config");
  ckpt.meta_json = read_blob(in, "metadata");
  const uint32_t count = read_pod<uint32_t>(in, "array count");
  ckpt.arrays.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Param a;
    const uint16_t name_len = read_pod<uint16_t>(in, "array name");
    a.name.assign(name_len, '\0');
    in.read(a.name.data(), name_len);
    const uint8_t ndim = read_pod<uint8_t>(in, "array rank");
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      const int64_t dim = read_pod<int64_t>(in, "array shape");
      if (dim < 0) throw CheckpointError("negative dimension in checkpoint array " + a.name);
      a.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    a.data.resize(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated checkpoint array " + a.name);
    if (!a.all_finite())
      throw CheckpointError("non-finite values in checkpoint array " + a.name);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void Checkpoint::put_array(const std::string& name, const Param& p) {
  Param a = p;
  a.name = name;
  arrays.push_back(std::move(a));
}

const Param* Checkpoint::find_array(const std::string& name) const {
  for (const Param& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

}  // namespace ins
