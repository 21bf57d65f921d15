// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/npz.h"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ins/common.h"

namespace ins {

namespace {

uint16_t rd16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t rd32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

NpzArray parse_npy(const unsigned char* p, size_t size, const std::string& name) {
  if (size < 10 || std::memcmp(p, "\x93NUMPY", 6) != 0)
    throw DataError("not an .npy entry: " + name);
  const int major = p[6];
  size_t header_len;
  size_t header_off;
  if (major == 1) {
    header_len = rd16(p + 8);
    header_off = 10;
  } else {
    header_len = rd32(p + 8);
    header_off = 12;
  }
  if (header_off + header_len > size) throw DataError("truncated .npy header: " + name);
  const std::string header(reinterpret_cast<const char*>(p + header_off), header_len);

  auto find_value = [&](const std::string& key) {
    const size_t k = header.find("'" + key + "'");
    if (k == std::string::npos) throw DataError("missing '" + key + "' in .npy header: " + name);
    return header.find(':', k) + 1;
  };

  const size_t descr_pos = find_value("descr");
  const size_t q0 = header.find('\'', descr_pos);
  const size_t q1 = header.find('\'', q0 + 1);
  const std::string descr = header.substr(q0 + 1, q1 - q0 - 1);
  bool is_f8 = false;
  if (descr == "<f4" || descr == "|f4" || descr == "f4") {
    is_f8 = false;
  } else if (descr == "<f8") {
    is_f8 = true;
  } else {
    throw DataError("unsupported dtype '" + descr + "' in " + name + " (need <f4 or <f8)");
  }

  size_t order_pos = find_value("fortran_order");
  while (order_pos < header.size() && header[order_pos] == ' ') ++order_pos;
  if (header.compare(order_pos, 4, "True") == 0)
    throw DataError("fortran-ordered arrays unsupported: " + name);

  NpzArray arr;
  const size_t shape_pos = find_value("shape");
  const size_t p0 = header.find('(', shape_pos);
  const size_t p1 = header.find(')', p0);
  std::string dims = header.substr(p0 + 1, p1 - p0 - 1);
  size_t start = 0;
  while (start < dims.size()) {
    while (start < dims.size() && (dims[start] == ' ' || dims[start] == ',')) ++start;
    if (start >= dims.size()) break;
    size_t end = start;
    while (end < dims.size() && dims[end] != ',') ++end;
    arr.shape.push_back(std::stoi(dims.substr(start, end - start)));
    start = end + 1;
  }

  int64_t count = 1;
  for (int d : arr.shape) count *= d;
  const size_t elem = is_f8 ? 8 : 4;
  const size_t data_off = header_off + header_len;
  if (data_off + static_cast<size_t>(count) * elem > size)
    throw DataError("truncated .npy data: " + name);
  arr.data.resize(static_cast<size_t>(count));
  const unsigned char* d = p + data_off;
  if (is_f8) {
    for (int64_t i = 0; i < count; ++i) {
      double v;
      std::memcpy(&v, d + static_cast<size_t>(i) * 8, 8);
      arr.data[static_cast<size_t>(i)] = static_cast<float>(v);
    }
  } else {
    std::memcpy(arr.data.data(), d, static_cast<size_t>(count) * 4);
  }
  return arr;
}

}  // namespace

std::map<std::string, NpzArray> load_npz(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 22) throw DataError("not a zip archive: " + path);

  // Locate the end-of-central-directory record.
  size_t eocd = std::string::npos;
  const size_t scan_start = buf.size() > (1 << 16) + 22 ? buf.size() - (1 << 16) - 22 : 0;
  for (size_t i = buf.size() - 22 + 1; i-- > scan_start;) {
    if (rd32(buf.data() + i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw DataError("zip end-of-central-directory not found: " + path);

  const uint16_t entries = rd16(buf.data() + eocd + 10);
  uint32_t cd_off = rd32(buf.data() + eocd + 16);

  std::map<std::string, NpzArray> out;
  for (uint16_t e = 0; e < entries; ++e) {
    const unsigned char* cd = buf.data() + cd_off;
    if (rd32(cd) != 0x02014b50) throw DataError("corrupt zip central directory: " + path);
    const uint16_t method = rd16(cd + 10);
    const uint32_t comp_size = rd32(cd + 20);
    const uint16_t name_len = rd16(cd + 28);
    const uint16_t extra_len = rd16(cd + 30);
    const uint16_t comment_len = rd16(cd + 32);
    const uint32_t local_off = rd32(cd + 42);
    std::string name(reinterpret_cast<const char*>(cd + 46), name_len);
    cd_off += 46u + name_len + extra_len + comment_len;

    if (method != 0)
      throw DataError("compressed npz entries unsupported (use numpy.savez): " + name);
    const unsigned char* lh = buf.data() + local_off;
    if (rd32(lh) != 0x04034b50) throw DataError("corrupt zip local header: " + path);
    const uint16_t lh_name = rd16(lh + 26);
    const uint16_t lh_extra = rd16(lh + 28);
    const unsigned char* data = lh + 30 + lh_name + lh_extra;

    if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".npy") == 0)
      name = name.substr(0, name.size() - 4);
    out.emplace(name, parse_npy(data, comp_size, name));
  }
  return out;
}

}  // namespace ins
