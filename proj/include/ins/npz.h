// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

namespace ins {

struct NpzArray {
  std::vector<int> shape;
  std::vector<float> data;
};

// Reads an uncompressed .npz (zip of .npy v1/v2 entries, float32 or float64
// little-endian). This is the documented container for backbone weights.
std::map<std::string, NpzArray> load_npz(const std::string& path);

}  // namespace ins
