// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ins/params.h"

namespace ins {

// Self-describing training container (versioned binary, see README for the
// byte layout): a JSON config snapshot, JSON step/phase metadata, and named
// little-endian float32 arrays with shape headers. Arrays hold live
// parameters ("param."), the immutable pretrained CIM copy ("frozen."), and
// Adam moments ("adam.m." / "adam.v.").
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string config_json;  // field + train config snapshot
  std::string meta_json;    // step, phase, rng state, adam step
  std::vector<Param> arrays;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  void put_array(const std::string& name, const Param& p);
  const Param* find_array(const std::string& name) const;
};

}  // namespace ins
