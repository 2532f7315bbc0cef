// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "genassets/geom.hpp"

namespace ga {

// Binary little-endian PLY with float x,y,z per vertex; optional uint scan
// index and int actor id columns for dataset sweeps.
struct PlyCloud {
  std::vector<Vec3f> xyz;
  std::vector<std::uint32_t> scan_index;  // empty or size() == xyz.size()
  std::vector<std::int32_t> actor;        // empty or size() == xyz.size()
};

void write_ply(const std::string& path, const PlyCloud& cloud);
PlyCloud read_ply(const std::string& path);

}  // namespace ga
