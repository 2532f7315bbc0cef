// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#include "genassets/ply_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "genassets/common.hpp"

namespace ga {

void write_ply(const std::string& path, const PlyCloud& cloud) {
  const bool has_index = !cloud.scan_index.empty();
  const bool has_actor = !cloud.actor.empty();
  GA_CHECK(!has_index || cloud.scan_index.size() == cloud.xyz.size(), ShapeError,
           "write_ply: scan index column size mismatch");
  GA_CHECK(!has_actor || cloud.actor.size() == cloud.xyz.size(), ShapeError,
           "write_ply: actor column size mismatch");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  GA_CHECK(os.good(), IoError, "write_ply: cannot open " + path);
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << cloud.xyz.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (has_index) os << "property uint scan_index\n";
  if (has_actor) os << "property int actor\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.xyz.size(); ++i) {
    float v[3] = {cloud.xyz[i].x(), cloud.xyz[i].y(), cloud.xyz[i].z()};
    os.write(reinterpret_cast<const char*>(v), sizeof(v));
    if (has_index)
      os.write(reinterpret_cast<const char*>(&cloud.scan_index[i]), sizeof(std::uint32_t));
    if (has_actor) os.write(reinterpret_cast<const char*>(&cloud.actor[i]), sizeof(std::int32_t));
  }
  GA_CHECK(os.good(), IoError, "write_ply: short write " + path);
}

PlyCloud read_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GA_CHECK(is.good(), IoError, "read_ply: cannot open " + path);

  std::string line;
  std::getline(is, line);
  GA_CHECK(line == "ply", IoError, "read_ply: not a PLY file: " + path);
  std::getline(is, line);
  GA_CHECK(line == "format binary_little_endian 1.0", IoError,
           "read_ply: unsupported format in " + path);

  std::size_t count = 0;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  while (std::getline(is, line)) {
    if (line == "end_header") break;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "element") {
      std::string what;
      ss >> what >> count;
      GA_CHECK(what == "vertex", IoError, "read_ply: unexpected element in " + path);
    } else if (word == "property") {
      Prop p;
      ss >> p.type >> p.name;
      props.push_back(p);
    } else if (word == "comment") {
      continue;
    } else {
      throw IoError("read_ply: unexpected header line in " + path);
    }
  }
  GA_CHECK(props.size() >= 3 && props[0].name == "x" && props[1].name == "y" &&
               props[2].name == "z",
           IoError, "read_ply: expected float x,y,z properties in " + path);

  PlyCloud cloud;
  cloud.xyz.resize(count);
  int index_col = -1, actor_col = -1;
  for (std::size_t i = 3; i < props.size(); ++i) {
    if (props[i].name == "scan_index" && props[i].type == "uint")
      index_col = static_cast<int>(i);
    else if (props[i].name == "actor" && props[i].type == "int")
      actor_col = static_cast<int>(i);
    else
      throw IoError("read_ply: unsupported extra property " + props[i].name + " in " + path);
  }
  if (index_col >= 0) cloud.scan_index.resize(count);
  if (actor_col >= 0) cloud.actor.resize(count);

  for (std::size_t i = 0; i < count; ++i) {
    float v[3];
    is.read(reinterpret_cast<char*>(v), sizeof(v));
    cloud.xyz[i] = Vec3f(v[0], v[1], v[2]);
    if (index_col >= 0)
      is.read(reinterpret_cast<char*>(&cloud.scan_index[i]), sizeof(std::uint32_t));
    if (actor_col >= 0) is.read(reinterpret_cast<char*>(&cloud.actor[i]), sizeof(std::int32_t));
    GA_CHECK(is.good(), IoError, "read_ply: truncated payload in " + path);
  }
  return cloud;
}

}  // namespace ga
