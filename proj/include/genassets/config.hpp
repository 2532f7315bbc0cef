// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "genassets/diffusion.hpp"
#include "genassets/synthdata.hpp"

namespace ga {

struct SamplingDefaults {
  Solver solver = Solver::kDdim;
  int steps = 50;
  double eta = 0.0;
  int count = 8;
};

// One configuration file drives every pipeline command. Unknown keys are
// rejected; values are validated against module preconditions at load.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string data_dir;  // default: $GENASSETS_DATA_DIR or ./artifacts
  DatasetSpec data;
  Stage1Config stage1;
  Stage2Config stage2;
  GuidanceConfig guidance;
  SamplingDefaults sampling;
};

// Loads, applies `key.path=value` overrides, validates. Throws ConfigError
// with a field-level message on any violation.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Built-in defaults (used when no config file is given).
RunConfig default_run_config();

// Canonical JSON serialization (also used for config hashing).
std::string run_config_to_json(const RunConfig& cfg);

// FNV-1a content hash, printed as 16 hex digits.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

}  // namespace ga
