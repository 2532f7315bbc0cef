// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ga {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes, so new failure modes should reuse one of them where possible.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ValueError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct MissingPrerequisite : Error {
  using Error::Error;
};

#define GA_CHECK(cond, err, msg)   \
  do {                             \
    if (!(cond)) throw err(msg);   \
  } while (0)

}  // namespace ga
