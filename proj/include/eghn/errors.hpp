#pragma once

#include <stdexcept>
#include <string>

namespace eghn {

// Error taxonomy shared by the library and the CLI. Exit codes:
// 0 ok, 2 config error, 3 data error, 4 numeric failure, 5 I/O.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 2;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 3;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 4;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 5;
};

// Shape mismatches are numeric misuse; messages must name both shapes.
struct ShapeError : NumericError {
  using NumericError::NumericError;
};

}  // namespace eghn
