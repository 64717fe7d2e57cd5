#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace ganet {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad option values, unknown keys, schedule misuse.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Problems with input data: missing files, mismatched raster dimensions,
// unknown label colors, out-of-range labels, empty loss masks.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor/feature-map dimension contract violations.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values where finite ones are required (training aborts).
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string msg(const Parts&... parts) {
  std::ostringstream os;
  detail::format_into(os, parts...);
  return os.str();
}

}  // namespace ganet

#define GANET_THROW(ExType, ...) throw ExType(::ganet::msg(__VA_ARGS__))

#define GANET_CHECK(cond, ExType, ...)       \
  do {                                       \
    if (!(cond)) GANET_THROW(ExType, __VA_ARGS__); \
  } while (0)
