#pragma once

#include <stdexcept>
#include <string>

namespace zstc {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (records, vocabularies, mappings).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Model contract violations: wrong mode, overlong input, non-finite loss.
class ModelError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace zstc
