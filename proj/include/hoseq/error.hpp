#pragma once

#include <stdexcept>
#include <string>

namespace hoseq {

// Base for every error the library raises. Subcommands map these to exit
// code 3 (runtime/data) unless they derive from ConfigError (exit 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hoseq
