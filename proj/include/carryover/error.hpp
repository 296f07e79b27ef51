#pragma once

#include <stdexcept>
#include <string>

namespace carryover {

// Base for all toolkit errors so callers can catch one type at the CLI edge.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct ParseError : Error {
  using Error::Error;
};

struct StructureError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

}  // namespace carryover
