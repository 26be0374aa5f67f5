#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coverset {

/// Invalid or inconsistent input: bad arguments, malformed values,
/// misaligned files. The CLI maps this to exit code 2.
class input_error : public std::runtime_error {
 public:
  explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

/// A requested statistic has no defined value, e.g. the rank correlation
/// of a constant sequence. The CLI maps this to exit code 3.
class undefined_statistic_error : public std::runtime_error {
 public:
  explicit undefined_statistic_error(const std::string& what)
      : std::runtime_error(what) {}
};

/// Malformed input file; the message names the file and line.
class parse_error : public input_error {
 public:
  parse_error(const std::string& file, std::size_t line, const std::string& what)
      : input_error(file + ":" + std::to_string(line) + ": " + what) {}
};

}  // namespace coverset
