#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace degen {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Expression syntax error; offset is a 0-based byte position into the input.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Problem-file validation error; line is 1-based, 0 when not line-specific.
class ProblemFormatError : public Error {
 public:
  ProblemFormatError(const std::string& msg, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Degenerate geometry: vanishing gradients, characteristic points, chart domain misses.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Monte Carlo estimate failed a hard diagnostic (unexited paths, blow-ups).
class EstimateRejected : public Error {
 public:
  using Error::Error;
};

}  // namespace degen
