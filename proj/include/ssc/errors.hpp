#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssc {

// Tensor extents or matrix dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation (nonpositive depth,
// empty key set, all voxels ignored, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Sampling coordinate lies on a lattice line where the interpolant has a kink.
class NonDifferentiablePoint : public DomainError {
 public:
  using DomainError::DomainError;
};

// Invalid or inconsistent configuration / calibration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary file. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace ssc
