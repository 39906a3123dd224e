#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mindcine {

/// Dense row-major matrix used for every array in the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps ValidationError/ConfigError to exit code 1 and
// everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class UndefinedResultError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

inline std::string shape_str(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

/// 64-bit FNV-1a. Stable across platforms; used for config hashes and derived seeds.
inline std::uint64_t fnv1a(const std::string& text, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Seed for an independent RNG stream identified by (base seed, tag).
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
  return fnv1a(tag, fnv1a(std::to_string(base)));
}

/// Round every entry to the nearest 32-bit float so on-disk f32 round-trips are exact.
inline void round_to_f32(Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

}  // namespace mindcine
