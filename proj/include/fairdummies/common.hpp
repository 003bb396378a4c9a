#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fairdummies {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Every random draw in the library comes from an explicitly passed engine of this type.
using Rng = std::mt19937_64;

/// Independent engine for a numbered substream of `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Keeps large temporary matrices on the heap instead of fresh mmap calls.
/// Training allocates many short-lived n x k buffers; without this, glibc
/// returns each one to the kernel and system time dominates. No-op elsewhere.
void keep_large_allocations();

enum class Task { Regression, Classification };

const char* to_string(Task task);
Task parse_task(const std::string& text);

// Error hierarchy. The CLI maps ConfigError -> 2, DataError -> 3, DivergenceError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DegenerateAttributeError : public DataError {
 public:
  using DataError::DataError;
};

class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace fairdummies
