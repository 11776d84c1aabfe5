#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace magmine {

// Row-major so that one row is one snippet/segment feature.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
// Flat parameter/gradient storage. Eigen picks its vectorized summation order
// from the address alignment, so buffers that are mapped as matrices must
// start on the same boundary every run for results to be bit-reproducible.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary or JSON input.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input parsed fine but violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Metric requested on data where it is not defined (e.g. single-class ROC).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Training produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// Stable child seed: mixes the parent with the hash of a label.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

// Worker count: hardware concurrency capped by MAGMINE_THREADS when set.
unsigned worker_count();

// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
// write results into per-index slots so the outcome does not depend on the
// thread schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// Git blob hash (SHA-1 over "blob <len>\0" + content) as lowercase hex.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::string& path);

}  // namespace magmine
