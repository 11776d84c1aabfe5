#pragma once

// Shared helpers for the unit tests: scratch directories, random data and
// the brute-force oracles the fast implementations are compared against.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "magmine/common.hpp"
#include "magmine/feature_store.hpp"
#include "magmine/synthgen.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("magmine_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline magmine::Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  magmine::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// P(score_pos > score_neg) + 0.5 P(equal) over all pairs.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Step-wise AP by walking the ranking (score desc, index asc).
inline double brute_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  double hits = 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!y[order[r]]) continue;
    hits += 1.0;
    total += hits / static_cast<double>(r + 1);
  }
  return total / hits;
}

// Small corpus that trains in a few seconds.
inline magmine::SynthConfig tiny_synth(std::uint64_t seed) {
  magmine::SynthConfig c;
  c.num_abnormal = 8;
  c.num_normal = 16;
  c.num_val_abnormal = 3;
  c.num_val_normal = 5;
  c.num_test_abnormal = 4;
  c.num_test_normal = 8;
  c.dim = 8;
  c.min_snippets = 32;
  c.max_snippets = 64;
  c.seed = seed;
  return c;
}

}  // namespace testing
