#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magmine/common.hpp"
#include "magmine/feature_store.hpp"

namespace magmine {

inline constexpr int kDefaultSegments = 32;

// Half-open snippet index range.
struct SnippetRange {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool operator==(const SnippetRange&) const = default;
};

struct SegmentBatch {
  std::string video_id;
  Matrix features;  // S x D
  std::vector<SnippetRange> members;

  int num_segments() const { return static_cast<int>(features.rows()); }
};

// Range j is [floor(jT/S), floor((j+1)T/S)); an empty range is replaced by the
// single snippet min(floor(jT/S), T-1). Requires T >= 1 and S >= 1.
std::vector<SnippetRange> segment_boundaries(int num_snippets, int num_segments);

SegmentBatch aggregate_segments(const Matrix& snippets, int num_segments, std::string video_id = {});
SegmentBatch aggregate_segments(const FeatureMatrix& matrix, int num_segments);

// Mean of `num_sets` sampled rows: without replacement when num_sets <= T,
// with replacement otherwise. Deterministic in `seed`.
Vector multiset_average(const Matrix& snippets, int num_sets, std::uint64_t seed);

// Frame f takes the score of snippet floor(f / snippet_len), clamped to the
// last snippet for trailing frames.
std::vector<double> expand_to_frames(std::span<const double> snippet_scores, int snippet_len,
                                     std::int64_t num_frames);

}  // namespace magmine
