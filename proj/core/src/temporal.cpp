#include "magmine/temporal.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace magmine {

std::vector<SnippetRange> segment_boundaries(int num_snippets, int num_segments) {
  if (num_snippets < 1 || num_segments < 1) {
    throw ValidationError("segment_boundaries: T and S must be positive");
  }
  const std::int64_t t = num_snippets;
  const std::int64_t s = num_segments;
  std::vector<SnippetRange> ranges;
  ranges.reserve(num_segments);
  for (std::int64_t j = 0; j < s; ++j) {
    const int begin = static_cast<int>(j * t / s);
    const int end = static_cast<int>((j + 1) * t / s);
    if (end > begin) {
      ranges.push_back({begin, end});
    } else {
      const int idx = std::min(begin, num_snippets - 1);
      ranges.push_back({idx, idx + 1});
    }
  }
  return ranges;
}

SegmentBatch aggregate_segments(const Matrix& snippets, int num_segments, std::string video_id) {
  SegmentBatch batch;
  batch.video_id = std::move(video_id);
  batch.members = segment_boundaries(static_cast<int>(snippets.rows()), num_segments);
  batch.features.resize(num_segments, snippets.cols());
  for (int j = 0; j < num_segments; ++j) {
    const auto& r = batch.members[j];
    batch.features.row(j) = snippets.middleRows(r.begin, r.size()).colwise().mean();
  }
  return batch;
}

SegmentBatch aggregate_segments(const FeatureMatrix& matrix, int num_segments) {
  return aggregate_segments(matrix.as_double(), num_segments, matrix.video_id);
}

Vector multiset_average(const Matrix& snippets, int num_sets, std::uint64_t seed) {
  if (num_sets < 1) throw ValidationError("multiset_average: num_sets must be >= 1");
  const int t = static_cast<int>(snippets.rows());
  std::mt19937_64 rng(seed);
  std::vector<int> picks;
  picks.reserve(num_sets);
  if (num_sets <= t) {
    std::vector<int> order(t);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first num_sets slots become a uniform sample.
    for (int i = 0; i < num_sets; ++i) {
      std::uniform_int_distribution<int> pick(i, t - 1);
      std::swap(order[i], order[pick(rng)]);
      picks.push_back(order[i]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, t - 1);
    for (int i = 0; i < num_sets; ++i) picks.push_back(pick(rng));
  }
  Vector sum = Vector::Zero(snippets.cols());
  for (int idx : picks) sum += snippets.row(idx).transpose();
  return sum / static_cast<double>(num_sets);
}

std::vector<double> expand_to_frames(std::span<const double> snippet_scores, int snippet_len,
                                     std::int64_t num_frames) {
  if (num_frames < 1) throw ValidationError("expand_to_frames: num_frames must be positive");
  if (snippet_scores.empty()) throw ValidationError("expand_to_frames: no snippet scores");
  if (snippet_len < 1) throw ValidationError("expand_to_frames: snippet_len must be positive");
  const std::int64_t last = static_cast<std::int64_t>(snippet_scores.size()) - 1;
  std::vector<double> frames(static_cast<std::size_t>(num_frames));
  for (std::int64_t f = 0; f < num_frames; ++f) {
    frames[f] = snippet_scores[std::min(f / snippet_len, last)];
  }
  return frames;
}

}  // namespace magmine
