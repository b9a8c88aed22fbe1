#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tilebench/embedding.hpp"

namespace tilebench {

// Per-pair robustness metrics. topk_accuracy[k] is always the arithmetic
// mean of the two directed values at k.
struct SlidePairMetrics {
  std::string slide_a;
  std::string slide_b;
  double mean_cosine = 0.0;
  std::map<int, double> topk_accuracy;
  std::map<int, double> directed_a_to_b;
  std::map<int, double> directed_b_to_a;
  std::size_t n_tiles = 0;
};

// <a,b> / (||a|| ||b||), accumulated in double left to right. Clamped into
// [-1,1] only against rounding overshoot (<= 1e-7). Throws on zero vectors.
double cosine_similarity(const float* a, const float* b, std::size_t dim);
double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

// (1/N) sum_i cosine(A_i, B_i) over positionally matched rows.
double mean_cosine_similarity(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

// Rank of the matched tile B_i among all candidates {rows of A except i}
// u {rows of B}: the number of candidates whose similarity to A_i is >= the
// matched similarity. The matched tile itself always counts, so rank >= 1.
// Ties compare exactly (no epsilon) on the double dot products.
// Both matrices must carry the normalized flag.
std::size_t matched_rank(std::size_t query_index, const EmbeddingMatrix& a,
                         const EmbeddingMatrix& b);

// Ranks for every query row of A against candidates from (A \ self) u B.
// Blocked and multi-threaded; per-query results are bit-identical to the
// single-query path for any thread count or block size.
std::vector<std::uint32_t> matched_ranks(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                                         int threads = 1);

// (1/N) sum_i 1[rank_i <= k] for the A -> B direction.
double top_k_accuracy_directed(const EmbeddingMatrix& a, const EmbeddingMatrix& b, int k,
                               int threads = 1);

// Full per-pair metrics: both directed top-k curves at every requested k,
// their bidirectional average, and the mean cosine similarity.
SlidePairMetrics top_k_accuracy(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                                const std::vector<int>& ks, int threads = 1);

}  // namespace tilebench
