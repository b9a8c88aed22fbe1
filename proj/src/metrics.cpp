#include "tilebench/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

#include "tilebench/error.hpp"

namespace tilebench {

namespace {

// All similarity arithmetic follows one convention: every dot product is
// accumulated in double, strictly left to right over the dimension. Products
// of two binary32 values are exact in binary64, so only the addition order
// matters; keeping it fixed per (query, candidate) pair makes results
// independent of blocking, SIMD width, and thread count, and bit-identical
// to a naive per-pair loop.

double dot_f32(const float* a, const float* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k)
    s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return s;
}

void require_same_shape(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.n_tiles != b.n_tiles || a.dim != b.dim)
    throw validation_error("slide pair shape mismatch: " + std::to_string(a.n_tiles) + "x" +
                           std::to_string(a.dim) + " vs " + std::to_string(b.n_tiles) + "x" +
                           std::to_string(b.dim));
  if (a.n_tiles == 0) throw validation_error("empty slide pair");
}

void require_normalized(const EmbeddingMatrix& m, const char* which) {
  if (!m.normalized)
    throw validation_error(std::string("matrix ") + which +
                           " must be row-normalized before rank counting");
}

constexpr std::size_t kPanelWidth = 8;   // candidate lanes per SIMD panel
constexpr std::size_t kQueryGroup = 4;   // queries sharing one panel pass
constexpr std::size_t kQueryBlock = 256; // queries resident while candidates stream

// Candidate rows repacked k-major in panels of kPanelWidth so the inner
// loop reads one contiguous 8-float slab per dimension step. Short final
// panels are zero-padded; padded lanes are never counted.
struct PanelizedMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t n_panels = 0;
  std::vector<float> data;  // [panel][k][lane]

  explicit PanelizedMatrix(const EmbeddingMatrix& m)
      : n(m.n_tiles), d(m.dim), n_panels((m.n_tiles + kPanelWidth - 1) / kPanelWidth),
        data(n_panels * d * kPanelWidth, 0.0f) {
    for (std::size_t p = 0; p < n_panels; ++p) {
      const std::size_t valid = std::min(kPanelWidth, n - p * kPanelWidth);
      float* panel = data.data() + p * d * kPanelWidth;
      for (std::size_t c = 0; c < valid; ++c) {
        const float* row = m.row(p * kPanelWidth + c);
        for (std::size_t k = 0; k < d; ++k) panel[k * kPanelWidth + c] = row[k];
      }
    }
  }

  const float* panel(std::size_t p) const { return data.data() + p * d * kPanelWidth; }
  std::size_t panel_valid(std::size_t p) const {
    return std::min(kPanelWidth, n - p * kPanelWidth);
  }
};

// 4 queries x 8 candidates. Each acc lane is an independent left-to-right
// chain, so lane values equal the scalar dot_f32 of the same rows. FMA is
// safe: a binary32 x binary32 product is exact in binary64, so fusing does
// not change the rounded sum. Intrinsic paths exist because gcc scalarizes
// the float->double widening load in the portable loop.
#if defined(__AVX512F__)

void kernel4x8(const double* __restrict q0, const double* __restrict q1,
               const double* __restrict q2, const double* __restrict q3,
               const float* __restrict panel, std::size_t d, double* __restrict acc) {
  __m512d a0 = _mm512_setzero_pd(), a1 = _mm512_setzero_pd(), a2 = _mm512_setzero_pd(),
          a3 = _mm512_setzero_pd();
  for (std::size_t k = 0; k < d; ++k) {
    const __m512d pv = _mm512_cvtps_pd(_mm256_loadu_ps(panel + k * kPanelWidth));
    a0 = _mm512_fmadd_pd(_mm512_set1_pd(q0[k]), pv, a0);
    a1 = _mm512_fmadd_pd(_mm512_set1_pd(q1[k]), pv, a1);
    a2 = _mm512_fmadd_pd(_mm512_set1_pd(q2[k]), pv, a2);
    a3 = _mm512_fmadd_pd(_mm512_set1_pd(q3[k]), pv, a3);
  }
  _mm512_storeu_pd(acc + 0 * kPanelWidth, a0);
  _mm512_storeu_pd(acc + 1 * kPanelWidth, a1);
  _mm512_storeu_pd(acc + 2 * kPanelWidth, a2);
  _mm512_storeu_pd(acc + 3 * kPanelWidth, a3);
}

void kernel1x8(const double* __restrict q, const float* __restrict panel, std::size_t d,
               double* __restrict acc) {
  __m512d a = _mm512_setzero_pd();
  for (std::size_t k = 0; k < d; ++k) {
    const __m512d pv = _mm512_cvtps_pd(_mm256_loadu_ps(panel + k * kPanelWidth));
    a = _mm512_fmadd_pd(_mm512_set1_pd(q[k]), pv, a);
  }
  _mm512_storeu_pd(acc, a);
}

#elif defined(__AVX2__) && defined(__FMA__)

void kernel4x8(const double* __restrict q0, const double* __restrict q1,
               const double* __restrict q2, const double* __restrict q3,
               const float* __restrict panel, std::size_t d, double* __restrict acc) {
  __m256d a0l = _mm256_setzero_pd(), a0h = _mm256_setzero_pd();
  __m256d a1l = _mm256_setzero_pd(), a1h = _mm256_setzero_pd();
  __m256d a2l = _mm256_setzero_pd(), a2h = _mm256_setzero_pd();
  __m256d a3l = _mm256_setzero_pd(), a3h = _mm256_setzero_pd();
  for (std::size_t k = 0; k < d; ++k) {
    const float* slab = panel + k * kPanelWidth;
    const __m256d pl = _mm256_cvtps_pd(_mm_loadu_ps(slab));
    const __m256d ph = _mm256_cvtps_pd(_mm_loadu_ps(slab + 4));
    const __m256d v0 = _mm256_set1_pd(q0[k]), v1 = _mm256_set1_pd(q1[k]);
    const __m256d v2 = _mm256_set1_pd(q2[k]), v3 = _mm256_set1_pd(q3[k]);
    a0l = _mm256_fmadd_pd(v0, pl, a0l);
    a0h = _mm256_fmadd_pd(v0, ph, a0h);
    a1l = _mm256_fmadd_pd(v1, pl, a1l);
    a1h = _mm256_fmadd_pd(v1, ph, a1h);
    a2l = _mm256_fmadd_pd(v2, pl, a2l);
    a2h = _mm256_fmadd_pd(v2, ph, a2h);
    a3l = _mm256_fmadd_pd(v3, pl, a3l);
    a3h = _mm256_fmadd_pd(v3, ph, a3h);
  }
  _mm256_storeu_pd(acc + 0, a0l);
  _mm256_storeu_pd(acc + 4, a0h);
  _mm256_storeu_pd(acc + 8, a1l);
  _mm256_storeu_pd(acc + 12, a1h);
  _mm256_storeu_pd(acc + 16, a2l);
  _mm256_storeu_pd(acc + 20, a2h);
  _mm256_storeu_pd(acc + 24, a3l);
  _mm256_storeu_pd(acc + 28, a3h);
}

void kernel1x8(const double* __restrict q, const float* __restrict panel, std::size_t d,
               double* __restrict acc) {
  __m256d al = _mm256_setzero_pd(), ah = _mm256_setzero_pd();
  for (std::size_t k = 0; k < d; ++k) {
    const float* slab = panel + k * kPanelWidth;
    const __m256d v = _mm256_set1_pd(q[k]);
    al = _mm256_fmadd_pd(v, _mm256_cvtps_pd(_mm_loadu_ps(slab)), al);
    ah = _mm256_fmadd_pd(v, _mm256_cvtps_pd(_mm_loadu_ps(slab + 4)), ah);
  }
  _mm256_storeu_pd(acc, al);
  _mm256_storeu_pd(acc + 4, ah);
}

#else

void kernel4x8(const double* __restrict q0, const double* __restrict q1,
               const double* __restrict q2, const double* __restrict q3,
               const float* __restrict panel, std::size_t d, double* __restrict acc) {
  double a0[kPanelWidth] = {0}, a1[kPanelWidth] = {0}, a2[kPanelWidth] = {0},
         a3[kPanelWidth] = {0};
  for (std::size_t k = 0; k < d; ++k) {
    double pv[kPanelWidth];
    const float* slab = panel + k * kPanelWidth;
    for (std::size_t c = 0; c < kPanelWidth; ++c) pv[c] = static_cast<double>(slab[c]);
    const double v0 = q0[k], v1 = q1[k], v2 = q2[k], v3 = q3[k];
    for (std::size_t c = 0; c < kPanelWidth; ++c) a0[c] += v0 * pv[c];
    for (std::size_t c = 0; c < kPanelWidth; ++c) a1[c] += v1 * pv[c];
    for (std::size_t c = 0; c < kPanelWidth; ++c) a2[c] += v2 * pv[c];
    for (std::size_t c = 0; c < kPanelWidth; ++c) a3[c] += v3 * pv[c];
  }
  for (std::size_t c = 0; c < kPanelWidth; ++c) acc[0 * kPanelWidth + c] = a0[c];
  for (std::size_t c = 0; c < kPanelWidth; ++c) acc[1 * kPanelWidth + c] = a1[c];
  for (std::size_t c = 0; c < kPanelWidth; ++c) acc[2 * kPanelWidth + c] = a2[c];
  for (std::size_t c = 0; c < kPanelWidth; ++c) acc[3 * kPanelWidth + c] = a3[c];
}

void kernel1x8(const double* __restrict q, const float* __restrict panel, std::size_t d,
               double* __restrict acc) {
  double a[kPanelWidth] = {0};
  for (std::size_t k = 0; k < d; ++k) {
    const float* slab = panel + k * kPanelWidth;
    const double v = q[k];
    for (std::size_t c = 0; c < kPanelWidth; ++c)
      a[c] += v * static_cast<double>(slab[c]);
  }
  for (std::size_t c = 0; c < kPanelWidth; ++c) acc[c] = a[c];
}

#endif

// Exceedance counts for one block of query rows against one panelized
// candidate set: counts[i] += |{c : sim(query_i, cand_c) >= threshold_i}|.
void count_block(const EmbeddingMatrix& queries, std::size_t q_begin, std::size_t q_end,
                 const PanelizedMatrix& cands, const double* thresholds,
                 std::uint32_t* counts) {
  const std::size_t d = queries.dim;
  // Queries pre-widened to double once per block; (double)f is exact.
  std::vector<double> qd((q_end - q_begin) * d);
  for (std::size_t i = q_begin; i < q_end; ++i) {
    const float* row = queries.row(i);
    double* out = qd.data() + (i - q_begin) * d;
    for (std::size_t k = 0; k < d; ++k) out[k] = static_cast<double>(row[k]);
  }

  double sims[kQueryGroup * kPanelWidth];
  for (std::size_t p = 0; p < cands.n_panels; ++p) {
    const float* panel = cands.panel(p);
    const std::size_t valid = cands.panel_valid(p);
    std::size_t i = q_begin;
    for (; i + kQueryGroup <= q_end; i += kQueryGroup) {
      const double* base = qd.data() + (i - q_begin) * d;
      kernel4x8(base, base + d, base + 2 * d, base + 3 * d, panel, d, sims);
      for (std::size_t g = 0; g < kQueryGroup; ++g) {
        const double thr = thresholds[i + g];
        std::uint32_t c = 0;
        for (std::size_t lane = 0; lane < valid; ++lane)
          c += sims[g * kPanelWidth + lane] >= thr ? 1u : 0u;
        counts[i + g] += c;
      }
    }
    for (; i < q_end; ++i) {
      kernel1x8(qd.data() + (i - q_begin) * d, panel, d, sims);
      const double thr = thresholds[i];
      std::uint32_t c = 0;
      for (std::size_t lane = 0; lane < valid; ++lane) c += sims[lane] >= thr ? 1u : 0u;
      counts[i] += c;
    }
  }
}

// Ranks for every row of `queries` against candidates = (queries \ self) u other.
// `self_panels` / `other_panels` are the panelized copies of the two matrices.
std::vector<std::uint32_t> ranks_directed(const EmbeddingMatrix& queries,
                                          const EmbeddingMatrix& other,
                                          const PanelizedMatrix& self_panels,
                                          const PanelizedMatrix& other_panels, int threads) {
  const std::size_t n = queries.n_tiles;
  const std::size_t d = queries.dim;

  std::vector<double> matched(n), self_sim(n);
  for (std::size_t i = 0; i < n; ++i) {
    matched[i] = dot_f32(queries.row(i), other.row(i), d);
    self_sim[i] = dot_f32(queries.row(i), queries.row(i), d);
  }

  std::vector<std::uint32_t> counts(n, 0);
  const std::size_t n_blocks = (n + kQueryBlock - 1) / kQueryBlock;
  std::atomic<std::size_t> next_block{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t blk = next_block.fetch_add(1);
      if (blk >= n_blocks) return;
      const std::size_t begin = blk * kQueryBlock;
      const std::size_t end = std::min(begin + kQueryBlock, n);
      count_block(queries, begin, end, self_panels, matched.data(), counts.data());
      count_block(queries, begin, end, other_panels, matched.data(), counts.data());
    }
  };
  const int t = std::max(1, threads);
  if (t == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // The blocked pass counted the query itself (it sits in some self panel);
  // remove it. self_sim is the same left-to-right chain the kernel computed.
  for (std::size_t i = 0; i < n; ++i)
    if (self_sim[i] >= matched[i]) counts[i] -= 1;
  return counts;
}

}  // namespace

double cosine_similarity(const float* a, const float* b, std::size_t dim) {
  double s_ab = 0.0, s_aa = 0.0, s_bb = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double x = a[k], y = b[k];
    s_ab += x * y;
    s_aa += x * x;
    s_bb += y * y;
  }
  if (s_aa == 0.0 || s_bb == 0.0)
    throw validation_error("cosine similarity undefined for a zero vector");
  double c = s_ab / std::sqrt(s_aa * s_bb);
  if (c > 1.0 && c <= 1.0 + 1e-7) c = 1.0;
  if (c < -1.0 && c >= -1.0 - 1e-7) c = -1.0;
  return c;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size())
    throw validation_error("cosine similarity: dimension mismatch " +
                           std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  return cosine_similarity(a.data(), b.data(), a.size());
}

double mean_cosine_similarity(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  require_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.n_tiles; ++i)
    s += cosine_similarity(a.row(i), b.row(i), a.dim);
  return s / static_cast<double>(a.n_tiles);
}

std::size_t matched_rank(std::size_t query_index, const EmbeddingMatrix& a,
                         const EmbeddingMatrix& b) {
  require_same_shape(a, b);
  require_normalized(a, "A");
  require_normalized(b, "B");
  if (query_index >= a.n_tiles)
    throw validation_error("query index " + std::to_string(query_index) +
                           " out of range for N=" + std::to_string(a.n_tiles));
  const std::size_t d = a.dim;
  const double matched = dot_f32(a.row(query_index), b.row(query_index), d);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < a.n_tiles; ++j) {
    if (j == query_index) continue;
    if (dot_f32(a.row(query_index), a.row(j), d) >= matched) ++rank;
  }
  for (std::size_t j = 0; j < b.n_tiles; ++j)
    if (dot_f32(a.row(query_index), b.row(j), d) >= matched) ++rank;
  return rank;
}

std::vector<std::uint32_t> matched_ranks(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                                         int threads) {
  require_same_shape(a, b);
  require_normalized(a, "A");
  require_normalized(b, "B");
  PanelizedMatrix pa(a), pb(b);
  return ranks_directed(a, b, pa, pb, threads);
}

double top_k_accuracy_directed(const EmbeddingMatrix& a, const EmbeddingMatrix& b, int k,
                               int threads) {
  if (k < 1) throw validation_error("top-k accuracy requires k >= 1");
  const auto ranks = matched_ranks(a, b, threads);
  std::size_t hits = 0;
  for (const auto r : ranks) hits += r <= static_cast<std::uint32_t>(k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

SlidePairMetrics top_k_accuracy(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                                const std::vector<int>& ks, int threads) {
  require_same_shape(a, b);
  require_normalized(a, "A");
  require_normalized(b, "B");
  if (ks.empty()) throw validation_error("top_k_accuracy: empty k list");
  for (const int k : ks)
    if (k < 1) throw validation_error("top_k_accuracy: k must be >= 1");

  PanelizedMatrix pa(a), pb(b);
  const auto ranks_ab = ranks_directed(a, b, pa, pb, threads);
  const auto ranks_ba = ranks_directed(b, a, pb, pa, threads);

  SlidePairMetrics m;
  m.n_tiles = a.n_tiles;
  m.mean_cosine = mean_cosine_similarity(a, b);
  const double n = static_cast<double>(a.n_tiles);
  for (const int k : ks) {
    std::size_t hits_ab = 0, hits_ba = 0;
    for (const auto r : ranks_ab) hits_ab += r <= static_cast<std::uint32_t>(k) ? 1 : 0;
    for (const auto r : ranks_ba) hits_ba += r <= static_cast<std::uint32_t>(k) ? 1 : 0;
    const double dab = static_cast<double>(hits_ab) / n;
    const double dba = static_cast<double>(hits_ba) / n;
    m.directed_a_to_b[k] = dab;
    m.directed_b_to_a[k] = dba;
    m.topk_accuracy[k] = (dab + dba) / 2.0;
  }
  return m;
}

}  // namespace tilebench
