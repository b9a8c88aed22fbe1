#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace tilebench {

// One slide of a cohort: identity on the staining/scanner grid plus the
// location and shape of its tile-embedding matrix.
struct SlideRecord {
  std::string slide_id;
  std::string staining_id;
  std::string scanner_id;
  std::filesystem::path path;
  std::size_t n_tiles = 0;
  std::size_t dim = 0;
};

struct CohortManifest {
  std::vector<SlideRecord> slides;  // file order
  std::set<std::string> stainings;
  std::set<std::string> scanners;

  std::size_t n_tiles() const { return slides.empty() ? 0 : slides.front().n_tiles; }
  std::size_t dim() const { return slides.empty() ? 0 : slides.front().dim; }
  const SlideRecord& find(const std::string& slide_id) const;
};

// Row-major n_tiles x dim matrix of 32-bit floats. Tile correspondence
// across slides is positional: row i of one slide matches row i of another.
struct EmbeddingMatrix {
  std::size_t n_tiles = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // n_tiles * dim, row-major
  bool normalized = false;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t n, std::size_t d)
      : n_tiles(n), dim(d), values(n * d, 0.0f) {}

  const float* row(std::size_t i) const { return values.data() + i * dim; }
  float* row(std::size_t i) { return values.data() + i * dim; }

  bool operator==(const EmbeddingMatrix& other) const;

  // Throws validation_error on non-finite entries, shape/payload mismatch,
  // or (when the normalized flag is set) rows whose norm is off unit by
  // more than 1e-5.
  void validate() const;
};

// Manifest files are line-delimited JSON, one slide record per line with
// keys slide_id, staining, scanner, path, n_tiles, dim. Relative embedding
// paths are resolved against the manifest's directory.
//
// load_manifest enforces the registered-cohort invariants: unique
// (staining, scanner) and uniform n_tiles/dim, as required for positional
// tile correspondence. load_slide_list reads the same format for
// downstream-evaluation cohorts, where many slides share one condition and
// tile counts vary; it requires unique slide_ids and a uniform dim only.
CohortManifest load_manifest(const std::filesystem::path& path);
std::vector<SlideRecord> load_slide_list(const std::filesystem::path& path);

// PEB1 container: magic "PEB1", u32 LE version (=1), u32 LE n_tiles,
// u32 LE dim, then n_tiles*dim IEEE-754 binary32 LE values, row-major.
// No padding, no checksum. Writing is byte-deterministic.
EmbeddingMatrix read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

// Rescales each row to unit Euclidean norm (norms accumulated in double,
// left to right). Rejects all-zero rows. Idempotent up to float rounding.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix);

// [cls | column-mean(patch_tokens)], the 2d-dimensional slide-tile embedding
// used when a model exposes both a class token and patch tokens.
std::vector<float> concat_cls_mean(const std::vector<float>& cls,
                                   const EmbeddingMatrix& patch_tokens);

}  // namespace tilebench
