#pragma once

#include <cstdint>
#include <filesystem>

#include "tilebench/embedding.hpp"

namespace tilebench {

// Synthetic staining x scanner cohort for tests and demos: a shared base of
// random unit tile vectors, perturbed per slide with seeded Gaussian noise
// whose scale is staining_noise * staining_offset + scanner_noise *
// scanner_offset, then renormalized. Fully deterministic per seed; the
// per-slide noise directions do not depend on the noise scales, so sweeping
// a scale moves every slide along a fixed direction.
struct SynthSpec {
  std::size_t n_stainings = 2;
  std::size_t n_scanners = 2;
  std::size_t n_tiles = 64;
  std::size_t dim = 16;
  double staining_noise = 0.0;
  double scanner_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Writes <out_dir>/manifest.jsonl plus one PEB1 file per slide under
// <out_dir>/embeddings/, and returns the manifest.
CohortManifest synth_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace tilebench
