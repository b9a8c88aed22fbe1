#include "tilebench/synth.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "tilebench/error.hpp"
#include "tilebench/rng.hpp"

namespace tilebench {

void SynthSpec::validate() const {
  if (n_stainings == 0 || n_scanners == 0 || n_tiles == 0 || dim == 0)
    throw validation_error("synth spec: all counts must be >= 1");
  if (staining_noise < 0.0 || scanner_noise < 0.0)
    throw validation_error("synth spec: noise scales must be >= 0");
}

namespace {

std::string grid_id(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, index + 1);
  return std::string(buf);
}

EmbeddingMatrix random_unit_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  EmbeddingMatrix m(n, d);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      m.row(i)[j] = static_cast<float>(rng.next_gaussian());
  return normalize_rows(m);
}

}  // namespace

CohortManifest synth_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "embeddings", ec);
  if (ec) throw io_error("cannot create output directory: " + (out_dir / "embeddings").string());

  const EmbeddingMatrix base = random_unit_matrix(spec.n_tiles, spec.dim,
                                                  substream_seed(spec.seed, 0));

  // Per-condition offsets in [0.5, 1.5), independent of the noise scales.
  SplitMix64 offset_rng(substream_seed(spec.seed, 1));
  std::vector<double> staining_offset(spec.n_stainings), scanner_offset(spec.n_scanners);
  for (auto& o : staining_offset) o = 0.5 + offset_rng.next_double();
  for (auto& o : scanner_offset) o = 0.5 + offset_rng.next_double();

  const std::filesystem::path manifest_path = out_dir / "manifest.jsonl";
  std::ofstream manifest_out(manifest_path, std::ios::trunc);
  if (!manifest_out) throw io_error("cannot write manifest: " + manifest_path.string());

  for (std::size_t s = 0; s < spec.n_stainings; ++s) {
    for (std::size_t c = 0; c < spec.n_scanners; ++c) {
      const double scale = spec.staining_noise * staining_offset[s] +
                           spec.scanner_noise * scanner_offset[c];
      SplitMix64 rng(substream_seed(spec.seed, 1000 + s * spec.n_scanners + c));
      EmbeddingMatrix slide(spec.n_tiles, spec.dim);
      for (std::size_t i = 0; i < spec.n_tiles; ++i) {
        const float* b = base.row(i);
        float* r = slide.row(i);
        for (std::size_t j = 0; j < spec.dim; ++j)
          r[j] = static_cast<float>(static_cast<double>(b[j]) +
                                    scale * rng.next_gaussian());
      }
      slide = normalize_rows(slide);

      const std::string staining = grid_id("st", s);
      const std::string scanner = grid_id("sc", c);
      const std::string slide_id = staining + "-" + scanner;
      const std::string rel_path = "embeddings/" + slide_id + ".peb";
      write_embedding_file(slide, out_dir / rel_path);

      nlohmann::ordered_json j;
      j["slide_id"] = slide_id;
      j["staining"] = staining;
      j["scanner"] = scanner;
      j["path"] = rel_path;
      j["n_tiles"] = spec.n_tiles;
      j["dim"] = spec.dim;
      manifest_out << j.dump() << "\n";
    }
  }
  manifest_out.close();
  if (!manifest_out) throw io_error("write failed: " + manifest_path.string());
  return load_manifest(manifest_path);
}

}  // namespace tilebench
