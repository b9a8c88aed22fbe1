#include "tilebench/embedding.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "tilebench/error.hpp"

namespace tilebench {

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float float_from_bits(std::uint32_t bits) {
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

std::uint32_t bits_from_float(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  return bits;
}

}  // namespace

const SlideRecord& CohortManifest::find(const std::string& slide_id) const {
  for (const auto& s : slides) {
    if (s.slide_id == slide_id) return s;
  }
  throw validation_error("unknown slide_id: " + slide_id);
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  if (n_tiles != other.n_tiles || dim != other.dim) return false;
  // Bit-for-bit, so that +0/-0 and NaN payloads cannot alias.
  return std::memcmp(values.data(), other.values.data(),
                     values.size() * sizeof(float)) == 0;
}

void EmbeddingMatrix::validate() const {
  if (n_tiles == 0 || dim == 0) throw validation_error("embedding matrix has empty shape");
  if (values.size() != n_tiles * dim)
    throw validation_error("embedding matrix payload does not match its shape");
  for (std::size_t i = 0; i < n_tiles; ++i) {
    const float* r = row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::isfinite(r[j]))
        throw validation_error("non-finite value at row " + std::to_string(i) +
                               ", col " + std::to_string(j));
    }
    if (normalized) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += static_cast<double>(r[j]) * r[j];
      if (std::fabs(std::sqrt(s) - 1.0) > 1e-5)
        throw validation_error("row " + std::to_string(i) +
                               " is flagged normalized but has norm " +
                               std::to_string(std::sqrt(s)));
    }
  }
}

namespace {

std::vector<SlideRecord> parse_slide_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open manifest: " + path.string());
  std::vector<SlideRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SlideRecord rec;
    try {
      const auto j = nlohmann::json::parse(line);
      rec.slide_id = j.at("slide_id").get<std::string>();
      rec.staining_id = j.at("staining").get<std::string>();
      rec.scanner_id = j.at("scanner").get<std::string>();
      rec.path = j.at("path").get<std::string>();
      rec.n_tiles = j.at("n_tiles").get<std::size_t>();
      rec.dim = j.at("dim").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw validation_error("manifest line " + std::to_string(line_no) +
                             ": malformed record (" + e.what() + ")");
    }
    if (rec.n_tiles == 0 || rec.dim == 0)
      throw validation_error("manifest line " + std::to_string(line_no) +
                             ": n_tiles and dim must be positive");
    if (rec.path.is_relative()) rec.path = path.parent_path() / rec.path;
    if (!records.empty() && rec.dim != records.front().dim)
      throw validation_error("manifest line " + std::to_string(line_no) + ": dim " +
                             std::to_string(rec.dim) + " differs from cohort-wide " +
                             std::to_string(records.front().dim));
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw validation_error("empty manifest: " + path.string());
  return records;
}

}  // namespace

CohortManifest load_manifest(const std::filesystem::path& path) {
  CohortManifest manifest;
  manifest.slides = parse_slide_records(path);
  std::set<std::pair<std::string, std::string>> seen_conditions;
  for (const auto& rec : manifest.slides) {
    if (!seen_conditions.insert({rec.staining_id, rec.scanner_id}).second)
      throw validation_error("manifest " + path.string() +
                             ": duplicate (staining, scanner) pair (" + rec.staining_id +
                             ", " + rec.scanner_id + ")");
    if (rec.n_tiles != manifest.slides.front().n_tiles)
      throw validation_error("manifest " + path.string() + ": slide " + rec.slide_id +
                             " has n_tiles " + std::to_string(rec.n_tiles) +
                             " but the cohort uses " +
                             std::to_string(manifest.slides.front().n_tiles));
    manifest.stainings.insert(rec.staining_id);
    manifest.scanners.insert(rec.scanner_id);
  }
  return manifest;
}

std::vector<SlideRecord> load_slide_list(const std::filesystem::path& path) {
  auto records = parse_slide_records(path);
  std::set<std::string> ids;
  for (const auto& rec : records)
    if (!ids.insert(rec.slide_id).second)
      throw validation_error("manifest " + path.string() + ": duplicate slide_id " +
                             rec.slide_id);
  return records;
}

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open embedding file: " + path.string());

  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != static_cast<std::streamsize>(header.size()))
    throw validation_error("truncated PEB1 header in " + path.string());
  if (std::memcmp(header.data(), "PEB1", 4) != 0)
    throw validation_error("bad magic in " + path.string() + " (expected PEB1)");
  const std::uint32_t version = get_u32_le(header.data() + 4);
  if (version != 1)
    throw validation_error("unsupported PEB1 version " + std::to_string(version) +
                           " in " + path.string());

  EmbeddingMatrix m;
  m.n_tiles = get_u32_le(header.data() + 8);
  m.dim = get_u32_le(header.data() + 12);
  if (m.n_tiles == 0 || m.dim == 0)
    throw validation_error("PEB1 file declares an empty shape: " + path.string());

  const std::size_t count = m.n_tiles * m.dim;
  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    throw validation_error("truncated PEB1 payload in " + path.string() + ": header declares " +
                           std::to_string(count) + " values, got " +
                           std::to_string(in.gcount() / 4));
  if (in.peek() != std::ifstream::traits_type::eof())
    throw validation_error("trailing bytes after PEB1 payload in " + path.string());

  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = float_from_bits(get_u32_le(payload.data() + i * 4));
    if (!std::isfinite(v))
      throw validation_error("non-finite value at row " + std::to_string(i / m.dim) +
                             ", col " + std::to_string(i % m.dim) + " in " + path.string());
    m.values[i] = v;
  }
  return m;
}

void write_embedding_file(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  matrix.validate();
  std::string buf;
  buf.reserve(16 + matrix.values.size() * 4);
  buf.append("PEB1", 4);
  put_u32_le(buf, 1);
  put_u32_le(buf, static_cast<std::uint32_t>(matrix.n_tiles));
  put_u32_le(buf, static_cast<std::uint32_t>(matrix.dim));
  for (const float v : matrix.values) put_u32_le(buf, bits_from_float(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error("write failed: " + path.string());
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix) {
  EmbeddingMatrix out = matrix;
  for (std::size_t i = 0; i < matrix.n_tiles; ++i) {
    const float* src = matrix.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < matrix.dim; ++j)
      s += static_cast<double>(src[j]) * static_cast<double>(src[j]);
    if (s == 0.0)
      throw validation_error("cannot normalize all-zero row " + std::to_string(i));
    const double inv = 1.0 / std::sqrt(s);
    float* dst = out.row(i);
    for (std::size_t j = 0; j < matrix.dim; ++j)
      dst[j] = static_cast<float>(static_cast<double>(src[j]) * inv);
  }
  out.normalized = true;
  return out;
}

std::vector<float> concat_cls_mean(const std::vector<float>& cls,
                                   const EmbeddingMatrix& patch_tokens) {
  if (patch_tokens.n_tiles == 0)
    throw validation_error("concat_cls_mean: need at least one patch token");
  if (cls.size() != patch_tokens.dim)
    throw validation_error("concat_cls_mean: class token dim " + std::to_string(cls.size()) +
                           " != patch token dim " + std::to_string(patch_tokens.dim));
  const std::size_t d = patch_tokens.dim;
  std::vector<float> out(2 * d);
  std::copy(cls.begin(), cls.end(), out.begin());
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < patch_tokens.n_tiles; ++p)
      s += static_cast<double>(patch_tokens.row(p)[j]);
    out[d + j] = static_cast<float>(s / static_cast<double>(patch_tokens.n_tiles));
  }
  return out;
}

}  // namespace tilebench
