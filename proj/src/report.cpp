#include "tilebench/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tilebench/error.hpp"

namespace tilebench {

namespace {

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string fmt_cell(double median, double iqr) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", median, iqr);
  return std::string(buf);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace

void emit_report(const RobustnessReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir.string());

  {  // pairs.csv
    std::ostringstream os;
    os << "mode,slide_a,slide_b,mean_cosine";
    for (const int k : report.ks) os << ",top" << k;
    os << "\n";
    for (std::size_t i = 0; i < report.per_pair.size(); ++i) {
      const auto& m = report.per_pair[i];
      os << to_string(report.pair_modes[i]) << ',' << m.slide_a << ',' << m.slide_b << ','
         << fmt_full(m.mean_cosine);
      for (const int k : report.ks) os << ',' << fmt_full(m.topk_accuracy.at(k));
      os << "\n";
    }
    write_text_file(out_dir / "pairs.csv", os.str());
  }

  {  // aggregate.csv
    std::ostringstream os;
    os << "mode,metric,median,iqr,n_pairs\n";
    for (const auto& row : report.aggregates)
      os << to_string(row.mode) << ',' << row.metric << ',' << fmt_full(row.median) << ','
         << fmt_full(row.iqr) << ',' << row.n_pairs << "\n";
    write_text_file(out_dir / "aggregate.csv", os.str());
  }

  {  // report.txt
    const int table_k = std::count(report.ks.begin(), report.ks.end(), 10) > 0
                            ? 10
                            : report.ks.back();
    std::ostringstream os;
    os << "robustness summary: median (IQR) over slide pairs\n";
    os << "source digest: " << report.manifest_digest << "\n";
    os << "k values: ";
    for (std::size_t i = 0; i < report.ks.size(); ++i)
      os << (i ? "," : "") << report.ks[i];
    os << "\n\n";

    char header[128];
    std::snprintf(header, sizeof(header), "%-30s  %-14s  %-14s\n", "pair family", "cosine",
                  ("top-" + std::to_string(table_k)).c_str());
    os << header;

    const PairMode all_modes[] = {PairMode::FixedStainingCrossScanner,
                                  PairMode::FixedScannerCrossStaining,
                                  PairMode::CrossStainingCrossScanner};
    for (const PairMode mode : all_modes) {
      if (std::find(report.modes.begin(), report.modes.end(), mode) == report.modes.end())
        continue;
      const AggregateRow* cosine = nullptr;
      const AggregateRow* topk = nullptr;
      for (const auto& row : report.aggregates) {
        if (row.mode != mode) continue;
        if (row.metric == "mean_cosine") cosine = &row;
        if (row.metric == "top_k@" + std::to_string(table_k)) topk = &row;
      }
      if (!cosine || !topk) {
        os << "warning: no pairs in family " << to_string(mode) << ", row omitted\n";
        continue;
      }
      char line[160];
      std::snprintf(line, sizeof(line), "%-30s  %-14s  %-14s  [%zu pairs]\n", to_string(mode),
                    fmt_cell(cosine->median, cosine->iqr).c_str(),
                    fmt_cell(topk->median, topk->iqr).c_str(), cosine->n_pairs);
      os << line;
    }
    write_text_file(out_dir / "report.txt", os.str());
  }
}

PersistedPairs read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open pairs file: " + path.string());

  PersistedPairs out;
  std::string line;
  if (!std::getline(in, line)) throw validation_error("empty pairs file: " + path.string());
  {
    std::istringstream header(line);
    std::string col;
    int idx = 0;
    while (std::getline(header, col, ',')) {
      if (idx >= 4) {
        if (col.rfind("top", 0) != 0)
          throw validation_error("pairs file: unexpected column " + col);
        out.ks.push_back(std::stoi(col.substr(3)));
      }
      ++idx;
    }
    if (idx < 5) throw validation_error("pairs file: missing top-k columns");
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string mode_s, a, b, field;
    if (!std::getline(row, mode_s, ',') || !std::getline(row, a, ',') ||
        !std::getline(row, b, ','))
      throw validation_error("pairs file line " + std::to_string(line_no) + ": malformed row");
    SlidePairMetrics m;
    m.slide_a = a;
    m.slide_b = b;
    if (!std::getline(row, field, ','))
      throw validation_error("pairs file line " + std::to_string(line_no) + ": missing cosine");
    m.mean_cosine = std::stod(field);
    for (const int k : out.ks) {
      if (!std::getline(row, field, ','))
        throw validation_error("pairs file line " + std::to_string(line_no) +
                               ": missing top" + std::to_string(k));
      m.topk_accuracy[k] = std::stod(field);
    }
    out.pair_modes.push_back(pair_mode_from_string(mode_s));
    out.per_pair.push_back(std::move(m));
  }
  return out;
}

}  // namespace tilebench
