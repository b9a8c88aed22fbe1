#include "tilebench/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "tilebench/error.hpp"

namespace tilebench {

const char* to_string(PairMode mode) {
  switch (mode) {
    case PairMode::FixedStainingCrossScanner: return "fixed_staining_cross_scanner";
    case PairMode::FixedScannerCrossStaining: return "fixed_scanner_cross_staining";
    case PairMode::CrossStainingCrossScanner: return "cross_staining_cross_scanner";
  }
  return "?";
}

PairMode pair_mode_from_string(const std::string& name) {
  if (name == "fixed_staining_cross_scanner") return PairMode::FixedStainingCrossScanner;
  if (name == "fixed_scanner_cross_staining") return PairMode::FixedScannerCrossStaining;
  if (name == "cross_staining_cross_scanner") return PairMode::CrossStainingCrossScanner;
  throw validation_error("unknown pair mode: " + name);
}

std::vector<std::pair<std::string, std::string>> enumerate_pairs(const CohortManifest& manifest,
                                                                 PairMode mode) {
  std::vector<std::pair<std::string, std::string>> pairs;
  const auto& slides = manifest.slides;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    for (std::size_t j = i + 1; j < slides.size(); ++j) {
      const auto& a = slides[i];
      const auto& b = slides[j];
      const bool same_staining = a.staining_id == b.staining_id;
      const bool same_scanner = a.scanner_id == b.scanner_id;
      bool keep = false;
      switch (mode) {
        case PairMode::FixedStainingCrossScanner: keep = same_staining && !same_scanner; break;
        case PairMode::FixedScannerCrossStaining: keep = same_scanner && !same_staining; break;
        case PairMode::CrossStainingCrossScanner: keep = !same_staining && !same_scanner; break;
      }
      if (!keep) continue;
      auto p = std::minmax(a.slide_id, b.slide_id);
      pairs.emplace_back(p.first, p.second);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::pair<double, double> aggregate_median_iqr(const std::vector<double>& values) {
  if (values.empty()) throw validation_error("cannot aggregate an empty value list");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
  };
  return {quantile(0.5), quantile(0.75) - quantile(0.25)};
}

std::vector<AggregateRow> aggregate_report(const std::vector<PairMode>& pair_modes,
                                           const std::vector<SlidePairMetrics>& per_pair,
                                           const std::vector<int>& ks) {
  if (pair_modes.size() != per_pair.size())
    throw validation_error("aggregate_report: mode/metric lists differ in length");
  std::vector<AggregateRow> rows;
  const PairMode all_modes[] = {PairMode::FixedStainingCrossScanner,
                                PairMode::FixedScannerCrossStaining,
                                PairMode::CrossStainingCrossScanner};
  for (const PairMode mode : all_modes) {
    std::vector<double> cosines;
    for (std::size_t i = 0; i < per_pair.size(); ++i)
      if (pair_modes[i] == mode) cosines.push_back(per_pair[i].mean_cosine);
    if (cosines.empty()) continue;
    {
      auto [med, iqr] = aggregate_median_iqr(cosines);
      rows.push_back({mode, "mean_cosine", med, iqr, cosines.size()});
    }
    for (const int k : ks) {
      std::vector<double> vals;
      for (std::size_t i = 0; i < per_pair.size(); ++i)
        if (pair_modes[i] == mode) vals.push_back(per_pair[i].topk_accuracy.at(k));
      auto [med, iqr] = aggregate_median_iqr(vals);
      rows.push_back({mode, "top_k@" + std::to_string(k), med, iqr, vals.size()});
    }
  }
  return rows;
}

std::string fnv1a_hex_digest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw io_error("cannot open for digest: " + file.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

namespace {

// Read-through cache of normalized slide matrices. Capacity counts cached
// entries; workers additionally pin at most two slides each via shared_ptr,
// so eviction never invalidates a matrix in use. Loads happen outside the
// lock; concurrent requests for the same slide share one future.
class SlideCache {
 public:
  SlideCache(const CohortManifest& manifest, std::size_t capacity)
      : manifest_(manifest), capacity_(std::max<std::size_t>(capacity, 2)) {}

  std::shared_ptr<const EmbeddingMatrix> get(const std::string& slide_id) {
    std::shared_future<std::shared_ptr<const EmbeddingMatrix>> fut;
    bool must_load = false;
    std::promise<std::shared_ptr<const EmbeddingMatrix>> promise;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = entries_.find(slide_id);
      if (it == entries_.end()) {
        promise = std::promise<std::shared_ptr<const EmbeddingMatrix>>();
        Entry e;
        e.future = promise.get_future().share();
        e.tick = ++tick_;
        e.ready = false;
        entries_.emplace(slide_id, std::move(e));
        must_load = true;
        fut = entries_.at(slide_id).future;
      } else {
        it->second.tick = ++tick_;
        fut = it->second.future;
      }
    }
    if (must_load) {
      try {
        promise.set_value(load(slide_id));
        std::lock_guard<std::mutex> lock(mu_);
        entries_.at(slide_id).ready = true;
        evict_locked();
      } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard<std::mutex> lock(mu_);
        entries_.erase(slide_id);
      }
    }
    return fut.get();
  }

 private:
  struct Entry {
    std::shared_future<std::shared_ptr<const EmbeddingMatrix>> future;
    std::uint64_t tick = 0;
    bool ready = false;
  };

  // Failures surface with the slide id up front, keeping their kind intact
  // so the CLI exit-code mapping still distinguishes io from validation.
  std::shared_ptr<const EmbeddingMatrix> load(const std::string& slide_id) {
    const SlideRecord& rec = manifest_.find(slide_id);
    try {
      EmbeddingMatrix raw = read_embedding_file(rec.path);
      if (raw.n_tiles != rec.n_tiles || raw.dim != rec.dim)
        throw validation_error("file shape " + std::to_string(raw.n_tiles) + "x" +
                               std::to_string(raw.dim) + " does not match manifest " +
                               std::to_string(rec.n_tiles) + "x" + std::to_string(rec.dim));
      return std::make_shared<const EmbeddingMatrix>(normalize_rows(raw));
    } catch (const io_error& e) {
      throw io_error("slide " + slide_id + ": " + e.what());
    } catch (const validation_error& e) {
      throw validation_error("slide " + slide_id + ": " + e.what());
    }
  }

  void evict_locked() {
    while (entries_.size() > capacity_) {
      auto victim = entries_.end();
      for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (!it->second.ready) continue;
        if (victim == entries_.end() || it->second.tick < victim->second.tick) victim = it;
      }
      if (victim == entries_.end()) return;  // everything in flight; retry later
      entries_.erase(victim);
    }
  }

  const CohortManifest& manifest_;
  std::size_t capacity_;
  std::mutex mu_;
  std::map<std::string, Entry> entries_;
  std::uint64_t tick_ = 0;
};

}  // namespace

RobustnessReport run_benchmark(const CohortManifest& manifest,
                               const std::filesystem::path& manifest_path,
                               const RunOptions& options) {
  if (options.ks.empty()) throw validation_error("run_benchmark: empty k list");
  if (!std::is_sorted(options.ks.begin(), options.ks.end()))
    throw validation_error("run_benchmark: k list must be ascending");
  if (options.workers < 1) throw validation_error("run_benchmark: workers must be >= 1");

  struct Task {
    PairMode mode;
    std::string a, b;
  };
  std::vector<Task> tasks;
  for (const PairMode mode : options.modes)
    for (auto& [a, b] : enumerate_pairs(manifest, mode)) tasks.push_back({mode, a, b});

  RobustnessReport report;
  report.manifest_digest = fnv1a_hex_digest(manifest_path);
  report.ks = options.ks;
  report.modes = options.modes;
  report.workers = options.workers;
  report.timestamp_unix =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch()).count();
  report.pair_modes.resize(tasks.size());
  report.per_pair.resize(tasks.size());
  if (tasks.empty()) return report;

  // Pair-level parallelism; when there are fewer pairs than workers the
  // spare workers thread the rank kernel inside each pair instead.
  const int pair_slots = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(options.workers), tasks.size()));
  const int threads_per_pair = std::max(1, options.workers / pair_slots);

  SlideCache cache(manifest, options.max_resident_slides);
  std::atomic<std::size_t> next_task{0};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      const std::size_t idx = next_task.fetch_add(1);
      if (idx >= tasks.size()) return;
      const Task& task = tasks[idx];
      try {
        auto ma = cache.get(task.a);
        auto mb = cache.get(task.b);
        SlidePairMetrics m = top_k_accuracy(*ma, *mb, options.ks, threads_per_pair);
        m.slide_a = task.a;
        m.slide_b = task.b;
        report.pair_modes[idx] = task.mode;
        report.per_pair[idx] = std::move(m);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(pair_slots));
  for (int w = 0; w < pair_slots; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  // Task order is already (mode, slide_a, slide_b)-sorted per mode list;
  // aggregation walks that fixed order, so scheduling cannot leak through.
  report.aggregates = aggregate_report(report.pair_modes, report.per_pair, report.ks);
  return report;
}

}  // namespace tilebench
