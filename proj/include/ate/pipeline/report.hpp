#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ate::pipeline {

struct ReportRow {
  long step = 0;
  uint64_t seed = 0;
  std::string metric;
  double value = 0.0;

  bool operator==(const ReportRow&) const = default;
};

// Metrics keyed by name, e.g. "diffusion.ate.success" or "vae.pretrain.loss".
// Timings are kept apart from the rows because they vary between runs.
struct RunReport {
  std::vector<ReportRow> rows;
  std::map<std::string, double> wall_seconds;

  void add(long step, uint64_t seed, const std::string& metric, double value);
  void append(const RunReport& other);
  // Rows for one metric and seed in step order.
  std::vector<ReportRow> series(const std::string& metric, uint64_t seed) const;
  std::vector<std::string> metrics() const;
  // Value at the largest step; throws UsageError when absent.
  double final_value(const std::string& metric, uint64_t seed) const;
  // Rows sorted by (metric, seed, step); enforces unique steps per series.
  void normalize();
};

// CSV with header step,seed,metric,value. Values are written in shortest
// round-trip form, so the bytes depend only on the rows.
std::string report_csv(const RunReport& report);
RunReport parse_report_csv(const std::string& text);
RunReport load_report_csv(const std::filesystem::path& path);

// One line plot per metric: x = step, one polyline per seed.
std::string metric_svg(const RunReport& report, const std::string& metric);

// Writes dir/report.csv, dir/plots/<metric>.svg and dir/timing.csv.
void emit_report(const RunReport& report, const std::filesystem::path& dir);

}  // namespace ate::pipeline
