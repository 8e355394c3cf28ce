#include "ate/pipeline/report.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ate/errors.hpp"

namespace ate::pipeline {
namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed(double v, int digits) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, end);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string sanitize(const std::string& metric) {
  std::string out = metric;
  for (char& c : out) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  }
  return out;
}

}  // namespace

void RunReport::add(long step, uint64_t seed, const std::string& metric, double value) {
  if (metric.find(',') != std::string::npos) throw UsageError("metric names cannot contain ','");
  rows.push_back({step, seed, metric, value});
}

void RunReport::append(const RunReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  for (const auto& [k, v] : other.wall_seconds) wall_seconds[k] += v;
}

std::vector<ReportRow> RunReport::series(const std::string& metric, uint64_t seed) const {
  std::vector<ReportRow> out;
  for (const auto& r : rows) {
    if (r.metric == metric && r.seed == seed) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.step < b.step; });
  return out;
}

std::vector<std::string> RunReport::metrics() const {
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.metric);
  return {names.begin(), names.end()};
}

double RunReport::final_value(const std::string& metric, uint64_t seed) const {
  auto s = series(metric, seed);
  if (s.empty()) {
    throw UsageError("report has no metric '" + metric + "' for seed " + std::to_string(seed));
  }
  return s.back().value;
}

void RunReport::normalize() {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.metric != b.metric) return a.metric < b.metric;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.step < b.step;
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    if (a.metric == b.metric && a.seed == b.seed && a.step == b.step) {
      throw UsageError("duplicate report row for " + a.metric + " seed " + std::to_string(a.seed) +
                       " step " + std::to_string(a.step));
    }
  }
}

std::string report_csv(const RunReport& report) {
  RunReport sorted = report;
  sorted.normalize();
  std::string out = "step,seed,metric,value\n";
  for (const auto& r : sorted.rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.seed) + "," + r.metric + "," +
           num(r.value) + "\n";
  }
  return out;
}

RunReport parse_report_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != "step,seed,metric,value") {
    throw FormatError("report csv: missing header step,seed,metric,value");
  }
  RunReport report;
  int lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError("report csv line " + std::to_string(lineno) + ": expected 4 fields");
    ReportRow r;
    auto bad = [&] { return FormatError("report csv line " + std::to_string(lineno) + ": bad number"); };
    if (std::from_chars(f[0].data(), f[0].data() + f[0].size(), r.step).ec != std::errc()) throw bad();
    if (std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.seed).ec != std::errc()) throw bad();
    r.metric = f[2];
    if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), r.value).ec != std::errc()) throw bad();
    report.rows.push_back(r);
  }
  return report;
}

RunReport load_report_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_report_csv(ss.str());
}

std::string metric_svg(const RunReport& report, const std::string& metric) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 30, B = 50;
  std::vector<ReportRow> rows;
  std::set<uint64_t> seeds;
  for (const auto& r : report.rows) {
    if (r.metric == metric) {
      rows.push_back(r);
      seeds.insert(r.seed);
    }
  }
  if (rows.empty()) throw UsageError("no rows for metric '" + metric + "'");
  double x0 = rows[0].step, x1 = rows[0].step, y0 = rows[0].value, y1 = rows[0].value;
  for (const auto& r : rows) {
    x0 = std::min(x0, static_cast<double>(r.step));
    x1 = std::max(x1, static_cast<double>(r.step));
    if (std::isfinite(r.value)) {
      y0 = std::min(y0, r.value);
      y1 = std::max(y1, r.value);
    }
  }
  if (x1 == x0) {
    x0 -= 1;
    x1 += 1;
  }
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                  "font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"18\" text-anchor=\"middle\">" + metric + "</text>\n";
  s += "<line x1=\"" + fixed(L, 1) + "\" y1=\"" + fixed(H - B, 1) + "\" x2=\"" + fixed(W - R, 1) +
       "\" y2=\"" + fixed(H - B, 1) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fixed(L, 1) + "\" y1=\"" + fixed(T, 1) + "\" x2=\"" + fixed(L, 1) +
       "\" y2=\"" + fixed(H - B, 1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + fixed(px(xv), 1) + "\" y=\"" + fixed(H - B + 18, 1) +
         "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + fixed(L - 6, 1) + "\" y=\"" + fixed(py(yv) + 4, 1) +
         "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"320\" y=\"392\" text-anchor=\"middle\">step</text>\n";
  std::size_t ci = 0;
  for (uint64_t seed : seeds) {
    const char* color = colors[ci++ % 8];
    std::string pts;
    for (const auto& r : report.series(metric, seed)) {
      if (!std::isfinite(r.value)) continue;
      pts += fixed(px(static_cast<double>(r.step)), 2) + "," + fixed(py(r.value), 2) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
         pts + "\"/>\n";
    s += "<text x=\"" + fixed(W - R - 4, 1) + "\" y=\"" + fixed(T + 14.0 * static_cast<double>(ci), 1) +
         "\" text-anchor=\"end\" fill=\"" + color + "\">seed " + std::to_string(seed) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "plots");
  write_file(dir / "report.csv", report_csv(report));
  for (const auto& m : report.metrics()) {
    write_file(dir / "plots" / (sanitize(m) + ".svg"), metric_svg(report, m));
  }
  std::string timing = "stage,seconds\n";
  for (const auto& [k, v] : report.wall_seconds) timing += k + "," + num(v) + "\n";
  write_file(dir / "timing.csv", timing);
}

}  // namespace ate::pipeline
