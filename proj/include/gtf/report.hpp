#ifndef GTF_REPORT_HPP
#define GTF_REPORT_HPP

#include <gtf/binary_io.hpp>
#include <gtf/common.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gtf {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median absolute deviation, unscaled.
inline double median_absolute_deviation(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = median(v);
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::abs(x - m));
  return median(dev);
}

struct RunRecord {
  std::string run;
  std::string status = "ok";
  std::map<std::string, double> values;
  std::vector<std::string> columns;  // metric names in file order

  bool diverging() const { return status != "ok"; }
};

struct MetricSummary {
  std::string name;
  double median = std::numeric_limits<double>::quiet_NaN();
  double mad = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_used = 0;
};

struct ReportTable {
  std::vector<MetricSummary> metrics;
  std::size_t runs_total = 0;
  std::vector<std::string> diverging_runs;
};

// Parses CSV rows with a `run,status,<metric>...` header. Repeated headers
// (from concatenated files) are skipped.
inline std::vector<RunRecord> parse_metrics_csv(const std::string& text, const std::string& what) {
  std::vector<RunRecord> out;
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> header;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (cells.size() >= 2 && cells[0] == "run" && cells[1] == "status") {
      header = cells;
      continue;
    }
    if (header.empty()) throw FormatError(what + ":" + std::to_string(lineno) + ": data row before header");
    if (cells.size() != header.size()) {
      throw FormatError(what + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " cells, found " + std::to_string(cells.size()));
    }
    RunRecord r;
    r.run = cells[0];
    r.status = cells[1];
    for (std::size_t k = 2; k < cells.size(); ++k) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (cells[k] != "nan") {
        try {
          std::size_t used = 0;
          v = std::stod(cells[k], &used);
          if (used != cells[k].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw FormatError(what + ":" + std::to_string(lineno) + ": non-numeric cell '" + cells[k] + "'");
        }
      }
      r.values[header[k]] = v;
      r.columns.push_back(header[k]);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Diverging runs are counted and listed but excluded from every median.
inline ReportTable aggregate(const std::vector<RunRecord>& runs) {
  ReportTable t;
  t.runs_total = runs.size();
  std::vector<std::string> names;
  for (const auto& r : runs) {
    std::vector<std::string> cols = r.columns;
    for (const auto& [k, v] : r.values)
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
    for (const auto& k : cols)
      if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
  }
  for (const auto& r : runs)
    if (r.diverging()) t.diverging_runs.push_back(r.run);
  for (const auto& name : names) {
    std::vector<double> vals;
    for (const auto& r : runs) {
      if (r.diverging()) continue;
      const auto it = r.values.find(name);
      if (it != r.values.end() && std::isfinite(it->second)) vals.push_back(it->second);
    }
    MetricSummary s;
    s.name = name;
    s.median = median(vals);
    s.mad = median_absolute_deviation(vals);
    s.n_used = vals.size();
    t.metrics.push_back(s);
  }
  return t;
}

inline std::string format_report(const ReportTable& t) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  std::ostringstream os;
  os << "# median and median absolute deviation over non-diverging runs\n";
  os << "# runs=" << t.runs_total << " diverging=" << t.diverging_runs.size();
  if (!t.diverging_runs.empty()) {
    os << " excluded:";
    for (const auto& r : t.diverging_runs) os << ' ' << r;
  }
  os << '\n';
  os << "metric,median,mad,n_used,n_diverging\n";
  for (const auto& m : t.metrics) {
    os << m.name << ',' << num(m.median) << ',' << num(m.mad) << ',' << m.n_used << ',' << t.diverging_runs.size()
       << '\n';
  }
  return os.str();
}

}  // namespace gtf

#endif  // GTF_REPORT_HPP
