#ifndef GTF_DATA_IO_HPP
#define GTF_DATA_IO_HPP

#include <gtf/binary_io.hpp>
#include <gtf/common.hpp>
#include <gtf/dataset.hpp>
#include <gtf/signal.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gtf {

inline constexpr char kDatasetMagic[4] = {'D', 'S', 'D', 'S'};
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<unsigned char> encode_dataset(const TrajectoryDataset& ds) {
  ds.validate();
  io::ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.uint<std::uint16_t>(kDatasetVersion);
  w.uint<std::uint64_t>(static_cast<std::uint64_t>(ds.length()));
  w.uint<std::uint64_t>(static_cast<std::uint64_t>(ds.dim()));
  w.f64(ds.dt);
  for (Index t = 0; t < ds.length(); ++t)
    for (Index j = 0; j < ds.dim(); ++j) w.f64(ds.data(t, j));
  w.f64_block(ds.mean.data(), static_cast<std::size_t>(ds.dim()));
  w.f64_block(ds.std.data(), static_cast<std::size_t>(ds.dim()));
  w.string(ds.source);
  return w.buffer();
}

inline TrajectoryDataset decode_dataset(std::vector<unsigned char> bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kDatasetMagic)) throw FormatError(what + ": not a DSDS dataset (bad magic)");
  const auto version = r.uint<std::uint16_t>();
  if (version != kDatasetVersion) {
    throw FormatError(what + ": unsupported DSDS version " + std::to_string(version) + " (expected " +
                      std::to_string(kDatasetVersion) + ")");
  }
  const auto T = r.uint<std::uint64_t>();
  const auto N = r.uint<std::uint64_t>();
  const double dt = r.f64();
  if (N == 0 || T == 0) throw FormatError(what + ": empty dataset");
  if (T > r.remaining() / 8 / N) throw FormatError(what + ": file truncated (header declares " + std::to_string(T) +
                                                   " x " + std::to_string(N) + " values)");
  TrajectoryDataset ds;
  ds.dt = dt;
  ds.data.resize(static_cast<Index>(T), static_cast<Index>(N));
  for (Index t = 0; t < ds.data.rows(); ++t)
    for (Index j = 0; j < ds.data.cols(); ++j) ds.data(t, j) = r.f64();
  ds.mean.resize(static_cast<Index>(N));
  ds.std.resize(static_cast<Index>(N));
  r.f64_block(ds.mean.data(), N);
  r.f64_block(ds.std.data(), N);
  ds.source = r.string();
  r.expect_end();
  ds.names = default_dimension_names(static_cast<Index>(N));
  try {
    ds.validate();
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
  return ds;
}

inline void save_dataset(const std::string& path, const TrajectoryDataset& ds) {
  io::write_file_bytes(path, encode_dataset(ds));
}

inline TrajectoryDataset load_dataset(const std::string& path) {
  return decode_dataset(io::read_file_bytes(path), "'" + path + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    cells.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

inline bool parse_number(std::string_view cell, double& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return res.ec == std::errc() && res.ptr == cell.data() + cell.size();
}

}  // namespace detail

// Rectangular numeric CSV. A first line that does not parse as numbers is
// taken as the header of dimension names. Blank lines are ignored.
inline TrajectoryDataset parse_csv(const std::string& text, double dt = 1.0, const std::string& source = "csv") {
  require(dt > 0.0, "CSV dt must be positive");
  std::vector<double> values;
  std::vector<std::string> names;
  Index width = -1;
  Index rows = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool first_content = true;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line =
        std::string_view(text).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!detail::parse_number(cells[i], row[i]) || !std::isfinite(row[i])) {
        numeric = false;
        bad = i;
        break;
      }
    }
    if (first_content && !numeric) {
      first_content = false;
      width = static_cast<Index>(cells.size());
      for (auto c : cells) names.emplace_back(c);
      continue;
    }
    first_content = false;
    if (width < 0) width = static_cast<Index>(cells.size());
    if (static_cast<Index>(cells.size()) != width) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(cells.size()));
    }
    if (!numeric) {
      throw FormatError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(bad + 1) +
                        ": not a finite number: '" + std::string(cells[bad]) + "'");
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw FormatError("CSV input contains no data rows");
  Matrix data(rows, width);
  for (Index t = 0; t < rows; ++t)
    for (Index j = 0; j < width; ++j) data(t, j) = values[static_cast<std::size_t>(t * width + j)];
  TrajectoryDataset ds = make_trajectory(std::move(data), dt, source);
  if (!names.empty()) ds.names = std::move(names);
  return ds;
}

inline TrajectoryDataset load_csv(const std::string& path, double dt = 1.0) {
  return parse_csv(io::read_text_file(path), dt, "csv:" + path);
}

inline std::string format_csv(const TrajectoryDataset& ds) {
  std::string out;
  const auto names = ds.names.size() == static_cast<std::size_t>(ds.dim()) ? ds.names
                                                                          : default_dimension_names(ds.dim());
  for (std::size_t j = 0; j < names.size(); ++j) out += (j ? "," : "") + names[j];
  out += '\n';
  for (Index t = 0; t < ds.length(); ++t) {
    for (Index j = 0; j < ds.dim(); ++j) {
      if (j) out += ',';
      out += io::format_double(ds.data(t, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_csv(const std::string& path, const TrajectoryDataset& ds) {
  io::write_text_file(path, format_csv(ds));
}

// Equiprobable (rank-based) bin index of every sample.
inline std::vector<int> equiprobable_bins(const Eigen::Ref<const Vector>& x, int bins) {
  require(bins >= 2, "need at least two bins");
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a) < x(b); });
  std::vector<int> bin(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    bin[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
        static_cast<int>((r * bins) / n);
  }
  // tied values share the bin of their first occurrence
  for (Index r = 1; r < n; ++r) {
    const auto cur = static_cast<std::size_t>(order[static_cast<std::size_t>(r)]);
    const auto prev = static_cast<std::size_t>(order[static_cast<std::size_t>(r - 1)]);
    if (x(static_cast<Index>(cur)) == x(static_cast<Index>(prev))) bin[cur] = bin[prev];
  }
  return bin;
}

// Histogram estimate (nats) of I(x_t; x_{t+lag}).
inline double mutual_information(const Eigen::Ref<const Vector>& x, Index lag, int bins = 16) {
  require(lag >= 0 && lag < x.size(), "mutual_information: lag out of range");
  const auto b = equiprobable_bins(x, bins);
  const Index n = x.size() - lag;
  std::vector<double> joint(static_cast<std::size_t>(bins * bins), 0.0);
  std::vector<double> pa(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> pb(static_cast<std::size_t>(bins), 0.0);
  for (Index t = 0; t < n; ++t) {
    const int i = b[static_cast<std::size_t>(t)];
    const int j = b[static_cast<std::size_t>(t + lag)];
    joint[static_cast<std::size_t>(i * bins + j)] += 1.0;
    pa[static_cast<std::size_t>(i)] += 1.0;
    pb[static_cast<std::size_t>(j)] += 1.0;
  }
  const double nn = static_cast<double>(n);
  double mi = 0.0;
  for (int i = 0; i < bins; ++i) {
    for (int j = 0; j < bins; ++j) {
      const double c = joint[static_cast<std::size_t>(i * bins + j)];
      if (c > 0.0) mi += (c / nn) * std::log(c * nn / (pa[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(j)]));
    }
  }
  return mi;
}

struct DelayEstimate {
  Index tau = 1;
  bool interior_minimum = false;  // false: no significant dip, fallback used
  double tolerance = 0.0;
  std::vector<double> mi;  // mi[k] = I(tau = k + 1)
};

// First significant local minimum of I(tau), tau = 1..max_lag. A minimum
// counts only if the curve both falls into it and rises out of it by more
// than the tolerance: the estimator's standard deviation under independence
// times 3 + sqrt(2 ln max_lag), which covers the spread of max_lag draws. If
// no such dip exists the smallest tau whose I is within that tolerance of the
// global minimum is returned.
inline DelayEstimate mutual_information_delay(const Eigen::Ref<const Vector>& x, Index max_lag, int bins = 16) {
  require(max_lag >= 1, "max_lag must be >= 1");
  require(x.size() >= 10 * max_lag, "series must have at least 10 * max_lag samples");
  if (x.maxCoeff() == x.minCoeff()) throw NumericError("mutual_information_delay: constant series");
  DelayEstimate out;
  out.mi.resize(static_cast<std::size_t>(max_lag));
  for (Index k = 1; k <= max_lag; ++k) out.mi[static_cast<std::size_t>(k - 1)] = mutual_information(x, k, bins);
  const double n = static_cast<double>(x.size() - max_lag);
  const double sd = static_cast<double>(bins - 1) / (std::sqrt(2.0) * n);
  out.tolerance = sd * (3.0 + std::sqrt(2.0 * std::log(static_cast<double>(std::max<Index>(max_lag, 2)))));
  const auto& mi = out.mi;
  const auto K = mi.size();
  double running_max = mi[0];
  for (std::size_t k = 1; k + 1 < K; ++k) {
    running_max = std::max(running_max, mi[k - 1]);
    if (!(mi[k] <= mi[k - 1] && mi[k] <= mi[k + 1])) continue;
    if (running_max - mi[k] <= out.tolerance) continue;
    const double later_max = *std::max_element(mi.begin() + static_cast<std::ptrdiff_t>(k + 1), mi.end());
    if (later_max - mi[k] <= out.tolerance) continue;
    out.tau = static_cast<Index>(k + 1);
    out.interior_minimum = true;
    return out;
  }
  const double lo = *std::min_element(mi.begin(), mi.end());
  for (std::size_t k = 0; k < K; ++k) {
    if (mi[k] - lo <= out.tolerance) {
      out.tau = static_cast<Index>(k + 1);
      break;
    }
  }
  return out;
}

struct EmbeddingSpec {
  Index dimension = 1;
  Index delay = 1;

  Index embedded_length(Index T) const { return T - (dimension - 1) * delay; }
};

// Row t = (x_t, x_{t+tau}, ..., x_{t+(m-1)tau}).
inline TrajectoryDataset delay_embed(const Eigen::Ref<const Vector>& x, const EmbeddingSpec& spec, double dt = 1.0) {
  if (spec.dimension < 1 || spec.delay < 1) throw ConfigError("embedding needs dimension >= 1 and delay >= 1");
  const Index rows = spec.embedded_length(x.size());
  if (rows <= 0) {
    throw ConfigError("series of length " + std::to_string(x.size()) + " too short for embedding dimension " +
                      std::to_string(spec.dimension) + " with delay " + std::to_string(spec.delay));
  }
  Matrix out(rows, spec.dimension);
  for (Index j = 0; j < spec.dimension; ++j) out.col(j) = x.segment(j * spec.delay, rows);
  return make_trajectory(std::move(out), dt,
                         "delay_embed m=" + std::to_string(spec.dimension) + " tau=" + std::to_string(spec.delay));
}

inline Vector gaussian_smooth(const Eigen::Ref<const Vector>& x, double sigma) {
  return gaussian_filter(x, sigma, default_gaussian_window(sigma));
}

}  // namespace gtf

#endif  // GTF_DATA_IO_HPP
