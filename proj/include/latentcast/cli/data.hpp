#pragma once

// CSV series I/O. Columns: item_id, t, z, [availability], feature_*, season_*.
// Availability defaults to 1 when the column is absent.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/issm.hpp"

namespace latentcast::cli {

struct Series {
  std::string item_id;
  long start = 0;
  Eigen::VectorXd z;
  Eigen::VectorXd availability;
  Eigen::MatrixXd features;                 // T x p
  std::vector<std::vector<int>> calendar;  // one column per season_* field

  Eigen::Index length() const { return z.size(); }

  SeriesDesign design() const {
    SeriesDesign d;
    d.start = start;
    d.length = length();
    d.features = features;
    d.calendar = calendar;
    return d;
  }

  /// Rows [from, from + n).
  Series slice(Eigen::Index from, Eigen::Index n) const {
    if (from < 0 || n < 0 || from + n > length()) throw RangeError("slice outside series " + item_id);
    Series s;
    s.item_id = item_id;
    s.start = start + static_cast<long>(from);
    s.z = z.segment(from, n);
    s.availability = availability.segment(from, n);
    s.features = features.middleRows(from, n);
    for (const auto& c : calendar) s.calendar.emplace_back(c.begin() + from, c.begin() + from + n);
    return s;
  }
};

struct Dataset {
  std::vector<std::string> feature_names;  // without the prefix
  std::vector<std::string> season_names;
  std::map<std::string, Series> items;
};

struct CsvOptions {
  bool allow_negative = false;  // real-valued (Gaussian) targets
};

namespace detail {

inline std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> out;
  size_t pos = 0;
  for (;;) {
    const size_t c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void fail(const std::string& src, long line, const std::string& what) {
  throw DataError(src + ":" + std::to_string(line) + ": " + what);
}

inline double parse_double(std::string_view s, const std::string& src, long line, const char* col) {
  s = trim(s);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(src, line, std::string("malformed value '") + std::string(s) + "' in column " + col);
  return v;
}

inline long parse_long(std::string_view s, const std::string& src, long line, const char* col) {
  s = trim(s);
  long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(src, line, std::string("malformed integer '") + std::string(s) + "' in column " + col);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// Strict parse; rows are grouped by item and sorted by t.
inline Dataset parse_csv(std::istream& in, const std::string& source = "<input>", const CsvOptions& opt = {}) {
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty file, header row expected");
  ++lineno;
  const auto header = detail::split_row(line);
  int c_item = -1, c_t = -1, c_z = -1, c_av = -1;
  std::vector<int> c_feat, c_season;
  Dataset ds;
  for (size_t i = 0; i < header.size(); ++i) {
    const std::string h(detail::trim(header[i]));
    const int ci = static_cast<int>(i);
    if (h == "item_id") c_item = ci;
    else if (h == "t") c_t = ci;
    else if (h == "z") c_z = ci;
    else if (h == "availability") c_av = ci;
    else if (h.rfind("feature_", 0) == 0) { c_feat.push_back(ci); ds.feature_names.push_back(h.substr(8)); }
    else if (h.rfind("season_", 0) == 0) { c_season.push_back(ci); ds.season_names.push_back(h.substr(7)); }
    else detail::fail(source, 1, "unknown column '" + h + "'");
  }
  if (c_item < 0 || c_t < 0 || c_z < 0) detail::fail(source, 1, "header must contain item_id, t and z");

  struct Row {
    long t;
    long line;
    double z, av;
    std::vector<double> feat;
    std::vector<int> season;
  };
  std::map<std::string, std::vector<Row>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_row(line);
    if (f.size() != header.size())
      detail::fail(source, lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                       std::to_string(f.size()));
    Row r;
    r.line = lineno;
    const std::string id(detail::trim(f[static_cast<size_t>(c_item)]));
    if (id.empty()) detail::fail(source, lineno, "empty item_id");
    r.t = detail::parse_long(f[static_cast<size_t>(c_t)], source, lineno, "t");
    r.z = detail::parse_double(f[static_cast<size_t>(c_z)], source, lineno, "z");
    if (!std::isfinite(r.z)) detail::fail(source, lineno, "non-finite z");
    if (!opt.allow_negative && r.z < 0.0) detail::fail(source, lineno, "negative z");
    r.av = c_av >= 0 ? detail::parse_double(f[static_cast<size_t>(c_av)], source, lineno, "availability") : 1.0;
    if (!(r.av >= 0.0 && r.av <= 1.0)) detail::fail(source, lineno, "availability outside [0, 1]");
    for (int c : c_feat) r.feat.push_back(detail::parse_double(f[static_cast<size_t>(c)], source, lineno, "feature"));
    for (int c : c_season) {
      const long v = detail::parse_long(f[static_cast<size_t>(c)], source, lineno, "season");
      if (v < 0) detail::fail(source, lineno, "negative season index");
      r.season.push_back(static_cast<int>(v));
    }
    rows[id].push_back(std::move(r));
  }

  for (auto& [id, rs] : rows) {
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    for (size_t i = 1; i < rs.size(); ++i) {
      if (rs[i].t == rs[i - 1].t) detail::fail(source, rs[i].line, "duplicate t=" + std::to_string(rs[i].t) + " for item " + id);
      if (rs[i].t != rs[i - 1].t + 1)
        detail::fail(source, rs[i].line, "gap in t for item " + id + " (" + std::to_string(rs[i - 1].t) + " then " +
                                             std::to_string(rs[i].t) + ")");
    }
    Series s;
    s.item_id = id;
    s.start = rs.front().t;
    const auto T = static_cast<Eigen::Index>(rs.size());
    s.z.resize(T);
    s.availability.resize(T);
    s.features.resize(T, static_cast<Eigen::Index>(c_feat.size()));
    s.calendar.assign(c_season.size(), std::vector<int>(rs.size()));
    for (Eigen::Index i = 0; i < T; ++i) {
      const Row& r = rs[static_cast<size_t>(i)];
      s.z[i] = r.z;
      s.availability[i] = r.av;
      for (size_t j = 0; j < r.feat.size(); ++j) s.features(i, static_cast<Eigen::Index>(j)) = r.feat[j];
      for (size_t j = 0; j < r.season.size(); ++j) s.calendar[j][static_cast<size_t>(i)] = r.season[j];
    }
    ds.items.emplace(id, std::move(s));
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path, opt);
}

inline void write_csv(std::ostream& out, const Dataset& ds) {
  out << "item_id,t,z,availability";
  for (const auto& n : ds.feature_names) out << ",feature_" << n;
  for (const auto& n : ds.season_names) out << ",season_" << n;
  out << '\n';
  for (const auto& [id, s] : ds.items) {
    for (Eigen::Index i = 0; i < s.length(); ++i) {
      out << id << ',' << s.start + i << ',' << detail::format_double(s.z[i]) << ','
          << detail::format_double(s.availability[i]);
      for (Eigen::Index j = 0; j < s.features.cols(); ++j) out << ',' << detail::format_double(s.features(i, j));
      for (const auto& c : s.calendar) out << ',' << c[static_cast<size_t>(i)];
      out << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, ds);
}

}  // namespace latentcast::cli
