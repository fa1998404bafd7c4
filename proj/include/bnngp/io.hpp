#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bnngp/error.hpp"
#include "bnngp/geometry.hpp"

namespace bnngp::io {

// ---------------------------------------------------------------------------
// text helpers

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Strict parse of a whole field as a double; nullopt on anything else.
inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Shortest form that reads back to the same double: 17 significant digits.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "na" || s == "nan" || s == "NaN"; }

// ---------------------------------------------------------------------------
// dataset

/// Locations with optional covariates and response. Rows whose response is
/// missing are prediction-only.
struct Dataset {
  std::vector<Coord> coords;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // n x k
  Eigen::VectorXd response;    // NaN where missing; empty when there is no response column
  bool has_response_column = false;
  std::vector<int> lines;  // source line of each row (header is line 1)

  int size() const { return static_cast<int>(coords.size()); }
  bool observed(int i) const { return has_response_column && !std::isnan(response(i)); }

  std::vector<int> training_rows() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (observed(i)) out.push_back(i);
    return out;
  }
  std::vector<int> prediction_rows() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (!observed(i)) out.push_back(i);
    return out;
  }

  /// Design rows [1, covariates] (intercept optional) for the given rows.
  Eigen::MatrixXd design(const std::vector<int>& rows, bool intercept) const {
    const auto k = covariates.cols();
    const Eigen::Index off = intercept ? 1 : 0;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), k + off);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      if (intercept) X(i, 0) = 1.0;
      X.row(i).tail(k) = covariates.row(rows[r]);
    }
    return X;
  }

  std::vector<Coord> coords_of(const std::vector<int>& rows) const {
    std::vector<Coord> out;
    for (int i : rows) out.push_back(coords[static_cast<std::size_t>(i)]);
    return out;
  }

  Eigen::VectorXd response_of(const std::vector<int>& rows) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) y(static_cast<Eigen::Index>(r)) = response(rows[r]);
    return y;
  }
};

/// Parse a CSV with a header naming x, y, an optional response column and any
/// number of covariate columns.
inline Dataset parse_csv(std::istream& in, const std::string& source = "input") {
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line, ',');
      break;
    }
  }
  if (header.empty()) throw Error(source + ": no data rows");

  int ix = -1, iy = -1, ir = -1;
  std::vector<int> icov;
  std::set<std::string> seen;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& h = header[static_cast<std::size_t>(c)];
    if (h.empty()) throw Error(source + ": line " + std::to_string(lineno) + ": empty column name");
    if (!seen.insert(h).second) throw Error(source + ": line " + std::to_string(lineno) + ": duplicate column '" + h + "'");
    if (h == "x")
      ix = c;
    else if (h == "y")
      iy = c;
    else if (h == "response")
      ir = c;
    else
      icov.push_back(c);
  }
  if (ix < 0 || iy < 0) throw Error(source + ": header needs x and y columns");

  Dataset ds;
  ds.has_response_column = ir >= 0;
  for (int c : icov) ds.covariate_names.push_back(header[static_cast<std::size_t>(c)]);
  std::vector<double> cov_values, resp;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size())
      throw Error(source + ": line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                  " fields, found " + std::to_string(f.size()));
    auto num = [&](int c) {
      const auto v = parse_double(f[static_cast<std::size_t>(c)]);
      if (!v || !std::isfinite(*v))
        throw Error(source + ": line " + std::to_string(lineno) + ": malformed number '" +
                    f[static_cast<std::size_t>(c)] + "' in column '" + header[static_cast<std::size_t>(c)] + "'");
      return *v;
    };
    ds.coords.push_back({num(ix), num(iy)});
    for (int c : icov) cov_values.push_back(num(c));
    if (ir >= 0) resp.push_back(is_missing(f[static_cast<std::size_t>(ir)]) ? std::nan("") : num(ir));
    ds.lines.push_back(lineno);
  }
  if (ds.coords.empty()) throw Error(source + ": no data rows");
  if (const auto dup = LocationSet::find_duplicate(ds.coords))
    throw Error(source + ": duplicate location at lines " + std::to_string(ds.lines[static_cast<std::size_t>(dup->first)]) +
                "," + std::to_string(ds.lines[static_cast<std::size_t>(dup->second)]));

  const auto n = static_cast<Eigen::Index>(ds.coords.size());
  const auto k = static_cast<Eigen::Index>(icov.size());
  ds.covariates = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov_values.data(), n, k);
  if (ir >= 0) ds.response = Eigen::Map<Eigen::VectorXd>(resp.data(), n);
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

/// A plain numeric table with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error("table has no column '" + name + "'");
    return static_cast<int>(it - header.begin());
  }
};

inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  const std::string source = path.string();
  Table t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (t.header.empty()) {
      t.header = std::move(f);
      continue;
    }
    if (f.size() != t.header.size())
      throw Error(source + ": line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                  " fields, found " + std::to_string(f.size()));
    std::vector<double> row;
    for (const auto& s : f) {
      const auto v = parse_double(s);
      if (!v) throw Error(source + ": line " + std::to_string(lineno) + ": malformed number '" + s + "'");
      row.push_back(*v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw Error(source + ": no data rows");
  return t;
}

// ---------------------------------------------------------------------------
// CSV writing

/// Collects a whole table and writes it in one go.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : width_(header.size()) { row_strings(header); }

  CsvWriter& row(std::initializer_list<double> values) { return row(std::vector<double>(values)); }

  CsvWriter& row(const std::vector<double>& values) {
    std::vector<std::string> s;
    for (double v : values) s.push_back(format_double(v));
    return row_strings(s);
  }

  CsvWriter& row_strings(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw Error("csv row has the wrong number of fields");
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (c) out_ << ',';
      out_ << fields[c];
    }
    out_ << '\n';
    return *this;
  }

  std::string str() const { return out_.str(); }

  void save(const std::filesystem::path& path) const { write_text(path, out_.str()); }

  static void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw Error("write failed for '" + path.string() + "'");
  }

 private:
  std::size_t width_;
  std::ostringstream out_;
};

inline std::string int_field(long v) { return std::to_string(v); }

/// x, y, covariates..., response (empty field when missing).
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::vector<std::string> header{"x", "y"};
  header.insert(header.end(), ds.covariate_names.begin(), ds.covariate_names.end());
  if (ds.has_response_column) header.push_back("response");
  CsvWriter w(header);
  for (int i = 0; i < ds.size(); ++i) {
    std::vector<std::string> f{format_double(ds.coords[static_cast<std::size_t>(i)].x),
                               format_double(ds.coords[static_cast<std::size_t>(i)].y)};
    for (Eigen::Index c = 0; c < ds.covariates.cols(); ++c) f.push_back(format_double(ds.covariates(i, c)));
    if (ds.has_response_column) f.push_back(ds.observed(i) ? format_double(ds.response(i)) : "");
    w.row_strings(f);
  }
  w.save(path);
}

// ---------------------------------------------------------------------------
// flat key=value configuration

/// Ordered key=value settings. Files hold one pair per line; '#' starts a comment.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "config") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw Error(source + ": line " + std::to_string(lineno) + ": expected key=value");
      const auto key = trim(std::string_view(t).substr(0, eq));
      if (key.empty()) throw Error(source + ": line " + std::to_string(lineno) + ": empty key");
      if (c.has(key)) throw Error(source + ": line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.set(key, trim(std::string_view(t).substr(eq + 1)));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Later settings win.
  void merge(const Config& over) {
    for (const auto& [k, v] : over.values_) values_[k] = v;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) throw Error("missing setting '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, values_.at(key)) : fallback;
  }

  long get_int(const std::string& key, long fallback) const { return has(key) ? to_int(key, values_.at(key)) : fallback; }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("setting '" + key + "' expects a boolean, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& f : split(values_.at(key), ',')) out.push_back(to_double(key, f));
    return out;
  }

  std::vector<long> get_ints(const std::string& key, std::vector<long> fallback) const {
    if (!has(key)) return fallback;
    std::vector<long> out;
    for (const auto& f : split(values_.at(key), ',')) out.push_back(to_int(key, f));
    return out;
  }

  /// Rejects keys outside `allowed` so that typos do not pass silently.
  void check_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) throw Error("unknown setting '" + k + "'");
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static double to_double(const std::string& key, const std::string& v) {
    const auto d = parse_double(v);
    if (!d || !std::isfinite(*d)) throw Error("setting '" + key + "' expects a number, got '" + v + "'");
    return *d;
  }

  static long to_int(const std::string& key, const std::string& v) {
    long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
      throw Error("setting '" + key + "' expects an integer, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace bnngp::io
