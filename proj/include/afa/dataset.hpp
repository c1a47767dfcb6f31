#pragma once

// Labeled feature matrices: the CUBE-sigma generator and CSV ingestion with
// missing-value masks.
//
// Indices are 0-based in code. On disk, labels are written 1-based and
// feature columns are named f1..fp, so "feature 7" in a CSV or report is
// column index 6 here.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "afa/nncore.hpp"

namespace afa {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  Vector features;                       // row-major n x p
  std::vector<std::size_t> labels;       // 0-based class indices
  std::vector<std::uint8_t> known_mask;  // row-major n x p, 1 = value present
  Vector class_weights;                  // length num_classes, all > 0
  std::vector<std::string> feature_names;

  std::size_t size() const { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * num_features, num_features};
  }
  std::span<const std::uint8_t> known(std::size_t i) const {
    return {known_mask.data() + i * num_features, num_features};
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_features = num_features;
    out.num_classes = num_classes;
    out.class_weights = class_weights;
    out.feature_names = feature_names;
    for (auto i : indices) {
      auto r = row(i);
      auto k = known(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.known_mask.insert(out.known_mask.end(), k.begin(), k.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  void validate() const {
    if (num_features == 0) throw DatasetError("dataset has no features");
    if (features.size() != size() * num_features || known_mask.size() != features.size())
      throw DatasetError("dataset matrix sizes are inconsistent");
    if (class_weights.size() != num_classes) throw DatasetError("class weight count mismatch");
    for (double w : class_weights)
      if (!(w > 0.0)) throw DatasetError("class weights must be positive");
    for (auto y : labels)
      if (y >= num_classes) throw DatasetError("label out of range");
    for (std::size_t i = 0; i < features.size(); ++i)
      if (known_mask[i] && !std::isfinite(features[i]))
        throw DatasetError("non-finite known feature value");
  }
};

inline std::vector<std::string> default_feature_names(std::size_t p) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("f" + std::to_string(j + 1));
  return names;
}

// ---------------------------------------------------------------------------
// CUBE-sigma
//
// Eight classes. Class k (0-based) plants Gaussian entries at feature indices
// k, k+1, k+2; the mean at index k+b is bit b of k. Every other feature,
// including the remaining informative ones, is Uniform[0,1]. Only indices
// 0..9 ever carry class information.
//
//   class (1-based)  features (1-based)  means
//   1                1 2 3               0 0 0
//   5                5 6 7               0 0 1
//   8                8 9 10              1 1 1

inline constexpr std::size_t kCubeClasses = 8;
inline constexpr std::size_t kCubeInformative = 10;
inline constexpr std::size_t kCubeMinFeatures = 13;

struct CubeSpec {
  std::size_t num_features = 20;
  double sigma = 0.1;
  std::size_t num_samples = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_features < kCubeMinFeatures)
      throw DatasetError("CUBE requires at least " + std::to_string(kCubeMinFeatures) +
                         " features, got " + std::to_string(num_features));
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DatasetError("CUBE sigma must be > 0");
    if (num_samples < kCubeClasses)
      throw DatasetError("CUBE needs at least one sample per class");
  }
};

struct CubeLayout {
  std::array<std::size_t, 3> coords;
  std::array<double, 3> means;
};

inline CubeLayout cube_class_layout(std::size_t class_index) {
  if (class_index >= kCubeClasses)
    throw DatasetError("CUBE class index out of range: " + std::to_string(class_index));
  CubeLayout layout{};
  for (std::size_t b = 0; b < 3; ++b) {
    layout.coords[b] = class_index + b;
    layout.means[b] = static_cast<double>((class_index >> b) & 1u);
  }
  return layout;
}

/// Sample count is rounded down to a multiple of 8 so classes are exactly
/// balanced.
inline Dataset generate_cube(const CubeSpec& spec) {
  spec.validate();
  const std::size_t per_class = spec.num_samples / kCubeClasses;
  const std::size_t n = per_class * kCubeClasses;
  const std::size_t p = spec.num_features;

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % kCubeClasses;
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset ds;
  ds.num_features = p;
  ds.num_classes = kCubeClasses;
  ds.features.resize(n * p);
  ds.known_mask.assign(n * p, 1);
  ds.class_weights.assign(kCubeClasses, 1.0);
  ds.feature_names = default_feature_names(p);
  ds.labels = labels;

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const CubeLayout layout = cube_class_layout(labels[i]);
    double* row = ds.features.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) row[j] = uniform(rng);
    for (std::size_t b = 0; b < 3; ++b)
      row[layout.coords[b]] = layout.means[b] + spec.sigma * normal(rng);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

/// N / (K * count_k); classes with no samples get weight 1.
inline Vector inverse_frequency_weights(std::span<const std::size_t> labels,
                                        std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y : labels) ++counts[y];
  Vector w(num_classes, 1.0);
  const double n = static_cast<double>(labels.size());
  for (std::size_t k = 0; k < num_classes; ++k)
    if (counts[k] > 0) w[k] = n / (static_cast<double>(num_classes) * static_cast<double>(counts[k]));
  return w;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_long(std::string_view s, long long& out) {
  s = trim(s);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Writes a header row (feature names, then `label`) and one row per sample.
/// Missing values are empty cells; labels are written 1-based.
inline void save_csv(const Dataset& ds, std::ostream& os) {
  auto names = ds.feature_names.size() == ds.num_features ? ds.feature_names
                                                          : default_feature_names(ds.num_features);
  for (auto& n : names) os << n << ',';
  os << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = ds.row(i);
    auto k = ds.known(i);
    for (std::size_t j = 0; j < ds.num_features; ++j) {
      if (k[j]) os << format_double(r[j]);
      os << ',';
    }
    os << ds.labels[i] + 1 << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open '" + path + "' for writing");
  save_csv(ds, os);
}

/// Reads a labeled CSV. Labels must be integers: 1-based unless some label is
/// 0, in which case the file is taken as 0-based. Empty feature cells are
/// recorded as missing. Class weights are inverse class frequencies.
inline Dataset load_csv(std::istream& is, const std::string& label_column = "label") {
  std::string line;
  if (!std::getline(is, line)) throw DatasetError("CSV has no header row");
  auto header = detail::split_csv_line(line);
  std::size_t label_idx = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (detail::trim(header[c]) == label_column) label_idx = c;
  if (label_idx == header.size()) throw DatasetError("label column '" + label_column + "' not found");

  Dataset ds;
  ds.num_features = header.size() - 1;
  if (ds.num_features == 0) throw DatasetError("CSV has no feature columns");
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_idx) ds.feature_names.emplace_back(detail::trim(header[c]));

  std::vector<long long> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DatasetError("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(header.size()) + " cells, got " +
                         std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) {
        long long y = 0;
        if (detail::trim(cells[c]).empty())
          throw DatasetError("line " + std::to_string(line_no) + ": missing label");
        if (!detail::parse_long(cells[c], y) || y < 0)
          throw DatasetError("line " + std::to_string(line_no) + ": unparseable label '" +
                             cells[c] + "'");
        raw_labels.push_back(y);
        continue;
      }
      if (detail::trim(cells[c]).empty()) {
        ds.features.push_back(0.0);
        ds.known_mask.push_back(0);
      } else {
        double v = 0.0;
        if (!detail::parse_double(cells[c], v))
          throw DatasetError("line " + std::to_string(line_no) + ": unparseable cell '" +
                             cells[c] + "'");
        ds.features.push_back(v);
        ds.known_mask.push_back(1);
      }
    }
  }
  if (raw_labels.empty()) throw DatasetError("CSV has no data rows");
  const long long base = *std::min_element(raw_labels.begin(), raw_labels.end()) == 0 ? 0 : 1;
  long long max_label = 0;
  for (auto y : raw_labels) {
    ds.labels.push_back(static_cast<std::size_t>(y - base));
    max_label = std::max(max_label, y - base);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  std::vector<std::size_t> distinct(ds.labels);
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2)
    throw DatasetError("CSV contains a single class");
  ds.class_weights = inverse_frequency_weights(ds.labels, ds.num_classes);
  ds.validate();
  return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column = "label") {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open '" + path + "'");
  return load_csv(is, label_column);
}

// ---------------------------------------------------------------------------
// Per-feature min-max scaling of known values to [0,1].

struct FeatureScaling {
  Vector lo;
  Vector hi;

  bool empty() const { return lo.empty(); }

  static FeatureScaling fit(const Dataset& ds) {
    FeatureScaling s;
    s.lo.assign(ds.num_features, std::numeric_limits<double>::infinity());
    s.hi.assign(ds.num_features, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto r = ds.row(i);
      auto k = ds.known(i);
      for (std::size_t j = 0; j < ds.num_features; ++j) {
        if (!k[j]) continue;
        s.lo[j] = std::min(s.lo[j], r[j]);
        s.hi[j] = std::max(s.hi[j], r[j]);
      }
    }
    for (std::size_t j = 0; j < ds.num_features; ++j) {
      if (!std::isfinite(s.lo[j])) {  // column entirely missing
        s.lo[j] = 0.0;
        s.hi[j] = 1.0;
      }
    }
    return s;
  }

  Dataset apply(const Dataset& ds) const {
    nn::require_dim(lo.size(), ds.num_features, "FeatureScaling::apply");
    Dataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < ds.num_features; ++j) {
        const std::size_t at = i * ds.num_features + j;
        if (!out.known_mask[at]) continue;
        const double span = hi[j] - lo[j];
        out.features[at] = span > 0.0 ? (out.features[at] - lo[j]) / span : 0.0;
      }
    }
    return out;
  }
};

/// Reads per-feature acquisition costs from a CSV with a `cost` column, one
/// row per feature in feature order.
inline Vector load_cost_csv(const std::string& path, std::size_t num_features) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open cost file '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw DatasetError("cost file has no header");
  auto header = detail::split_csv_line(line);
  std::size_t col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (detail::trim(header[c]) == "cost") col = c;
  if (col == header.size()) throw DatasetError("cost file has no 'cost' column");
  Vector costs;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    double v = 0.0;
    if (col >= cells.size() || !detail::parse_double(cells[col], v) || !(v > 0.0))
      throw DatasetError("cost file: invalid cost in line '" + line + "'");
    costs.push_back(v);
  }
  if (costs.size() != num_features)
    throw DatasetError("cost file lists " + std::to_string(costs.size()) + " costs for " +
                       std::to_string(num_features) + " features");
  return costs;
}

}  // namespace afa
