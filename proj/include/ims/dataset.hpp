#ifndef IMS_DATASET_HPP
#define IMS_DATASET_HPP

// Labeled feature tables and their CSV form:
//
//   f_0,f_1,...,f_{d-1},label,tag
//
// One row per sample. Features are written with 17 significant digits,
// label is a non-negative integer class index, tag is an integer shift
// marker (-1 when absent).

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ims/common.hpp"
#include "ims/numerics.hpp"

namespace ims {

struct LabeledDataset {
  Matrix features;          // n × d
  std::vector<int> labels;  // n class indices
  std::vector<int> tags;    // n shift markers; -1 = untagged

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  int class_count() const {
    int c = 0;
    for (int y : labels) c = std::max(c, y + 1);
    return c;
  }

  void validate() const {
    if (features.rows() != labels.size() || tags.size() != labels.size())
      throw DataError("dataset: features, labels and tags have different lengths");
    for (int y : labels)
      if (y < 0) throw DataError("dataset: negative label");
    if (!features.all_finite()) throw DataError("dataset: non-finite feature value");
  }

  LabeledDataset subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset out;
    out.features = Matrix(rows.size(), dim());
    out.labels.reserve(rows.size());
    out.tags.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = features.row(rows[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[rows[i]]);
      out.tags.push_back(tags[rows[i]]);
    }
    return out;
  }

  // Rows carrying class `c`, as a plain feature matrix.
  Matrix class_rows(int c) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    return subset(idx).features;
  }

  std::size_t count_of(int c) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
  }
};

inline void write_dataset_csv(std::ostream& os, const LabeledDataset& ds) {
  for (std::size_t j = 0; j < ds.dim(); ++j) os << "f_" << j << ',';
  os << "label,tag\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) os << format_real(v) << ',';
    os << ds.labels[i] << ',' << ds.tags[i] << '\n';
  }
}

inline void save_dataset_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_dataset_csv(os, ds);
  if (!os) throw DataError("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse number '" + s + "'");
  }
}

inline int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse integer '" + s + "'");
  }
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

inline LabeledDataset read_dataset_csv(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw DataError(name + ": empty file");
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  if (header.size() < 2 || header[header.size() - 2] != "label" || header.back() != "tag")
    throw DataError(name + ":1: header must end with 'label,tag'");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "f_" + std::to_string(j))
      throw DataError(name + ":1: expected column 'f_" + std::to_string(j) + "'");

  LabeledDataset ds;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (cells.size() != d + 2)
      throw DataError(where + ": expected " + std::to_string(d + 2) + " fields, got " +
                      std::to_string(cells.size()));
    for (std::size_t j = 0; j < d; ++j) values.push_back(detail::parse_double(cells[j], where));
    const int label = detail::parse_int(cells[d], where);
    if (label < 0) throw DataError(where + ": negative label");
    ds.labels.push_back(label);
    ds.tags.push_back(detail::parse_int(cells[d + 1], where));
  }
  ds.features = Matrix(ds.labels.size(), d, std::move(values));
  ds.validate();
  return ds;
}

inline LabeledDataset load_dataset_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_dataset_csv(is, path);
}

}  // namespace ims

#endif  // IMS_DATASET_HPP
