#include "simplexfit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "simplexfit/errors.hpp"

namespace simplexfit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Dataset::Dataset(std::vector<std::string> column_names, std::vector<std::vector<double>> columns,
                 std::string response_name)
    : names_(std::move(column_names)), cols_(std::move(columns)), response_(std::move(response_name)) {
  validate_and_index();
}

void Dataset::validate_and_index() {
  if (names_.size() != cols_.size()) throw DataError("column name/data count mismatch");
  if (names_.empty()) throw DataError("dataset has no columns");
  n_ = cols_.front().size();
  for (std::size_t j = 0; j < cols_.size(); ++j)
    if (cols_[j].size() != n_)
      throw DataError("ragged column '" + names_[j] + "'");
  if (n_ < 2) throw DataError("dataset needs at least 2 rows, got " + std::to_string(n_));
  if (!has_column(response_)) throw DataError("response column '" + response_ + "' not found");

  const auto& y = column(response_);
  for (std::size_t t = 0; t < n_; ++t) {
    if (!std::isfinite(y[t]) || y[t] <= 0.0 || y[t] >= 1.0)
      throw DataError("response '" + response_ + "' must lie strictly in (0,1); row " +
                      std::to_string(t + 1) + " has " + std::to_string(y[t]));
  }
  for (std::size_t j = 0; j < cols_.size(); ++j)
    for (std::size_t t = 0; t < n_; ++t)
      if (!std::isfinite(cols_[j][t]))
        throw DataError("non-finite value in column '" + names_[j] + "', row " +
                        std::to_string(t + 1));

  rows_.assign(n_, {});
  for (std::size_t t = 0; t < n_; ++t)
    for (std::size_t j = 0; j < cols_.size(); ++j)
      if (names_[j] != response_) rows_[t][names_[j]] = cols_[j][t];
}

bool Dataset::has_column(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& Dataset::column(const std::string& name) const {
  for (std::size_t j = 0; j < names_.size(); ++j)
    if (names_[j] == name) return cols_[j];
  throw DataError("no column named '" + name + "'");
}

Dataset Dataset::load_csv(const std::string& path, const std::string& response_name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file '" + path + "'");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.empty()) throw DataError("no header row in '" + path + "'");

  std::vector<std::vector<double>> cols(header.size());
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(path + ": row " + std::to_string(row_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (fields[j].empty())
        throw DataError(path + ": missing value at row " + std::to_string(row_no) +
                        ", column '" + header[j] + "'");
      char* end = nullptr;
      const double v = std::strtod(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0')
        throw DataError(path + ": cannot parse '" + fields[j] + "' at row " +
                        std::to_string(row_no) + ", column '" + header[j] + "'");
      cols[j].push_back(v);
    }
  }
  if (cols.front().empty()) throw DataError(path + ": no data rows");
  return Dataset(header, std::move(cols), response_name);
}

Dataset Dataset::without_rows(const std::vector<std::size_t>& drop) const {
  std::vector<bool> keep(n_, true);
  for (std::size_t t : drop) {
    if (t >= n_) throw DataError("row index " + std::to_string(t) + " out of range");
    keep[t] = false;
  }
  std::vector<std::vector<double>> cols(names_.size());
  for (std::size_t j = 0; j < names_.size(); ++j)
    for (std::size_t t = 0; t < n_; ++t)
      if (keep[t]) cols[j].push_back(cols_[j][t]);
  return Dataset(names_, std::move(cols), response_);
}

Dataset Dataset::with_response(std::vector<double> y) const {
  return with_column_values(response_, std::move(y));
}

Dataset Dataset::with_column_values(const std::string& name, std::vector<double> values) const {
  if (values.size() != n_) throw DataError("replacement column has wrong length");
  auto cols = cols_;
  for (std::size_t j = 0; j < names_.size(); ++j)
    if (names_[j] == name) {
      cols[j] = std::move(values);
      return Dataset(names_, std::move(cols), response_);
    }
  throw DataError("no column named '" + name + "'");
}

Dataset Dataset::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != n_) throw DataError("permutation has wrong length");
  std::vector<bool> seen(n_, false);
  for (std::size_t idx : order) {
    if (idx >= n_ || seen[idx]) throw DataError("order is not a permutation of the row indices");
    seen[idx] = true;
  }
  std::vector<std::vector<double>> cols(names_.size(), std::vector<double>(n_));
  for (std::size_t j = 0; j < names_.size(); ++j)
    for (std::size_t t = 0; t < n_; ++t) cols[j][t] = cols_[j][order[t]];
  return Dataset(names_, std::move(cols), response_);
}

void Dataset::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < names_.size(); ++j)
    out << (j ? "," : "") << names_[j];
  out << "\n";
  char buf[40];
  for (std::size_t t = 0; t < n_; ++t) {
    for (std::size_t j = 0; j < names_.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.10g", cols_[j][t]);
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace simplexfit
