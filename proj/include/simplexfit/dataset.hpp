#ifndef SIMPLEXFIT_DATASET_HPP
#define SIMPLEXFIT_DATASET_HPP

#include <map>
#include <string>
#include <vector>

namespace simplexfit {

// Column-major numeric table with a designated response column. Every
// response value lies strictly in (0,1); no missing values; n >= 2.
class Dataset {
 public:
  // Empty placeholder; every real instance comes from the validating
  // constructor or load_csv.
  Dataset() = default;

  Dataset(std::vector<std::string> column_names,
          std::vector<std::vector<double>> columns,  // same order as names
          std::string response_name);

  static Dataset load_csv(const std::string& path, const std::string& response_name);

  std::size_t n_rows() const { return n_; }
  const std::vector<std::string>& column_names() const { return names_; }
  bool has_column(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
  const std::string& response_name() const { return response_; }
  const std::vector<double>& response() const { return column(response_); }

  // Covariate bindings for observation t (all non-response columns).
  const std::map<std::string, double>& row(std::size_t t) const { return rows_[t]; }

  Dataset without_rows(const std::vector<std::size_t>& drop) const;
  Dataset with_response(std::vector<double> y) const;
  Dataset with_column_values(const std::string& name, std::vector<double> values) const;
  Dataset permuted(const std::vector<std::size_t>& order) const;

  void write_csv(const std::string& path) const;

 private:
  void validate_and_index();

  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
  std::string response_;
  std::size_t n_ = 0;
  std::vector<std::map<std::string, double>> rows_;
};

}  // namespace simplexfit

#endif
