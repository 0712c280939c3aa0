#pragma once

// CSV data interchange. Missing values ("?" or empty fields) load as NaN and are
// marginalized by every evaluator.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "picirc/circuit.hpp"

namespace picirc {

struct Dataset {
  std::vector<std::string> names;
  std::vector<VariableType> types;
  Eigen::MatrixXd values;  // rows x columns

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  /// Integer view for structure learning; missing entries become 0.
  Eigen::MatrixXi as_integers() const;
};

/// "categorical:4" applies to every column, "categorical:4,gaussian,..." lists one type
/// per column, and "auto" picks categorical(max + 1) for non-negative integer columns and
/// gaussian otherwise. An empty schema means "auto".
std::vector<VariableType> parse_schema(std::string_view text, std::size_t columns,
                                       const Eigen::MatrixXd& values);

/// Parses CSV text with a header row. Ragged rows raise ParseError at the row's byte
/// offset; values outside a column's support raise LoadError with the 0-based data row
/// and column.
Dataset parse_csv(std::string_view text, std::string_view schema = "auto");
Dataset load_csv(const std::string& path, std::string_view schema = "auto");

/// Writes the header and every value with 17 significant digits; NaN is written as "?".
std::string format_csv(const Dataset& data);
void save_csv(const std::string& path, const Dataset& data);

/// Dataset with generated column names x0, x1, ...
Dataset make_dataset(Eigen::MatrixXd values, std::vector<VariableType> types);

}  // namespace picirc
