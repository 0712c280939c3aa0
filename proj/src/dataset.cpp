#include "picirc/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "picirc/errors.hpp"

namespace picirc {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

bool is_missing(std::string_view field) { return field.empty() || field == "?"; }

}  // namespace

Eigen::MatrixXi Dataset::as_integers() const {
  Eigen::MatrixXi out(values.rows(), values.cols());
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      if (!std::isnan(v) && v != std::floor(v))
        throw ArgumentError("column " + std::to_string(c) + " holds non-integer values");
      out(r, c) = std::isnan(v) ? 0 : static_cast<int>(v);
    }
  return out;
}

std::vector<VariableType> parse_schema(std::string_view text, std::size_t columns, const Eigen::MatrixXd& values) {
  text = trim(text);
  std::vector<VariableType> types;
  if (text.empty() || text == "auto") {
    for (std::size_t c = 0; c < columns; ++c) {
      double max = 0.0;
      bool integral = true;
      for (Eigen::Index r = 0; r < values.rows(); ++r) {
        const double v = values(r, static_cast<Eigen::Index>(c));
        if (std::isnan(v)) continue;
        if (v < 0 || v != std::floor(v)) integral = false;
        max = std::max(max, v);
      }
      types.push_back(integral ? VariableType{Family::categorical, static_cast<int>(max) + 1}
                               : VariableType{Family::gaussian, 0});
    }
    return types;
  }
  for (auto part : split(text, ',')) types.push_back(VariableType::parse(part));
  if (types.size() == 1) types.assign(columns, types.front());
  if (types.size() != columns)
    throw ArgumentError("schema lists " + std::to_string(types.size()) + " types for " + std::to_string(columns) +
                        " columns");
  return types;
}

Dataset parse_csv(std::string_view text, std::string_view schema) {
  Dataset data;
  std::vector<std::vector<double>> rows;
  std::size_t offset = 0;
  bool header = true;
  while (offset < text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(offset, end - offset);
    const std::size_t line_offset = offset;
    offset = end + 1;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (header) {
      for (auto f : fields) data.names.emplace_back(f);
      header = false;
      continue;
    }
    if (fields.size() != data.names.size())
      throw ParseError("row has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(data.names.size()),
                       line_offset);
    std::vector<double> row;
    for (auto f : fields) {
      if (is_missing(f)) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw ParseError("not a number: '" + std::string(f) + "'",
                         line_offset + static_cast<std::size_t>(f.data() - line.data()));
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (header) throw ParseError("missing header row", 0);

  data.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      data.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  data.types = parse_schema(schema, data.names.size(), data.values);

  for (std::size_t c = 0; c < data.cols(); ++c) {
    const auto& t = data.types[c];
    if (t.family == Family::gaussian) continue;
    const int top = t.family == Family::categorical ? t.num_states - 1 : t.num_states;
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const double v = data.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (std::isnan(v)) continue;
      if (v < 0 || v > top || v != std::floor(v))
        throw LoadError("value " + std::to_string(v) + " at row " + std::to_string(r) + ", column " +
                            std::to_string(c) + " outside 0.." + std::to_string(top),
                        r, c);
    }
  }
  return data;
}

Dataset load_csv(const std::string& path, std::string_view schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string format_csv(const Dataset& data) {
  std::string out;
  for (std::size_t c = 0; c < data.names.size(); ++c) {
    if (c) out += ',';
    out += data.names[c];
  }
  out += '\n';
  char buf[32];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < data.cols(); ++c) {
      if (c) out += ',';
      const double v = data.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (std::isnan(v)) {
        out += '?';
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path);
  out << format_csv(data);
}

Dataset make_dataset(Eigen::MatrixXd values, std::vector<VariableType> types) {
  if (types.size() != static_cast<std::size_t>(values.cols())) throw ArgumentError("one type per column expected");
  Dataset d;
  for (Eigen::Index c = 0; c < values.cols(); ++c) d.names.push_back("x" + std::to_string(c));
  d.types = std::move(types);
  d.values = std::move(values);
  return d;
}

}  // namespace picirc
