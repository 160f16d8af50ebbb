#pragma once

// Tidy tables written as CSV or JSON.
//
// Doubles are printed in shortest round-trip form, so re-reading a file gives
// bit-identical values. Non-finite doubles are spelled "inf", "-inf" and
// "nan" in both formats (JSON has no literal for them). Missing values, such
// as coverage of an empty stratum, are empty CSV fields and JSON nulls.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ecp/error.hpp"

namespace ecp {

using Cell = std::variant<std::monostate, std::int64_t, double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  explicit Table(std::vector<std::string> cols = {}) : columns(std::move(cols)) {}

  void add_row(std::vector<Cell> row) {
    if (row.size() != columns.size()) {
      fail(ErrorCode::InvalidArgument, "row has " + std::to_string(row.size()) +
                                           " cells, table has " + std::to_string(columns.size()) +
                                           " columns");
    }
    rows.push_back(std::move(row));
  }

  bool operator==(const Table& other) const {
    if (columns != other.columns || rows.size() != other.rows.size()) return false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const Cell& a = rows[r][c];
        const Cell& b = other.rows[r][c];
        if (a.index() != b.index()) return false;
        if (auto* x = std::get_if<double>(&a)) {
          const double y = std::get<double>(b);
          if (!(*x == y || (std::isnan(*x) && std::isnan(y)))) return false;
        } else if (a != b) {
          return false;
        }
      }
    }
    return true;
  }
};

inline Cell optional_cell(const std::optional<double>& v) {
  return v ? Cell(*v) : Cell(std::monostate{});
}

enum class ReportFormat { Csv, Json };

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), res.ptr);
  // Keep a decimal marker so the value reads back as a double.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

inline std::optional<double> parse_special_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::nullopt;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string render_cell_csv(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "";
        else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(v);
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else return csv_escape(v);
      },
      cell);
}

inline nlohmann::json cell_to_json(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, std::int64_t>) return v;
        else if constexpr (std::is_same_v<T, double>) {
          if (std::isfinite(v)) return v;
          return format_double(v);
        } else return v;
      },
      cell);
}

}  // namespace detail

inline std::string render_csv(const Table& t) {
  std::ostringstream out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    out << (c ? "," : "") << detail::csv_escape(t.columns[c]);
  }
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c ? "," : "") << detail::render_cell_csv(row[c]);
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& cell : row) r.push_back(detail::cell_to_json(cell));
    rows.push_back(std::move(r));
  }
  return {{"columns", t.columns}, {"rows", std::move(rows)}};
}

// Non-finite doubles come back as doubles only for the reserved spellings.
inline Table table_from_json(const nlohmann::json& j) {
  Table t(j.at("columns").get<std::vector<std::string>>());
  for (const auto& r : j.at("rows")) {
    std::vector<Cell> row;
    for (const auto& v : r) {
      if (v.is_null()) row.emplace_back(std::monostate{});
      else if (v.is_number_integer()) row.emplace_back(v.get<std::int64_t>());
      else if (v.is_number_float()) row.emplace_back(v.get<double>());
      else if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (auto d = detail::parse_special_double(s)) row.emplace_back(*d);
        else row.emplace_back(s);
      } else {
        fail(ErrorCode::MalformedFile, "unsupported JSON cell");
      }
    }
    t.add_row(std::move(row));
  }
  return t;
}

inline void save_report(const Table& table, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  if (format == ReportFormat::Csv) {
    out << render_csv(table);
  } else {
    out << to_json(table).dump(2) << '\n';
  }
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline Table load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return table_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

// CSV cells carry no type tags; they are inferred: empty -> missing, plain
// integer -> int64, decimal/exponent or inf/nan -> double, else string.
inline Table load_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());

  auto split_line = [](const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') fields.back() += '"', ++i;
        else if (c == '"') quoted = false;
        else fields.back() += c;
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.emplace_back();
      } else if (c != '\r') {
        fields.back() += c;
      }
    }
    return fields;
  };

  auto infer = [](const std::string& s) -> Cell {
    if (s.empty()) return std::monostate{};
    if (auto d = detail::parse_special_double(s)) return *d;
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (ec == std::errc() && p == s.data() + s.size()) return i;
    double d = 0.0;
    auto [q, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec2 == std::errc() && q == s.data() + s.size()) return d;
    return s;
  };

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedFile, path.string() + ": missing header");
  Table t(split_line(line));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<Cell> row;
    for (const auto& f : split_line(line)) row.push_back(infer(f));
    if (row.size() != t.columns.size()) fail(ErrorCode::MalformedFile, path.string() + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace ecp
