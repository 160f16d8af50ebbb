#pragma once

// Logit/label datasets, their on-disk formats, and the random split protocol.
//
// Binary logits (little-endian): "CPLT", u32 version=1, u64 N, u32 K, then
// N*K float32 row-major. Binary labels: "CPLB", u32 version=1, u64 N, u32 K,
// then N u32. CSV logits hold one example per line with K values separated
// by commas and/or whitespace; CSV labels hold one integer per line.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ecp/detail/counter_rng.hpp"
#include "ecp/error.hpp"

namespace ecp {

enum class FileFormat { Binary, Csv };

inline FileFormat parse_file_format(std::string_view name) {
  if (name == "binary" || name == "bin") return FileFormat::Binary;
  if (name == "csv") return FileFormat::Csv;
  fail(ErrorCode::InvalidArgument, "unknown file format '" + std::string(name) + "'");
}

// N x K raw logits plus one label per row. Immutable once constructed.
class LogitDataset {
 public:
  LogitDataset(std::vector<double> logits, std::vector<std::uint32_t> labels,
               std::size_t num_classes)
      : logits_(std::move(logits)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (num_classes_ < 2) fail(ErrorCode::InvalidArgument, "need at least two classes");
    if (labels_.empty()) fail(ErrorCode::InvalidArgument, "dataset has no examples");
    if (logits_.size() != labels_.size() * num_classes_) {
      fail(ErrorCode::InvalidArgument, "logit count " + std::to_string(logits_.size()) +
                                           " does not match N*K = " +
                                           std::to_string(labels_.size() * num_classes_));
    }
    for (std::size_t i = 0; i < logits_.size(); ++i) {
      if (!std::isfinite(logits_[i])) {
        fail(ErrorCode::NonFiniteLogit, "row " + std::to_string(i / num_classes_) + ", column " +
                                            std::to_string(i % num_classes_));
      }
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] >= num_classes_) {
        fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels_[i]) + " at row " +
                                             std::to_string(i) + " with K=" +
                                             std::to_string(num_classes_));
      }
    }
  }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::span<const double> row(std::size_t i) const noexcept {
    return {logits_.data() + i * num_classes_, num_classes_};
  }
  std::uint32_t label(std::size_t i) const noexcept { return labels_[i]; }

  std::span<const double> logits() const noexcept { return logits_; }
  std::span<const std::uint32_t> labels() const noexcept { return labels_; }

  LogitDataset subset(std::span<const std::size_t> indices) const {
    std::vector<double> logits;
    std::vector<std::uint32_t> labels;
    logits.reserve(indices.size() * num_classes_);
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
      auto r = row(i);
      logits.insert(logits.end(), r.begin(), r.end());
      labels.push_back(labels_[i]);
    }
    return LogitDataset(std::move(logits), std::move(labels), num_classes_);
  }

  // Fraction of rows whose argmax logit (lowest index on ties) is the label.
  double top1_accuracy() const noexcept {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      auto r = row(i);
      auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      hits += best == labels_[i];
    }
    return static_cast<double>(hits) / static_cast<double>(size());
  }

 private:
  std::vector<double> logits_;
  std::vector<std::uint32_t> labels_;
  std::size_t num_classes_;
};

struct SplitSpec {
  double calibration_fraction = 0.3;
  std::uint64_t seed = 0;
  std::uint64_t trial_index = 0;
};

struct SplitIndices {
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> validation;
};

// floor(N*f + 0.5)
inline std::size_t calibration_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 0.5));
}

// Uniformly random partition of 0..n-1. The permutation is a Fisher-Yates
// shuffle driven by a counter-based stream keyed on (seed, trial_index), so
// any trial can be regenerated in isolation.
inline SplitIndices split(std::size_t n, const SplitSpec& spec) {
  if (!(spec.calibration_fraction > 0.0 && spec.calibration_fraction < 1.0)) {
    fail(ErrorCode::InvalidArgument, "calibration fraction must lie strictly in (0, 1)");
  }
  const std::size_t n_cal = calibration_size(n, spec.calibration_fraction);
  if (n_cal < 1 || n_cal >= n) {
    fail(ErrorCode::DegenerateSplit, "N=" + std::to_string(n) + " with fraction " +
                                         std::to_string(spec.calibration_fraction) +
                                         " leaves an empty side");
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const detail::CounterRng rng(spec.seed, spec.trial_index);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.below(i, i + 1)]);
  }

  SplitIndices out;
  out.calibration.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_cal));
  out.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_cal), perm.end());
  std::sort(out.calibration.begin(), out.calibration.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

inline SplitIndices split(const LogitDataset& dataset, const SplitSpec& spec) {
  return split(dataset.size(), spec);
}

namespace detail {

inline constexpr std::array<char, 4> kLogitMagic{'C', 'P', 'L', 'T'};
inline constexpr std::array<char, 4> kLabelMagic{'C', 'P', 'L', 'B'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

template <typename U>
void put_le(std::vector<unsigned char>& buf, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    buf.push_back(static_cast<unsigned char>((value >> (8 * b)) & 0xFF));
  }
}

template <typename U>
U get_le(std::span<const unsigned char> bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    value |= static_cast<U>(bytes[offset + b]) << (8 * b);
  }
  return value;
}

struct BinaryHeader {
  std::uint64_t rows;
  std::uint32_t cols;
};

inline BinaryHeader parse_header(std::span<const unsigned char> bytes,
                                 const std::array<char, 4>& magic, const std::string& what) {
  if (bytes.size() < kHeaderBytes) fail(ErrorCode::MalformedFile, what + ": truncated header");
  if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    fail(ErrorCode::MalformedFile, what + ": bad magic");
  }
  if (get_le<std::uint32_t>(bytes, 4) != kFormatVersion) {
    fail(ErrorCode::MalformedFile, what + ": unsupported version");
  }
  BinaryHeader h{get_le<std::uint64_t>(bytes, 8), get_le<std::uint32_t>(bytes, 16)};
  if (h.rows == 0) fail(ErrorCode::MalformedFile, what + ": N = 0");
  if (h.cols < 2) fail(ErrorCode::MalformedFile, what + ": K < 2");
  return h;
}

inline void put_header(std::vector<unsigned char>& buf, const std::array<char, 4>& magic,
                       std::uint64_t rows, std::uint32_t cols) {
  buf.insert(buf.end(), magic.begin(), magic.end());
  put_le<std::uint32_t>(buf, kFormatVersion);
  put_le<std::uint64_t>(buf, rows);
  put_le<std::uint32_t>(buf, cols);
}

// Splits a line on commas and whitespace, dropping empty fields.
inline std::vector<std::string_view> csv_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_sep(line[j])) ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

inline bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

struct LogitMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

struct LabelVector {
  std::size_t num_classes = 0;  // 0 when the format does not record K (CSV)
  std::vector<std::uint32_t> values;
};

inline LogitMatrix read_logits_binary(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  const auto h = detail::parse_header(bytes, detail::kLogitMagic, path.string());
  const std::uint64_t expected = detail::kHeaderBytes + 4ULL * h.rows * h.cols;
  if (bytes.size() != expected) {
    fail(ErrorCode::MalformedFile, path.string() + ": expected " + std::to_string(expected) +
                                       " bytes, found " + std::to_string(bytes.size()));
  }
  LogitMatrix m{static_cast<std::size_t>(h.rows), h.cols, {}};
  m.values.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const auto raw = detail::get_le<std::uint32_t>(bytes, detail::kHeaderBytes + 4 * i);
    m.values[i] = static_cast<double>(std::bit_cast<float>(raw));
  }
  return m;
}

inline LabelVector read_labels_binary(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  const auto h = detail::parse_header(bytes, detail::kLabelMagic, path.string());
  const std::uint64_t expected = detail::kHeaderBytes + 4ULL * h.rows;
  if (bytes.size() != expected) {
    fail(ErrorCode::MalformedFile, path.string() + ": expected " + std::to_string(expected) +
                                       " bytes, found " + std::to_string(bytes.size()));
  }
  LabelVector v{h.cols, {}};
  v.values.resize(static_cast<std::size_t>(h.rows));
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    v.values[i] = detail::get_le<std::uint32_t>(bytes, detail::kHeaderBytes + 4 * i);
  }
  return v;
}

inline LogitMatrix read_logits_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  LogitMatrix m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    const auto fields = detail::csv_fields(line);
    if (m.rows == 0) {
      m.cols = fields.size();
    } else if (fields.size() != m.cols) {
      fail(ErrorCode::MalformedFile, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(m.cols) + " values, found " +
                                         std::to_string(fields.size()));
    }
    for (auto f : fields) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        fail(ErrorCode::MalformedFile,
             path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(f) + "'");
      }
      if (!std::isfinite(v)) {
        fail(ErrorCode::NonFiniteLogit, path.string() + ":" + std::to_string(line_no));
      }
      m.values.push_back(v);
    }
    ++m.rows;
  }
  if (m.rows == 0) fail(ErrorCode::MalformedFile, path.string() + ": no rows");
  if (m.cols < 2) fail(ErrorCode::MalformedFile, path.string() + ": K < 2");
  return m;
}

inline LabelVector read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  LabelVector v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    const auto fields = detail::csv_fields(line);
    if (fields.size() != 1) {
      fail(ErrorCode::MalformedFile, path.string() + ":" + std::to_string(line_no) +
                                         ": expected one label per line");
    }
    long long label = 0;
    const auto f = fields.front();
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      fail(ErrorCode::MalformedFile,
           path.string() + ":" + std::to_string(line_no) + ": bad label '" + std::string(f) + "'");
    }
    if (label < 0 || label > static_cast<long long>(UINT32_MAX)) {
      fail(ErrorCode::LabelOutOfRange, path.string() + ":" + std::to_string(line_no));
    }
    v.values.push_back(static_cast<std::uint32_t>(label));
  }
  if (v.values.empty()) fail(ErrorCode::MalformedFile, path.string() + ": no labels");
  return v;
}

// Reads and cross-validates a logit file and its label file.
inline LogitDataset load_logits(const std::filesystem::path& logits_path,
                                const std::filesystem::path& labels_path, FileFormat format) {
  LogitMatrix m = format == FileFormat::Binary ? read_logits_binary(logits_path)
                                               : read_logits_csv(logits_path);
  LabelVector l = format == FileFormat::Binary ? read_labels_binary(labels_path)
                                               : read_labels_csv(labels_path);
  if (l.values.size() != m.rows) {
    fail(ErrorCode::MalformedFile, "logit rows (" + std::to_string(m.rows) +
                                       ") and label count (" + std::to_string(l.values.size()) +
                                       ") differ");
  }
  if (l.num_classes != 0 && l.num_classes != m.cols) {
    fail(ErrorCode::MalformedFile, "label file K=" + std::to_string(l.num_classes) +
                                       " but logit file K=" + std::to_string(m.cols));
  }
  return LogitDataset(std::move(m.values), std::move(l.values), m.cols);
}

inline std::vector<unsigned char> encode_logits_binary(const LogitDataset& d) {
  std::vector<unsigned char> buf;
  buf.reserve(detail::kHeaderBytes + 4 * d.logits().size());
  detail::put_header(buf, detail::kLogitMagic, d.size(), static_cast<std::uint32_t>(d.num_classes()));
  for (double v : d.logits()) {
    detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return buf;
}

inline std::vector<unsigned char> encode_labels_binary(const LogitDataset& d) {
  std::vector<unsigned char> buf;
  buf.reserve(detail::kHeaderBytes + 4 * d.size());
  detail::put_header(buf, detail::kLabelMagic, d.size(), static_cast<std::uint32_t>(d.num_classes()));
  for (std::uint32_t label : d.labels()) detail::put_le<std::uint32_t>(buf, label);
  return buf;
}

// Binary output stores float32; CSV output prints each double with enough
// digits to round-trip.
inline void save_logits(const LogitDataset& d, const std::filesystem::path& logits_path,
                        const std::filesystem::path& labels_path, FileFormat format) {
  if (format == FileFormat::Binary) {
    detail::write_all(logits_path, encode_logits_binary(d));
    detail::write_all(labels_path, encode_labels_binary(d));
    return;
  }
  std::ofstream logits(logits_path, std::ios::trunc);
  std::ofstream labels(labels_path, std::ios::trunc);
  if (!logits || !labels) fail(ErrorCode::IoFailure, "cannot open CSV outputs for writing");
  std::array<char, 32> buf{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = d.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), r[k]);
      if (k) logits << ',';
      logits.write(buf.data(), res.ptr - buf.data());
    }
    logits << '\n';
    labels << d.label(i) << '\n';
  }
  if (!logits || !labels) fail(ErrorCode::IoFailure, "CSV write failed");
}

}  // namespace ecp
