#pragma once

// Evaluation of prediction sets: marginal coverage, set size, size- and
// difficulty-stratified coverage, size-stratified coverage violation (SSCV)
// and the size-adaptivity trade-off (SAT).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecp/conformal.hpp"
#include "ecp/dataset.hpp"
#include "ecp/error.hpp"
#include "ecp/scores.hpp"

namespace ecp {

struct Interval {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;

  bool contains(std::uint32_t v) const noexcept { return lo <= v && v <= hi; }
  std::string label() const {
    return lo == hi ? std::to_string(lo) : std::to_string(lo) + " to " + std::to_string(hi);
  }
  bool operator==(const Interval&) const = default;
};

// Sorted, disjoint, inclusive integer intervals.
class Bins {
 public:
  Bins() = default;
  explicit Bins(std::vector<Interval> ranges) : ranges_(std::move(ranges)) {
    if (ranges_.empty()) fail(ErrorCode::InvalidArgument, "no bins");
    for (std::size_t i = 0; i < ranges_.size(); ++i) {
      if (ranges_[i].lo > ranges_[i].hi) fail(ErrorCode::InvalidArgument, "bin with lo > hi");
      if (i && ranges_[i].lo <= ranges_[i - 1].hi) {
        fail(ErrorCode::InvalidArgument, "bins must be sorted and disjoint");
      }
    }
  }

  const std::vector<Interval>& ranges() const noexcept { return ranges_; }
  std::size_t size() const noexcept { return ranges_.size(); }

  std::optional<std::size_t> find(std::uint32_t v) const noexcept {
    auto it = std::upper_bound(ranges_.begin(), ranges_.end(), v,
                               [](std::uint32_t x, const Interval& r) { return x < r.lo; });
    if (it == ranges_.begin()) return std::nullopt;
    --it;
    if (!it->contains(v)) return std::nullopt;
    return static_cast<std::size_t>(it - ranges_.begin());
  }

  bool covers(std::uint32_t lo, std::uint32_t hi) const noexcept {
    std::uint32_t next = lo;
    for (const auto& r : ranges_) {
      if (r.hi < next) continue;
      if (r.lo > next) return false;
      if (r.hi >= hi) return true;
      next = r.hi + 1;
    }
    return false;
  }

  // Drops intervals past `upper`, clips the last one to it, and stretches the
  // last one up to it when the list stops short.
  Bins clipped(std::uint32_t upper) const {
    std::vector<Interval> out;
    for (auto r : ranges_) {
      if (r.lo > upper) break;
      r.hi = std::min(r.hi, upper);
      out.push_back(r);
    }
    if (out.empty()) fail(ErrorCode::InvalidArgument, "no bin below the upper bound");
    out.back().hi = upper;
    return Bins(std::move(out));
  }

 private:
  std::vector<Interval> ranges_;
};

// "0-1,2-3,4-6" -> {[0,1],[2,3],[4,6]}; a lone number is a one-value bin.
inline Bins parse_bins(std::string_view text) {
  std::vector<Interval> out;
  auto parse_u32 = [&](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(ErrorCode::InvalidArgument, "bad bin bound '" + std::string(s) + "'");
    }
    return v;
  };
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = text.substr(0, comma);
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      const auto v = parse_u32(item);
      out.push_back({v, v});
    } else {
      out.push_back({parse_u32(item.substr(0, dash)), parse_u32(item.substr(dash + 1))});
    }
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return Bins(std::move(out));
}

// Set-size strata used for the size-stratified coverage table.
inline Bins standard_size_bins(std::size_t num_classes) {
  return Bins({{0, 1}, {2, 3}, {4, 6}, {7, 10}, {11, 100}, {101, 1000}})
      .clipped(static_cast<std::uint32_t>(num_classes));
}

// Set-size strata used for SSCV and SAT.
inline Bins sscv_size_bins(std::size_t num_classes) {
  return Bins({{0, 1}, {2, 3}, {4, 10}, {11, 100}, {101, 1000}})
      .clipped(static_cast<std::uint32_t>(num_classes));
}

// Difficulty strata, 1-indexed: "1" is the top-ranked true label.
inline Bins standard_difficulty_bins(std::size_t num_classes) {
  return Bins({{1, 1}, {2, 3}, {4, 6}, {7, 10}, {11, 100}, {101, 1000}})
      .clipped(static_cast<std::uint32_t>(num_classes));
}

struct BinStat {
  Interval range;
  std::size_t count = 0;
  std::optional<double> coverage;   // empty for unpopulated bins
  std::optional<double> mean_size;  // empty for unpopulated bins
};

struct StratifiedReport {
  std::vector<BinStat> bins;

  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    return n;
  }
};

inline double marginal_coverage(const PredictionSetBatch& batch) {
  if (batch.size() == 0) fail(ErrorCode::InvalidArgument, "empty batch");
  std::size_t covered = 0;
  for (auto h : batch.hits) covered += h;
  return static_cast<double>(covered) / static_cast<double>(batch.size());
}

// skip_empty averages over non-empty sets only.
inline double mean_set_size(const PredictionSetBatch& batch, bool skip_empty) {
  std::size_t total = 0, counted = 0;
  for (auto s : batch.sizes) {
    if (skip_empty && s == 0) continue;
    total += s;
    ++counted;
  }
  if (counted == 0) {
    fail(skip_empty ? ErrorCode::AllSetsEmpty : ErrorCode::InvalidArgument, "no sets to average");
  }
  return static_cast<double>(total) / static_cast<double>(counted);
}

namespace detail {

inline StratifiedReport stratify(const PredictionSetBatch& batch, const Bins& bins,
                                 std::span<const std::uint32_t> keys, std::uint32_t key_offset,
                                 const char* what) {
  StratifiedReport rep;
  std::vector<std::size_t> hits(bins.size()), size_sum(bins.size());
  for (const auto& r : bins.ranges()) rep.bins.push_back({r, 0, std::nullopt, std::nullopt});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto key = keys[i] + key_offset;
    const auto b = bins.find(key);
    if (!b) fail(ErrorCode::UncoveredSize, std::string(what) + " " + std::to_string(key) + " not in any bin");
    ++rep.bins[*b].count;
    hits[*b] += batch.hits[i];
    size_sum[*b] += batch.sizes[i];
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const auto c = rep.bins[b].count;
    if (c == 0) continue;
    rep.bins[b].coverage = static_cast<double>(hits[b]) / static_cast<double>(c);
    rep.bins[b].mean_size = static_cast<double>(size_sum[b]) / static_cast<double>(c);
  }
  return rep;
}

}  // namespace detail

inline StratifiedReport size_stratified(const PredictionSetBatch& batch, const Bins& bins) {
  return detail::stratify(batch, bins, batch.sizes, 0, "set size");
}

// Bins are 1-indexed difficulty levels (true-label rank + 1).
inline StratifiedReport difficulty_stratified(const PredictionSetBatch& batch, const Bins& bins) {
  return detail::stratify(batch, bins, batch.difficulty, 1, "difficulty");
}

// Largest |coverage - (1 - delta)| over populated size strata.
inline double sscv(const PredictionSetBatch& batch, const Bins& bins, double delta) {
  validate_delta(delta);
  const auto rep = size_stratified(batch, bins);
  std::optional<double> worst;
  for (const auto& b : rep.bins) {
    if (!b.coverage) continue;
    const double v = std::abs(*b.coverage - (1.0 - delta));
    worst = worst ? std::max(*worst, v) : v;
  }
  if (!worst) fail(ErrorCode::AllBinsEmpty, "every size stratum is empty");
  return *worst;
}

inline double sat_from(double sscv_value, double mean_nonempty_size) {
  return (1.0 - sscv_value) / mean_nonempty_size;
}

// (1 - SSCV) / mean size of the non-empty sets.
inline double sat(const PredictionSetBatch& batch, const Bins& bins, double delta) {
  const double mu = mean_set_size(batch, true);
  return sat_from(sscv(batch, bins, delta), mu);
}

// Per-trial means reduce to one figure by taking their median.
inline double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

// ---------------------------------------------------------------------------
// RAPS lambda selection by minimum SSCV

struct LambdaEvaluation {
  double lambda = 0.0;
  double q_hat = 0.0;
  double coverage = 0.0;
  double mean_size = 0.0;
  double sscv = 0.0;
  std::optional<double> sat;
};

struct LambdaSearchResult {
  double best_lambda = 0.0;
  Temperature temperature;
  std::vector<LambdaEvaluation> evaluations;  // in grid order
};

// For each lambda: RAPS scores from temperature-scaled probabilities, q_hat
// from the calibration rows, SSCV on the validation rows. The temperature is
// fit once on the calibration rows. Ties go to the smaller lambda.
inline LambdaSearchResult raps_lambda_search(const LogitDataset& data, const SplitIndices& split,
                                             std::span<const double> grid, std::uint32_t k_reg,
                                             double delta, const Bins& bins,
                                             const Randomization& rnd = {}) {
  if (grid.empty()) fail(ErrorCode::InvalidArgument, "empty lambda grid");
  const LogitDataset cal = data.subset(split.calibration);
  const LogitDataset val = data.subset(split.validation);

  LambdaSearchResult result;
  result.temperature = fit_temperature(cal);
  const Matrix probs = softmax_probabilities(data, result.temperature);

  std::optional<double> best_sscv;
  for (double lambda : grid) {
    const ScoreMatrix all = raps_scores(probs, RapsParams{k_reg, lambda}, rnd);
    const auto cal_scores = all.select(split.calibration).at_labels(cal.labels());
    const auto calib = calibrate(cal_scores, delta, Method::Raps, result.temperature);
    const auto batch = build_sets(all.select(split.validation), calib.q_hat, val.labels());

    LambdaEvaluation ev;
    ev.lambda = lambda;
    ev.q_hat = calib.q_hat;
    ev.coverage = marginal_coverage(batch);
    ev.mean_size = mean_set_size(batch, false);
    ev.sscv = sscv(batch, bins, delta);
    if (std::any_of(batch.sizes.begin(), batch.sizes.end(), [](auto s) { return s > 0; })) {
      ev.sat = sat_from(ev.sscv, mean_set_size(batch, true));
    }
    if (!best_sscv || ev.sscv < *best_sscv ||
        (ev.sscv == *best_sscv && lambda < result.best_lambda)) {
      best_sscv = ev.sscv;
      result.best_lambda = lambda;
    }
    result.evaluations.push_back(ev);
  }
  return result;
}

}  // namespace ecp
