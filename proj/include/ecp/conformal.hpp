#pragma once

// Split-conformal calibration, prediction-set construction, and the
// reliability of the resulting coverage for a fixed holdout set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ecp/error.hpp"
#include "ecp/scores.hpp"

namespace ecp {

// l = floor((n + 1) * delta). Products within 1e-9 (relative) of an integer
// snap to it so that e.g. 20 * 0.05 counts as exactly 1.
inline std::size_t miscoverage_count(std::size_t n, double delta) {
  const double x = static_cast<double>(n + 1) * delta;
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::floor(x));
}

inline void validate_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) fail(ErrorCode::InvalidArgument, "delta must lie in (0, 1)");
}

struct BetaParams {
  double a = 1.0;
  double b = 1.0;

  double mean() const noexcept { return a / (a + b); }
  double variance() const noexcept { return a * b / ((a + b) * (a + b) * (a + b + 1.0)); }
};

// Law of the coverage obtained with a fixed holdout set of size n:
// Beta(n + 1 - l, l).
inline BetaParams coverage_distribution(std::size_t n, double delta) {
  validate_delta(delta);
  if (n == 0) fail(ErrorCode::EmptyHoldout, "holdout set is empty");
  const std::size_t l = miscoverage_count(n, delta);
  if (l == 0) {
    fail(ErrorCode::DegenerateBeta, "(n+1)*delta < 1 for n=" + std::to_string(n));
  }
  return {static_cast<double>(n + 1 - l), static_cast<double>(l)};
}

struct CoverageReliability {
  double gamma = 0.0;  // confidence in coverage
  double u_c = 0.0;    // uncertainty in coverage
};

// Reads the Beta(n+1-l, l) coverage law as a two-label Dirichlet: evidence
// for covering is n - l, strength is n + 1, so gamma = (n - l)/(n + 1) and
// the uncertainty is 2/(n + 1).
inline CoverageReliability coverage_reliability(std::size_t n, double delta) {
  validate_delta(delta);
  if (n == 0) fail(ErrorCode::EmptyHoldout, "holdout set is empty");
  const std::size_t l = miscoverage_count(n, delta);
  const double strength = static_cast<double>(n + 1);
  const double cover_evidence = static_cast<double>(n) - static_cast<double>(l);
  return {cover_evidence / strength, 2.0 / strength};
}

struct CalibrationResult {
  double q_hat = std::numeric_limits<double>::infinity();
  std::size_t n = 0;
  double delta = 0.1;
  Method method = Method::Ecp;
  Temperature temperature;
  double gamma = 0.0;
  double u_c = 0.0;
  // ceil((n+1)(1-delta)); exceeds n when q_hat is the +inf sentinel.
  std::size_t quantile_rank = 0;
};

// q_hat is the ceil((n+1)(1-delta))-th smallest holdout score, or +inf when
// that rank exceeds n.
inline CalibrationResult calibrate(std::span<const double> holdout_scores, double delta,
                                   Method method = Method::Ecp, Temperature t = Temperature()) {
  validate_delta(delta);
  const std::size_t n = holdout_scores.size();
  if (n == 0) fail(ErrorCode::EmptyHoldout, "holdout set is empty");
  for (double s : holdout_scores) {
    if (std::isnan(s)) fail(ErrorCode::NonFiniteInput, "NaN holdout score");
  }

  CalibrationResult r;
  r.n = n;
  r.delta = delta;
  r.method = method;
  r.temperature = t;
  r.quantile_rank = n + 1 - miscoverage_count(n, delta);
  if (r.quantile_rank <= n) {
    std::vector<double> sorted(holdout_scores.begin(), holdout_scores.end());
    auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(r.quantile_rank - 1);
    std::nth_element(sorted.begin(), nth, sorted.end());
    r.q_hat = *nth;
  }
  const auto rel = coverage_reliability(n, delta);
  r.gamma = rel.gamma;
  r.u_c = rel.u_c;
  return r;
}

struct PredictionSetBatch {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::uint32_t>> sets;  // sorted label lists
  std::vector<std::uint32_t> sizes;
  std::vector<std::uint8_t> hits;
  std::vector<std::uint32_t> difficulty;  // 0-indexed rank of the true label

  std::size_t size() const noexcept { return sets.size(); }
};

// Cumulative mass within this distance of the Base threshold counts as
// reaching it, absorbing summation round-off.
inline constexpr double kBaseMassTolerance = 1e-12;

// Non-Base methods keep every label with score <= threshold (q_hat). Base
// adds labels in descending-probability order until the cumulative
// probability reaches the threshold (1 - delta).
inline std::vector<std::vector<std::uint32_t>> predict_sets(const ScoreMatrix& scores,
                                                           double threshold) {
  const std::size_t K = scores.cols();
  std::vector<std::vector<std::uint32_t>> sets(scores.rows());
  std::vector<std::uint32_t> order(K);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto s = scores.scores(i);
    auto& set = sets[i];
    if (scores.method() == Method::Base) {
      const auto r = scores.ranks(i);
      for (std::uint32_t k = 0; k < K; ++k) order[r[k]] = k;
      for (std::uint32_t label : order) {
        set.push_back(label);
        if (s[label] >= threshold - kBaseMassTolerance) break;
      }
      std::sort(set.begin(), set.end());
    } else {
      for (std::uint32_t k = 0; k < K; ++k) {
        if (s[k] <= threshold) set.push_back(k);
      }
    }
  }
  return sets;
}

inline PredictionSetBatch build_sets(const ScoreMatrix& scores, double threshold,
                                     std::span<const std::uint32_t> labels) {
  if (labels.size() != scores.rows()) {
    fail(ErrorCode::InvalidArgument, "label count does not match score rows");
  }
  PredictionSetBatch out;
  out.num_classes = scores.cols();
  out.sets = predict_sets(scores, threshold);
  out.sizes.resize(scores.rows());
  out.hits.resize(scores.rows());
  out.difficulty.resize(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto& set = out.sets[i];
    out.sizes[i] = static_cast<std::uint32_t>(set.size());
    out.hits[i] = std::binary_search(set.begin(), set.end(), labels[i]);
    out.difficulty[i] = scores.ranks(i)[labels[i]];
  }
  return out;
}

}  // namespace ecp
