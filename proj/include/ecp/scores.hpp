#pragma once

// Non-conformity scores for ECP and the softmax baselines (Base, APS, RAPS,
// LAS), plus temperature scaling. Lower scores mean a better fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecp/dataset.hpp"
#include "ecp/detail/counter_rng.hpp"
#include "ecp/error.hpp"
#include "ecp/evidential.hpp"

namespace ecp {

enum class Method { Ecp, Base, Aps, Raps, Las };

inline Method parse_method(std::string_view name) {
  if (name == "ecp") return Method::Ecp;
  if (name == "base") return Method::Base;
  if (name == "aps") return Method::Aps;
  if (name == "raps") return Method::Raps;
  if (name == "las") return Method::Las;
  fail(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::Ecp: return "ecp";
    case Method::Base: return "base";
    case Method::Aps: return "aps";
    case Method::Raps: return "raps";
    case Method::Las: return "las";
  }
  return "ecp";
}

struct RapsParams {
  std::uint32_t k_reg = 5;
  double lambda = 0.1;

  void validate(std::size_t num_classes) const {
    if (k_reg > num_classes) fail(ErrorCode::InvalidArgument, "k_reg exceeds K");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  }
};

class Temperature {
 public:
  constexpr Temperature() = default;
  explicit Temperature(double value) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      fail(ErrorCode::InvalidArgument, "temperature must be positive and finite");
    }
  }
  constexpr double value() const noexcept { return value_; }

 private:
  double value_ = 1.0;
};

// Seeded per-(row, label) uniforms for the randomized APS/RAPS variant.
struct Randomization {
  bool enabled = false;
  std::uint64_t seed = 0;
};

// Dense row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const noexcept {
    return {values.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) noexcept { return {values.data() + i * cols, cols}; }
};

class ScoreMatrix {
 public:
  ScoreMatrix(Method method, std::size_t rows, std::size_t cols)
      : method_(method), rows_(rows), cols_(cols), scores_(rows * cols), ranks_(rows * cols) {}

  Method method() const noexcept { return method_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<const double> scores(std::size_t i) const noexcept {
    return {scores_.data() + i * cols_, cols_};
  }
  std::span<double> scores(std::size_t i) noexcept { return {scores_.data() + i * cols_, cols_}; }
  std::span<const std::uint32_t> ranks(std::size_t i) const noexcept {
    return {ranks_.data() + i * cols_, cols_};
  }
  std::span<std::uint32_t> ranks(std::size_t i) noexcept {
    return {ranks_.data() + i * cols_, cols_};
  }
  double at(std::size_t i, std::size_t k) const noexcept { return scores_[i * cols_ + k]; }

  std::span<const double> all_scores() const noexcept { return scores_; }

  ScoreMatrix select(std::span<const std::size_t> indices) const {
    ScoreMatrix out(method_, indices.size(), cols_);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      std::copy_n(scores(indices[j]).begin(), cols_, out.scores(j).begin());
      std::copy_n(ranks(indices[j]).begin(), cols_, out.ranks(j).begin());
    }
    return out;
  }

  // Score of each row's true label.
  std::vector<double> at_labels(std::span<const std::uint32_t> labels) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = at(i, labels[i]);
    return out;
  }

 private:
  Method method_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> scores_;
  std::vector<std::uint32_t> ranks_;
};

// ---------------------------------------------------------------------------
// Temperature scaling

// Mean negative log-likelihood of softmax(z / T) at the true labels.
inline double softmax_nll(const LogitDataset& data, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto z = data.row(i);
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp((v - top) / temperature);
    total += std::log(sum) - (z[data.label(i)] - top) / temperature;
  }
  return total / static_cast<double>(data.size());
}

// Golden-section search of the NLL over T in [0.05, 10] until the bracket is
// narrower than 1e-4. Falls back to T = 1 if that scores better.
inline Temperature fit_temperature(const LogitDataset& calibration) {
  const auto labels = calibration.labels();
  if (std::all_of(labels.begin(), labels.end(), [&](std::uint32_t l) { return l == labels[0]; })) {
    fail(ErrorCode::DegenerateInput, "calibration labels contain a single class");
  }
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.05, hi = 10.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = softmax_nll(calibration, x1);
  double f2 = softmax_nll(calibration, x2);
  while (hi - lo >= 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = softmax_nll(calibration, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = softmax_nll(calibration, x2);
    }
  }
  const double best = 0.5 * (lo + hi);
  if (softmax_nll(calibration, 1.0) < softmax_nll(calibration, best)) return Temperature(1.0);
  return Temperature(best);
}

inline Matrix softmax_probabilities(const LogitDataset& data, Temperature t = Temperature()) {
  Matrix m{data.size(), data.num_classes(), std::vector<double>(data.logits().size())};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = softmax(data.row(i), t.value());
    std::copy(p.begin(), p.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Evidential classification cost

// rho = K / (K - r); 1 at the top rank, K at the last.
inline double rho(std::size_t num_classes, std::size_t rank) {
  if (rank >= num_classes) {
    fail(ErrorCode::RankOutOfRange,
         "rank " + std::to_string(rank) + " with K=" + std::to_string(num_classes));
  }
  return static_cast<double>(num_classes) / static_cast<double>(num_classes - rank);
}

namespace detail {

inline double evidential_cost(const EvidentialProfile& prof, const EvidentialConfig& config,
                              std::size_t k, std::size_t rank) {
  const std::size_t K = prof.num_classes();
  const double p = clamp_probability(prof.p[k], config.epsilon);
  const double phi = clamp_probability(prof.utility[k], config.epsilon);
  const double pi = config.base_rate(k, K);
  return -(pi * std::log(p)) / (phi * p * p * static_cast<double>(K - rank));
}

}  // namespace detail

// Rank used by the cost: the number of labels with strictly larger p. Labels
// tied in p share the position of the first of them, so equally probable
// labels cost the same. Equals prof.ranks[k] when there are no ties.
inline std::size_t cost_rank(const EvidentialProfile& prof, std::size_t k) {
  std::size_t r = 0;
  for (double q : prof.p) r += q > prof.p[k];
  return r;
}

// Label evidential cost: -pi_k ln p_k / (phi_k p_k^2 (K - r_k)). Both p and
// phi are clamped to [epsilon, 1]; the same clamped p feeds the log and p^2.
inline double label_evidential_cost(const EvidentialProfile& prof, const EvidentialConfig& config,
                                    std::size_t k) {
  return detail::evidential_cost(prof, config, k, cost_rank(prof, k));
}

// C_k = K u Chat_k, which equals rho(k) I_U(k) / Phi(k).
inline std::vector<double> ecc(const EvidentialProfile& prof, const EvidentialConfig& config) {
  const std::size_t K = prof.num_classes();
  std::vector<std::size_t> order(K);
  for (std::size_t k = 0; k < K; ++k) order[prof.ranks[k]] = k;
  const double scale = static_cast<double>(K) * prof.u;
  std::vector<double> cost(K);
  std::size_t shared = 0;
  for (std::size_t pos = 0; pos < K; ++pos) {
    const std::size_t k = order[pos];
    if (pos == 0 || prof.p[k] != prof.p[order[pos - 1]]) shared = pos;
    cost[k] = scale * detail::evidential_cost(prof, config, k, shared);
  }
  return cost;
}

// Each row's costs divided by the row maximum, so the worst label scores 1.
inline ScoreMatrix ecp_scores(const LogitDataset& data, const EvidentialConfig& config,
                              Temperature t = Temperature()) {
  config.validate(data.num_classes());
  ScoreMatrix out(Method::Ecp, data.size(), data.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto prof = profile(data.row(i), config, t.value());
    const auto cost = ecc(prof, config);
    const double top = *std::max_element(cost.begin(), cost.end());
    auto s = out.scores(i);
    for (std::size_t k = 0; k < cost.size(); ++k) s[k] = cost[k] / top;
    std::copy(prof.ranks.begin(), prof.ranks.end(), out.ranks(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax baselines

namespace detail {

// Cumulative mass of labels ranked strictly above each label, plus the label's
// own probability (scaled by a seeded uniform draw when randomized).
inline void cumulative_scores(const Matrix& probs, ScoreMatrix& out, const Randomization& rnd) {
  std::vector<std::uint32_t> order(probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto p = probs.row(i);
    const auto ranks = descending_ranks(p);
    std::copy(ranks.begin(), ranks.end(), out.ranks(i).begin());
    for (std::uint32_t k = 0; k < ranks.size(); ++k) order[ranks[k]] = k;

    const detail::CounterRng rng(rnd.seed, i);
    auto s = out.scores(i);
    double before = 0.0;
    for (std::uint32_t label : order) {
      const double own = rnd.enabled ? rng.uniform(label) * p[label] : p[label];
      s[label] = before + own;
      before += p[label];
    }
  }
}

}  // namespace detail

// Cumulative descending-sorted probability up to and including each label.
inline ScoreMatrix base_scores(const Matrix& probs) {
  ScoreMatrix out(Method::Base, probs.rows, probs.cols);
  detail::cumulative_scores(probs, out, Randomization{});
  return out;
}

inline ScoreMatrix aps_scores(const Matrix& probs, const Randomization& rnd = {}) {
  ScoreMatrix out(Method::Aps, probs.rows, probs.cols);
  detail::cumulative_scores(probs, out, rnd);
  return out;
}

// APS plus lambda * max(0, (rank + 1) - k_reg): the top k_reg labels are free.
inline ScoreMatrix raps_scores(const Matrix& probs, const RapsParams& params,
                               const Randomization& rnd = {}) {
  params.validate(probs.cols);
  ScoreMatrix out(Method::Raps, probs.rows, probs.cols);
  detail::cumulative_scores(probs, out, rnd);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    auto s = out.scores(i);
    const auto r = out.ranks(i);
    for (std::size_t k = 0; k < probs.cols; ++k) {
      const double excess = static_cast<double>(r[k] + 1) - static_cast<double>(params.k_reg);
      s[k] += params.lambda * std::max(0.0, excess);
    }
  }
  return out;
}

// 1 - p_k
inline ScoreMatrix las_scores(const Matrix& probs) {
  ScoreMatrix out(Method::Las, probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto p = probs.row(i);
    const auto ranks = descending_ranks(p);
    std::copy(ranks.begin(), ranks.end(), out.ranks(i).begin());
    auto s = out.scores(i);
    for (std::size_t k = 0; k < p.size(); ++k) s[k] = 1.0 - p[k];
  }
  return out;
}

struct ScoringOptions {
  EvidentialConfig evidential;
  RapsParams raps;
  Temperature temperature;
  Randomization randomization;
};

inline ScoreMatrix compute_scores(Method method, const LogitDataset& data,
                                  const ScoringOptions& opts) {
  if (method == Method::Ecp) return ecp_scores(data, opts.evidential, opts.temperature);
  const Matrix probs = softmax_probabilities(data, opts.temperature);
  switch (method) {
    case Method::Base: return base_scores(probs);
    case Method::Aps: return aps_scores(probs, opts.randomization);
    case Method::Raps: return raps_scores(probs, opts.raps, opts.randomization);
    case Method::Las: return las_scores(probs);
    case Method::Ecp: break;
  }
  return ecp_scores(data, opts.evidential, opts.temperature);
}

}  // namespace ecp
