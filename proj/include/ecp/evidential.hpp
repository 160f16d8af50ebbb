#pragma once

// Evidential view of a logit vector: evidence, Dirichlet parameters,
// predictive probabilities, belief masses, uncertainty, and the per-label
// quantities built on them (focal uncertainty, surprisal, expected utility).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecp/error.hpp"

namespace ecp {

enum class Activation { Relu, Softplus, Exp };

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "softplus") return Activation::Softplus;
  if (name == "exp") return Activation::Exp;
  fail(ErrorCode::InvalidArgument, "unknown activation '" + std::string(name) + "'");
}

constexpr std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Exp: return "exp";
  }
  return "relu";
}

struct EvidentialConfig {
  Activation activation = Activation::Relu;
  // Prior probability of each label. Empty means uniform 1/K.
  std::vector<double> base_rates;
  // Lower clamp for probabilities entering a log or a denominator.
  double epsilon = 1e-12;

  double base_rate(std::size_t k, std::size_t num_classes) const noexcept {
    return base_rates.empty() ? 1.0 / static_cast<double>(num_classes) : base_rates[k];
  }

  void validate(std::size_t num_classes) const {
    if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
      fail(ErrorCode::InvalidArgument, "epsilon must lie in (0, 1e-3]");
    }
    if (base_rates.empty()) return;
    if (base_rates.size() != num_classes) {
      fail(ErrorCode::InvalidArgument, "base_rates has " + std::to_string(base_rates.size()) +
                                           " entries for K=" + std::to_string(num_classes));
    }
    double total = 0.0;
    for (double r : base_rates) {
      if (!(r > 0.0 && r < 1.0)) fail(ErrorCode::InvalidArgument, "base rates must lie in (0, 1)");
      total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::InvalidArgument, "base rates must sum to 1");
  }
};

struct EvidentialProfile {
  std::vector<double> evidence;
  std::vector<double> alpha;
  double alpha0 = 0.0;
  std::vector<double> p;
  std::vector<double> belief;
  double u = 1.0;
  std::vector<std::uint32_t> ranks;
  std::vector<double> utility;

  std::size_t num_classes() const noexcept { return p.size(); }
};

inline double activate(Activation a, double z) noexcept {
  switch (a) {
    case Activation::Relu:
      return z > 0.0 ? z : 0.0;
    case Activation::Softplus:
      // log(1 + e^z) without overflow for large z
      return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::Exp:
      return std::exp(std::min(z, 30.0));
  }
  return 0.0;
}

namespace detail {

inline void require_finite(std::span<const double> z) {
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (!std::isfinite(z[k])) fail(ErrorCode::NonFiniteInput, "logit " + std::to_string(k));
  }
}

}  // namespace detail

inline std::vector<double> evidence_from_logits(std::span<const double> z,
                                                const EvidentialConfig& config) {
  detail::require_finite(z);
  std::vector<double> e(z.size());
  std::transform(z.begin(), z.end(), e.begin(),
                 [&](double v) { return activate(config.activation, v); });
  return e;
}

// softmax(z / temperature), max-shifted.
inline std::vector<double> softmax(std::span<const double> z, double temperature = 1.0) {
  std::vector<double> out(z.size());
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp((z[k] - top) / temperature);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

// Position of each label in the descending order of `p`; equal values keep
// ascending label order, so rank 0 goes to the lowest-index argmax.
inline std::vector<std::uint32_t> descending_ranks(std::span<const double> p) {
  std::vector<std::uint32_t> order(p.size());
  std::iota(order.begin(), order.end(), 0U);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return p[a] > p[b]; });
  std::vector<std::uint32_t> ranks(p.size());
  for (std::uint32_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = pos;
  return ranks;
}

// Evidence comes from the raw logits; the softmax utility uses z/temperature.
inline EvidentialProfile profile(std::span<const double> z, const EvidentialConfig& config,
                                 double temperature = 1.0) {
  const std::size_t K = z.size();
  if (K < 2) fail(ErrorCode::InvalidArgument, "need at least two logits");
  config.validate(K);

  EvidentialProfile out;
  out.evidence = evidence_from_logits(z, config);
  out.alpha.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    out.alpha[k] = out.evidence[k] + static_cast<double>(K) * config.base_rate(k, K);
  }
  out.alpha0 = std::accumulate(out.alpha.begin(), out.alpha.end(), 0.0);
  out.p.resize(K);
  out.belief.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    out.p[k] = out.alpha[k] / out.alpha0;
    out.belief[k] = out.evidence[k] / out.alpha0;
  }
  out.u = static_cast<double>(K) / out.alpha0;
  out.ranks = descending_ranks(out.p);
  out.utility = softmax(z, temperature);
  return out;
}

// U_k = u * pi_k
inline double focal_uncertainty(const EvidentialProfile& prof, const EvidentialConfig& config,
                                 std::size_t k) {
  return prof.u * config.base_rate(k, prof.num_classes());
}

inline double clamp_probability(double p, double epsilon) noexcept {
  return std::clamp(p, epsilon, 1.0);
}

// I(k) = -ln p, with p clamped to [epsilon, 1].
inline double surprisal(double p, double epsilon = 1e-12) noexcept {
  return -std::log(clamp_probability(p, epsilon));
}

// I_U(k) = U_k * I(k) / p_k
inline double focal_uncertainty_surprisal(const EvidentialProfile& prof,
                                          const EvidentialConfig& config, std::size_t k) {
  const double p = clamp_probability(prof.p[k], config.epsilon);
  return focal_uncertainty(prof, config, k) * surprisal(p, config.epsilon) / p;
}

// Phi(k) = phi_k * p_k
inline double expected_utility(const EvidentialProfile& prof, std::size_t k) {
  return prof.utility[k] * prof.p[k];
}

}  // namespace ecp
