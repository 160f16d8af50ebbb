#pragma once

// Desk-scale stand-in for real classifier logits.
//
// Each example draws a latent class c uniformly, then a feature vector
// x = separation * e_c + N(0, I) around the c-th vertex of the simplex. The
// label is c and the emitted logits are logit_scale * x. Because the class
// posterior is softmax(separation * x), labels are distributed exactly as
// softmax(s * logits) with sharpness s = separation / logit_scale; with
// separation = logit_scale the logits are perfectly calibrated.

#include <cstdint>
#include <random>
#include <vector>

#include "ecp/dataset.hpp"
#include "ecp/error.hpp"

namespace ecp {

struct SynthConfig {
  std::size_t classes = 10;
  double separation = 2.0;
  std::size_t examples = 10000;
  std::uint64_t seed = 0;
  double logit_scale = 1.0;
};

inline LogitDataset synth(const SynthConfig& cfg) {
  if (cfg.classes < 2) fail(ErrorCode::InvalidArgument, "need at least two classes");
  if (cfg.examples < cfg.classes) fail(ErrorCode::InvalidArgument, "need N >= K");
  if (!(cfg.separation >= 0.0) || !(cfg.logit_scale > 0.0)) {
    fail(ErrorCode::InvalidArgument, "separation must be >= 0 and logit_scale > 0");
  }
  std::mt19937_64 gen(cfg.seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(cfg.classes - 1));
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> logits(cfg.examples * cfg.classes);
  std::vector<std::uint32_t> labels(cfg.examples);
  for (std::size_t i = 0; i < cfg.examples; ++i) {
    const std::uint32_t c = pick(gen);
    labels[i] = c;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      const double mean = k == c ? cfg.separation : 0.0;
      // Round through float so in-memory data equals its binary-file form.
      logits[i * cfg.classes + k] =
          static_cast<double>(static_cast<float>(cfg.logit_scale * (mean + noise(gen))));
    }
  }
  return LogitDataset(std::move(logits), std::move(labels), cfg.classes);
}

}  // namespace ecp
