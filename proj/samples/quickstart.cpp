// Calibrate ECP on half of a synthetic dataset and report coverage and set
// size on the other half.

#include <cstdio>

#include "ecp/ecp.hpp"

int main() {
  const auto data = ecp::synth({.classes = 10, .separation = 2.0, .examples = 6000, .seed = 7});
  const auto idx = ecp::split(data, {.calibration_fraction = 0.5, .seed = 1, .trial_index = 0});
  const auto cal = data.subset(idx.calibration);
  const auto val = data.subset(idx.validation);

  const auto predictor = ecp::fit_predictor(cal, ecp::Method::Ecp, 0.1, {});
  const auto scores = ecp::compute_scores(ecp::Method::Ecp, val, predictor.scoring);
  const auto batch = ecp::build_sets(scores, predictor.threshold(), val.labels());

  std::printf("top-1 accuracy  %.4f\n", val.top1_accuracy());
  std::printf("temperature     %.4f\n", predictor.scoring.temperature.value());
  std::printf("q_hat           %.6g\n", predictor.calibration.q_hat);
  std::printf("coverage        %.4f (target 0.90)\n", ecp::marginal_coverage(batch));
  std::printf("mean set size   %.3f\n", ecp::mean_set_size(batch, false));
  std::printf("SSCV            %.4f\n", ecp::sscv(batch, ecp::sscv_size_bins(10), 0.1));
  return 0;
}
