#include <gtest/gtest.h>

#include "oracle/equivalence.hpp"

TEST(OracleEquivalence, ThousandSmallRandomInstances) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto in = oracle::random_instance(seed);
    const auto diff = oracle::check_instance(in);
    ASSERT_FALSE(diff.has_value()) << "seed " << seed << ": " << *diff;
  }
}

TEST(OracleEquivalence, WorkedExampleAgrees) {
  const std::vector<double> z{2, 1, 0};
  const std::vector<double> pi(3, 1.0 / 3.0);
  const auto ref = oracle::ecp_scores(z, oracle::Act::Relu, pi, 1e-12, 1.0);
  const ecp::LogitDataset d(z, {0}, 3);
  const auto lib = ecp::ecp_scores(d, {});
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(lib.at(0, k), ref[k], 1e-15);
}
