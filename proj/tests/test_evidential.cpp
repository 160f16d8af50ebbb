#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ecp/evidential.hpp"
#include "test_util.hpp"

using ecp::Activation;
using ecp::EvidentialConfig;

namespace {

EvidentialConfig config(Activation a = Activation::Relu) {
  EvidentialConfig c;
  c.activation = a;
  return c;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Evidence, ActivationExamples) {
  const std::vector<double> z{2, 1, -3};
  EXPECT_EQ(ecp::evidence_from_logits(z, config()), (std::vector<double>{2, 1, 0}));
  const std::vector<double> neg{-1, -2, -3};
  EXPECT_EQ(ecp::evidence_from_logits(neg, config()), (std::vector<double>{0, 0, 0}));
  const std::vector<double> zero{0, 0};
  const auto sp = ecp::evidence_from_logits(zero, config(Activation::Softplus));
  EXPECT_NEAR(sp[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(sp[1], std::log(2.0), 1e-15);
}

TEST(Evidence, SoftplusAndExpStayFinite) {
  EXPECT_NEAR(ecp::activate(Activation::Softplus, 800.0), 800.0, 1e-12);
  EXPECT_GT(ecp::activate(Activation::Softplus, -800.0), -1e-300);
  EXPECT_DOUBLE_EQ(ecp::activate(Activation::Exp, 1000.0), std::exp(30.0));
  EXPECT_DOUBLE_EQ(ecp::activate(Activation::Exp, 1.5), std::exp(1.5));
}

TEST(Evidence, RejectsNonFiniteLogits) {
  const std::vector<double> z{1.0, std::nan("")};
  EXPECT_ECP_ERROR(ecp::evidence_from_logits(z, config()), ecp::ErrorCode::NonFiniteInput);
  EXPECT_ECP_ERROR(ecp::profile(z, config()), ecp::ErrorCode::NonFiniteInput);
}

TEST(Evidential, ParseActivation) {
  EXPECT_EQ(ecp::parse_activation("softplus"), Activation::Softplus);
  EXPECT_EQ(ecp::to_string(Activation::Exp), "exp");
  EXPECT_ECP_ERROR(ecp::parse_activation("tanh"), ecp::ErrorCode::InvalidArgument);
}

TEST(Evidential, ConfigValidation) {
  EvidentialConfig c;
  c.base_rates = {0.5, 0.5};
  EXPECT_ECP_ERROR(c.validate(3), ecp::ErrorCode::InvalidArgument);
  c.base_rates = {0.5, 0.6};
  EXPECT_ECP_ERROR(c.validate(2), ecp::ErrorCode::InvalidArgument);
  c.base_rates = {1.0, 0.0};
  EXPECT_ECP_ERROR(c.validate(2), ecp::ErrorCode::InvalidArgument);
  c.base_rates = {0.25, 0.75};
  EXPECT_NO_THROW(c.validate(2));
  c.epsilon = 1e-2;
  EXPECT_ECP_ERROR(c.validate(2), ecp::ErrorCode::InvalidArgument);
  c.epsilon = 0.0;
  EXPECT_ECP_ERROR(c.validate(2), ecp::ErrorCode::InvalidArgument);
}

TEST(Profile, HandExample) {
  const std::vector<double> z{2, 1, 0};
  const auto p = ecp::profile(z, config());
  EXPECT_EQ(p.evidence, (std::vector<double>{2, 1, 0}));
  EXPECT_EQ(p.alpha, (std::vector<double>{3, 2, 1}));
  EXPECT_DOUBLE_EQ(p.alpha0, 6.0);
  EXPECT_DOUBLE_EQ(p.p[0], 0.5);
  EXPECT_DOUBLE_EQ(p.p[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.p[2], 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(p.belief[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.belief[1], 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(p.belief[2], 0.0);
  EXPECT_DOUBLE_EQ(p.u, 0.5);
  EXPECT_EQ(p.ranks, (std::vector<std::uint32_t>{0, 1, 2}));
  EXPECT_NEAR(p.utility[0], 0.66524095577482188953, 1e-15);
  EXPECT_NEAR(p.utility[1], 0.24472847105479765247, 1e-15);
  EXPECT_NEAR(p.utility[2], 0.090030573170380457998, 1e-15);
}

TEST(Profile, ZeroEvidenceIsVacuous) {
  const std::vector<double> z{-1, -5, 0, -0.5};
  const auto p = ecp::profile(z, config());
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(p.alpha[k], 1.0);
    EXPECT_EQ(p.p[k], 0.25);
    EXPECT_EQ(p.belief[k], 0.0);
  }
  EXPECT_EQ(p.u, 1.0);
  EXPECT_EQ(p.ranks, (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(Profile, NonUniformBaseRates) {
  EvidentialConfig c;
  c.base_rates = {0.2, 0.8};
  const std::vector<double> z{1, 0};
  const auto p = ecp::profile(z, c);
  EXPECT_DOUBLE_EQ(p.alpha[0], 1.4);
  EXPECT_DOUBLE_EQ(p.alpha[1], 1.6);
  EXPECT_EQ(p.ranks, (std::vector<std::uint32_t>{1, 0}));
  EXPECT_DOUBLE_EQ(ecp::focal_uncertainty(p, c, 1), p.u * 0.8);
}

TEST(Profile, TemperatureOnlyTouchesUtility) {
  const std::vector<double> z{3, -1, 0.5};
  const auto a = ecp::profile(z, config(), 1.0);
  const auto b = ecp::profile(z, config(), 2.5);
  EXPECT_EQ(a.p, b.p);
  EXPECT_EQ(a.u, b.u);
  const auto expect = ecp::softmax(std::vector<double>{3 / 2.5, -1 / 2.5, 0.5 / 2.5});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(b.utility[k], expect[k], 1e-15);
}

TEST(Ranks, TiesGoToLowerLabel) {
  const std::vector<double> p{0.2, 0.4, 0.2, 0.4};
  EXPECT_EQ(ecp::descending_ranks(p), (std::vector<std::uint32_t>{2, 0, 3, 1}));
}

TEST(FocalUncertainty, Examples) {
  const std::vector<double> z{2, 1, 0};
  const auto c = config();
  const auto p = ecp::profile(z, c);
  EXPECT_DOUBLE_EQ(ecp::focal_uncertainty(p, c, 0), 1.0 / 6.0);
  const std::vector<double> flat{0, 0, 0, 0};
  const auto v = ecp::profile(flat, c);
  double total = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(ecp::focal_uncertainty(v, c, k), 0.25);
    total += ecp::focal_uncertainty(v, c, k);
  }
  EXPECT_DOUBLE_EQ(total, v.u);
}

TEST(Surprisal, Examples) {
  EXPECT_EQ(ecp::surprisal(1.0), 0.0);
  EXPECT_NEAR(ecp::surprisal(std::exp(-2.0)), 2.0, 1e-15);
  EXPECT_NEAR(ecp::surprisal(0.0), 27.631021115928548208, 1e-12);
  EXPECT_NEAR(ecp::surprisal(-1.0), 27.631021115928548208, 1e-12);
}

TEST(FocalUncertaintySurprisal, Examples) {
  const std::vector<double> z{2, 1, 0};
  const auto c = config();
  const auto p = ecp::profile(z, c);
  // U_0 = 1/6, p_0 = 1/2
  EXPECT_NEAR(ecp::focal_uncertainty_surprisal(p, c, 0), std::log(2.0) / 3.0, 1e-15);
  EXPECT_NEAR(std::log(2.0) / 3.0, 0.2310, 1e-4);
}

TEST(FocalUncertaintySurprisal, ZeroAtCertaintyAndIncreasingAsPFalls) {
  ecp::EvidentialProfile prof;
  prof.u = 0.3;
  prof.p = {1.0, 0.0};
  const auto c = config();
  EXPECT_EQ(ecp::focal_uncertainty_surprisal(prof, c, 0), 0.0);
  double prev = 0.0;
  for (int i = 999; i >= 1; --i) {
    prof.p = {i / 1000.0, 1.0 - i / 1000.0};
    const double v = ecp::focal_uncertainty_surprisal(prof, c, 0);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(ExpectedUtility, Examples) {
  ecp::EvidentialProfile prof;
  prof.p = {0.5, 0.5};
  prof.utility = {0.7, 0.3};
  EXPECT_DOUBLE_EQ(ecp::expected_utility(prof, 0), 0.35);
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  const auto v = ecp::profile(flat, config());
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(ecp::expected_utility(v, k), 1.0 / 16.0);
}

TEST(EvidentialProperty, RandomLogitsSatisfyProfileInvariants) {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> kdist(2, 50);
  std::normal_distribution<double> nd(0.0, 4.0);
  for (int trial = 0; trial < 3000; ++trial) {
    const int K = kdist(gen);
    std::vector<double> z(K);
    for (auto& v : z) v = nd(gen) * (trial % 7 == 0 ? 50.0 : 1.0);
    for (auto a : {Activation::Relu, Activation::Softplus, Activation::Exp}) {
      const auto c = config(a);
      const auto p = ecp::profile(z, c, 0.5 + (trial % 5));
      ASSERT_NEAR(sum(p.p), 1.0, 1e-9);
      ASSERT_NEAR(p.u + sum(p.belief), 1.0, 1e-9);
      ASSERT_NEAR(sum(p.utility), 1.0, 1e-9);
      ASSERT_GT(p.u, 0.0);
      ASSERT_LE(p.u, 1.0);
      for (int k = 0; k < K; ++k) {
        ASSERT_GE(p.evidence[k], 0.0);
        ASSERT_DOUBLE_EQ(p.alpha[k], p.evidence[k] + 1.0);
        ASSERT_GE(p.belief[k], 0.0);
        ASSERT_LT(p.belief[k], 1.0);
        ASSERT_LE(ecp::expected_utility(p, k), std::min(p.utility[k], p.p[k]));
      }
      std::vector<std::uint32_t> sorted = p.ranks;
      std::sort(sorted.begin(), sorted.end());
      for (int k = 0; k < K; ++k) ASSERT_EQ(sorted[k], static_cast<std::uint32_t>(k));
      const auto top = std::max_element(p.p.begin(), p.p.end()) - p.p.begin();
      ASSERT_EQ(p.ranks[top], 0u);
    }
  }
}

TEST(EvidentialProperty, AddedEvidenceLowersUncertainty) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd(0.0, 3.0);
  std::uniform_real_distribution<double> bump(0.01, 2.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> z(6);
    for (auto& v : z) v = nd(gen);
    auto more = z;
    // A positive bump on a positive logit adds relu evidence.
    const std::size_t k = trial % 6;
    more[k] = std::abs(more[k]) + bump(gen);
    if (z[k] > more[k]) continue;
    for (auto a : {Activation::Relu, Activation::Softplus, Activation::Exp}) {
      const double u0 = ecp::profile(z, config(a)).u;
      const double u1 = ecp::profile(more, config(a)).u;
      ASSERT_LT(u1, u0);
    }
  }
}

TEST(EvidentialProperty, StrictlyMonotoneActivationPreservesLogitOrder) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> z(8);
    for (auto& v : z) v = nd(gen);
    for (auto a : {Activation::Softplus, Activation::Exp}) {
      const auto p = ecp::profile(z, config(a));
      ASSERT_EQ(p.ranks, ecp::descending_ranks(z));
    }
  }
}
