#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ecp/conformal.hpp"
#include "ecp/scores.hpp"
#include "ecp/synth.hpp"
#include "test_util.hpp"

using ecp::EvidentialConfig;
using ecp::LogitDataset;
using ecp::Matrix;
using ecp::Method;
using ecp::Temperature;

namespace {

Matrix probs_matrix(std::vector<std::vector<double>> rows) {
  Matrix m;
  m.rows = rows.size();
  m.cols = rows.front().size();
  for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
  return m;
}

// Logits with labels drawn from softmax(scale_for_labels * z).
LogitDataset sampled_dataset(std::size_t n, std::size_t K, double logit_mult, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<double> z(n * K);
  std::vector<std::uint32_t> y(n);
  std::vector<double> w(K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      z[i * K + k] = nd(gen);
      w[k] = std::exp(z[i * K + k]);
    }
    std::discrete_distribution<std::uint32_t> pick(w.begin(), w.end());
    y[i] = pick(gen);
    for (std::size_t k = 0; k < K; ++k) z[i * K + k] *= logit_mult;
  }
  return LogitDataset(std::move(z), std::move(y), K);
}

}  // namespace

TEST(Temperature, Validation) {
  EXPECT_EQ(Temperature().value(), 1.0);
  EXPECT_ECP_ERROR(Temperature(0.0), ecp::ErrorCode::InvalidArgument);
  EXPECT_ECP_ERROR(Temperature(-1.0), ecp::ErrorCode::InvalidArgument);
  EXPECT_ECP_ERROR(Temperature(std::nan("")), ecp::ErrorCode::InvalidArgument);
}

TEST(Temperature, CalibratedLogitsFitNearOne) {
  const auto d = sampled_dataset(20000, 10, 1.0, 1);
  const auto t = ecp::fit_temperature(d);
  EXPECT_NEAR(t.value(), 1.0, 0.1);
  EXPECT_LE(ecp::softmax_nll(d, t.value()), ecp::softmax_nll(d, 1.0));
}

TEST(Temperature, TripledLogitsFitNearThree) {
  const auto d = sampled_dataset(20000, 10, 3.0, 2);
  EXPECT_NEAR(ecp::fit_temperature(d).value(), 3.0, 0.3);
}

TEST(Temperature, SynthWithMatchedScaleIsCalibrated) {
  const auto d = ecp::synth({.classes = 10, .separation = 1.5, .examples = 20000, .seed = 4,
                             .logit_scale = 1.5});
  EXPECT_NEAR(ecp::fit_temperature(d).value(), 1.0, 0.1);
}

TEST(Temperature, NeverWorseThanIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = sampled_dataset(200, 4, 0.2 + 0.3 * static_cast<double>(seed), seed);
    const auto t = ecp::fit_temperature(d);
    EXPECT_LE(ecp::softmax_nll(d, t.value()), ecp::softmax_nll(d, 1.0));
    EXPECT_GE(t.value(), 0.05);
    EXPECT_LE(t.value(), 10.0);
  }
}

TEST(Temperature, SingleClassIsDegenerate) {
  const LogitDataset d({1, 2, 3, 4}, {1, 1}, 2);
  EXPECT_ECP_ERROR(ecp::fit_temperature(d), ecp::ErrorCode::DegenerateInput);
}

TEST(Rho, Examples) {
  EXPECT_EQ(ecp::rho(1000, 0), 1.0);
  EXPECT_EQ(ecp::rho(1000, 500), 2.0);
  EXPECT_EQ(ecp::rho(1000, 999), 1000.0);
  EXPECT_ECP_ERROR(ecp::rho(1000, 1000), ecp::ErrorCode::RankOutOfRange);
}

TEST(Rho, StrictlyIncreasing) {
  for (std::size_t K : {2u, 3u, 10u, 1000u}) {
    for (std::size_t r = 1; r < K; ++r) ASSERT_GT(ecp::rho(K, r), ecp::rho(K, r - 1));
  }
}

TEST(Ecc, WorkedExample) {
  // Independent 40-digit evaluation of the cost formula on z = [2, 1, 0].
  const std::vector<double> z{2, 1, 0};
  const EvidentialConfig c;
  const auto cost = ecp::ecc(ecp::profile(z, c), c);
  EXPECT_NEAR(cost[0], 0.69463269866642569058, 1e-13);
  EXPECT_NEAR(cost[1], 10.100490714665412287, 1e-12);
  EXPECT_NEAR(cost[2], 358.23020236769529465, 1e-10);
  // C_0 = 3 * (1/2) * Chat_0 with Chat_0 ~ 0.4631
  EXPECT_NEAR(cost[0] / 1.5, 0.4631, 1e-4);
}

TEST(Ecc, MatchesProductOfFactors) {
  // C_k = rho(k) I_U(k) / Phi(k)
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd(0.0, 2.0);
  const EvidentialConfig c;
  for (int t = 0; t < 500; ++t) {
    std::vector<double> z(7);
    for (auto& v : z) v = nd(gen);
    const auto prof = ecp::profile(z, c);
    const auto cost = ecp::ecc(prof, c);
    for (std::size_t k = 0; k < 7; ++k) {
      const double expect = ecp::rho(7, ecp::cost_rank(prof, k)) * ecp::focal_uncertainty_surprisal(prof, c, k) /
                            ecp::expected_utility(prof, k);
      ASSERT_NEAR(cost[k], expect, 1e-12 * expect);
    }
  }
}

TEST(Ecc, SoftplusWithTemperature) {
  EvidentialConfig c;
  c.activation = ecp::Activation::Softplus;
  const std::vector<double> z{0.5, -1, 2, 0};
  const auto cost = ecp::ecc(ecp::profile(z, c, 2.0), c);
  const double expect[] = {17.117303803758683383, 316.51518257433592046, 1.6300234718355812177,
                           49.686708022304136166};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(cost[k], expect[k], 1e-12 * expect[k]);
}

TEST(Ecc, CertainLabelCostsNothing) {
  ecp::EvidentialProfile prof;
  prof.p = {1.0, 0.0};
  prof.utility = {0.9, 0.1};
  prof.ranks = {0, 1};
  prof.u = 0.01;
  const EvidentialConfig c;
  const auto cost = ecp::ecc(prof, c);
  EXPECT_EQ(cost[0], 0.0);
  EXPECT_TRUE(std::isfinite(cost[1]));
  EXPECT_GT(cost[1], 0.0);
}

TEST(EccProperty, TopLabelHasStrictMinimumCost) {
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (auto a : {ecp::Activation::Relu, ecp::Activation::Softplus, ecp::Activation::Exp}) {
    EvidentialConfig c;
    c.activation = a;
    for (int t = 0; t < 2000; ++t) {
      std::vector<double> z(2 + t % 9);
      for (auto& v : z) v = nd(gen);
      const auto prof = ecp::profile(z, c);
      const auto cost = ecp::ecc(prof, c);
      const auto top_p = std::max_element(prof.p.begin(), prof.p.end()) - prof.p.begin();
      const auto top_phi =
          std::max_element(prof.utility.begin(), prof.utility.end()) - prof.utility.begin();
      const bool unique = std::count(prof.p.begin(), prof.p.end(), prof.p[top_p]) == 1;
      if (top_p != top_phi || !unique) continue;
      for (std::size_t k = 0; k < z.size(); ++k) {
        if (static_cast<long>(k) != top_p) {
          ASSERT_LT(cost[top_p], cost[k]);
        }
      }
    }
  }
}

TEST(EccProperty, SurprisalCoreIsStrictlyDecreasing) {
  // g(p) = -log p / p^2 on a dense grid of (0, 1)
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 10000; ++i) {
    const double p = i / 10001.0;
    const double g = -std::log(p) / (p * p);
    ASSERT_LT(g, prev);
    prev = g;
  }
}

TEST(EcpScores, WorkedExampleNormalization) {
  const LogitDataset d({2, 1, 0}, {0}, 3);
  const auto s = ecp::ecp_scores(d, EvidentialConfig{});
  EXPECT_NEAR(s.at(0, 0), 0.0019390679347394598934, 1e-15);
  EXPECT_NEAR(s.at(0, 1), 0.028195530828799432917, 1e-15);
  EXPECT_EQ(s.at(0, 2), 1.0);
  EXPECT_EQ(s.method(), Method::Ecp);
}

TEST(EcpScores, ConstantLogitsScoreOne) {
  const LogitDataset d({0.7, 0.7, 0.7, 0.7, -3, -3, -3, -3}, {0, 1}, 4);
  const auto s = ecp::ecp_scores(d, EvidentialConfig{});
  for (double v : s.all_scores()) EXPECT_EQ(v, 1.0);
}

TEST(EcpScores, LogBaseCancels) {
  // Dividing every cost by ln(b) leaves the normalized scores unchanged.
  const std::vector<double> z{1.3, -0.2, 0.9, 2.2, 0.0};
  const EvidentialConfig c;
  const auto cost = ecp::ecc(ecp::profile(z, c), c);
  const double top = *std::max_element(cost.begin(), cost.end());
  for (double base : {2.0, 10.0}) {
    const double top_b = top / std::log(base);
    for (double v : cost) EXPECT_NEAR((v / std::log(base)) / top_b, v / top, 1e-15);
  }
}

TEST(EcpScoresProperty, RowMaxIsExactlyOneAndAllInUnitInterval) {
  const auto d = ecp::synth({.classes = 20, .separation = 1.0, .examples = 2000, .seed = 3});
  for (auto a : {ecp::Activation::Relu, ecp::Activation::Softplus, ecp::Activation::Exp}) {
    EvidentialConfig c;
    c.activation = a;
    const auto s = ecp::ecp_scores(d, c, Temperature(0.7));
    for (std::size_t i = 0; i < s.rows(); ++i) {
      const auto row = s.scores(i);
      ASSERT_EQ(*std::max_element(row.begin(), row.end()), 1.0);
      for (double v : row) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_TRUE(std::isfinite(v));
      }
    }
  }
}

TEST(EcpScoresProperty, ExtremeLogitsStayFinite) {
  const LogitDataset d({700, -700, 0, 1e-300, -1e5, 1e5, 50, 50, 50}, {0, 1, 2}, 3);
  for (auto a : {ecp::Activation::Relu, ecp::Activation::Softplus, ecp::Activation::Exp}) {
    EvidentialConfig c;
    c.activation = a;
    const auto s = ecp::ecp_scores(d, c);
    for (double v : s.all_scores()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(EcpScoresProperty, ExpActivationRanksAreShiftInvariant) {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  EvidentialConfig c;
  c.activation = ecp::Activation::Exp;
  // A shift scales exp evidence by e^c; the prior term in alpha breaks exact
  // score invariance but the label order survives.
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(5), shifted(5);
    for (std::size_t k = 0; k < 5; ++k) {
      z[k] = nd(gen);
      shifted[k] = z[k] + 3.0;
    }
    EXPECT_EQ(ecp::profile(z, c).ranks, ecp::profile(shifted, c).ranks);
  }
}

TEST(BaseScores, CumulativeInRankOrder) {
  const auto s = ecp::base_scores(probs_matrix({{0.1, 0.7, 0.2}}));
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.7);
  EXPECT_DOUBLE_EQ(s.at(0, 2), 0.9);
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0);
  const auto sets = ecp::predict_sets(s, 0.9);
  EXPECT_EQ(sets[0], (std::vector<std::uint32_t>{1, 2}));
}

TEST(BaseScores, UniformNeedsEveryLabel) {
  const auto s = ecp::base_scores(probs_matrix({{0.25, 0.25, 0.25, 0.25}}));
  EXPECT_EQ(ecp::predict_sets(s, 0.9)[0].size(), 4u);
}

TEST(ApsScores, Examples) {
  const auto s = ecp::aps_scores(probs_matrix({{0.3, 0.5, 0.2}}));
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.8);  // rank 1
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);  // top label = max prob
  EXPECT_DOUBLE_EQ(s.at(0, 2), 1.0);
}

TEST(ApsScoresProperty, NonDecreasingInRank) {
  std::mt19937_64 gen(17);
  std::gamma_distribution<double> g(0.5);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> p(12);
    double total = 0;
    for (auto& v : p) total += (v = g(gen));
    for (auto& v : p) v /= total;
    const auto s = ecp::aps_scores(probs_matrix({p}));
    std::vector<double> by_rank(12);
    for (std::size_t k = 0; k < 12; ++k) by_rank[s.ranks(0)[k]] = s.at(0, k);
    ASSERT_TRUE(std::is_sorted(by_rank.begin(), by_rank.end()));
  }
}

TEST(ApsScores, RandomizedVariantIsSeededAndBounded) {
  const auto m = probs_matrix({{0.3, 0.5, 0.2}, {0.6, 0.1, 0.3}});
  const auto det = ecp::aps_scores(m);
  const auto a = ecp::aps_scores(m, {true, 7});
  const auto b = ecp::aps_scores(m, {true, 7});
  const auto c = ecp::aps_scores(m, {true, 8});
  EXPECT_TRUE(std::equal(a.all_scores().begin(), a.all_scores().end(), b.all_scores().begin()));
  EXPECT_FALSE(std::equal(a.all_scores().begin(), a.all_scores().end(), c.all_scores().begin()));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double own = m.row(i)[k];
      EXPECT_LE(a.at(i, k), det.at(i, k));
      EXPECT_GE(a.at(i, k), det.at(i, k) - own);
    }
  }
}

TEST(RapsScores, PenaltyExample) {
  const auto s = ecp::raps_scores(probs_matrix({{0.5, 0.3, 0.2}}), {1, 0.1});
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.8 + 0.1);
  EXPECT_DOUBLE_EQ(s.at(0, 2), 1.0 + 0.2);
}

TEST(RapsScores, TopKRegLabelsAreFree) {
  const auto m = probs_matrix({{0.05, 0.3, 0.1, 0.25, 0.2, 0.1}});
  const auto aps = ecp::aps_scores(m);
  const auto raps = ecp::raps_scores(m, {5, 0.5});
  for (std::size_t k = 0; k < 6; ++k) {
    if (raps.ranks(0)[k] < 5) EXPECT_EQ(raps.at(0, k), aps.at(0, k));
    else EXPECT_DOUBLE_EQ(raps.at(0, k), aps.at(0, k) + 0.5);
  }
}

TEST(RapsScores, LambdaZeroIsAps) {
  const auto d = ecp::synth({.classes = 10, .separation = 1.0, .examples = 500, .seed = 9});
  const auto m = ecp::softmax_probabilities(d, Temperature(0.8));
  for (bool randomized : {false, true}) {
    const auto aps = ecp::aps_scores(m, {randomized, 3});
    const auto raps = ecp::raps_scores(m, {5, 0.0}, {randomized, 3});
    ASSERT_TRUE(std::equal(aps.all_scores().begin(), aps.all_scores().end(),
                           raps.all_scores().begin(), raps.all_scores().end()));
  }
}

TEST(RapsParams, Validation) {
  EXPECT_ECP_ERROR((ecp::RapsParams{4, 0.1}.validate(3)), ecp::ErrorCode::InvalidArgument);
  EXPECT_ECP_ERROR((ecp::RapsParams{1, 1.5}.validate(3)), ecp::ErrorCode::InvalidArgument);
  EXPECT_ECP_ERROR((ecp::RapsParams{1, -0.1}.validate(3)), ecp::ErrorCode::InvalidArgument);
  EXPECT_NO_THROW((ecp::RapsParams{3, 1.0}.validate(3)));
}

TEST(LasScores, Examples) {
  const auto s = ecp::las_scores(probs_matrix({{0.9, 0.05, 0.05}}));
  EXPECT_NEAR(s.at(0, 0), 0.1, 1e-15);
  const auto row = s.scores(0);
  EXPECT_EQ(std::min_element(row.begin(), row.end()) - row.begin(), 0);
  for (double v : row) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SoftmaxBaselines, ShiftInvariant) {
  const LogitDataset a({1, 2, 3, -1, 0, 4}, {0, 1}, 3);
  const LogitDataset b({11, 12, 13, 99, 100, 104}, {0, 1}, 3);
  ecp::ScoringOptions o;
  o.raps = {1, 0.2};
  for (Method m : {Method::Base, Method::Aps, Method::Raps, Method::Las}) {
    const auto sa = ecp::compute_scores(m, a, o);
    const auto sb = ecp::compute_scores(m, b, o);
    for (std::size_t i = 0; i < sa.all_scores().size(); ++i) {
      EXPECT_NEAR(sa.all_scores()[i], sb.all_scores()[i], 1e-12);
    }
  }
}

TEST(ComputeScores, DispatchesAndAppliesTemperature) {
  const LogitDataset d({2, 1, 0, 0, 3, 1}, {0, 1}, 3);
  ecp::ScoringOptions o;
  o.temperature = Temperature(2.0);
  const auto las = ecp::compute_scores(Method::Las, d, o);
  const auto p = ecp::softmax(std::vector<double>{2, 1, 0}, 2.0);
  EXPECT_NEAR(las.at(0, 1), 1.0 - p[1], 1e-15);
  EXPECT_EQ(ecp::compute_scores(Method::Ecp, d, o).method(), Method::Ecp);
  EXPECT_EQ(ecp::parse_method("raps"), Method::Raps);
  EXPECT_ECP_ERROR(ecp::parse_method("thr"), ecp::ErrorCode::InvalidArgument);
}

TEST(ScoreMatrix, SelectAndAtLabels) {
  const auto s = ecp::las_scores(probs_matrix({{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}}));
  const std::vector<std::size_t> rows{2, 0};
  const auto sel = s.select(rows);
  EXPECT_EQ(sel.rows(), 2u);
  EXPECT_DOUBLE_EQ(sel.at(1, 0), s.at(0, 0));
  const std::vector<std::uint32_t> labels{1, 0};
  const auto v = sel.at_labels(labels);
  EXPECT_DOUBLE_EQ(v[0], 0.5);
  EXPECT_NEAR(v[1], 0.1, 1e-15);
}
