#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mtpc/error.hpp"
#include "mtpc/inference.hpp"
#include "mtpc/reference.hpp"
#include "test_util.hpp"

namespace mtpc {
namespace {

using testing::histogram;
using testing::max_abs_diff;
using testing::spec_grid;
using testing::window_index;

// CP, n = 2, v = 2, r = 2 with hand-picked tables.
CircuitParams small_cp(const Circuit& c) {
  CircuitParams p = CircuitParams::uniform(c);
  p.omega[0] = {0.3, 0.7};
  const double rows[2][2][2] = {{{0.9, 0.1}, {0.2, 0.8}}, {{0.6, 0.4}, {0.25, 0.75}}};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int x = 0; x < 2; ++x) p.phi_row(i, j)[x] = rows[i][j][x];
    }
  }
  return p;
}

double small_cp_prob(int x0, int x1) {
  const double w[2] = {0.3, 0.7};
  const double rows[2][2][2] = {{{0.9, 0.1}, {0.2, 0.8}}, {{0.6, 0.4}, {0.25, 0.75}}};
  double total = 0.0;
  for (int j = 0; j < 2; ++j) total += w[j] * rows[0][j][x0] * rows[1][j][x1];
  return total;
}

TEST(Evaluate, FfUniformIsAProductOfUniforms) {
  const Circuit c = build_ff(3, 5);
  const auto p = CircuitParams::uniform(c);
  for (std::size_t k = 0; k < 125; ++k) {
    EXPECT_NEAR(evaluate(c, p, window_from_index(k, 3, 5)), 3.0 * std::log(0.2), 1e-12);
  }
}

TEST(Evaluate, CpMatchesHandComputedMixture) {
  const Circuit c = build_cp(2, 2, 2);
  const auto p = small_cp(c);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const std::vector<int> w{a, b};
      EXPECT_NEAR(std::exp(evaluate(c, p, w)), small_cp_prob(a, b), 1e-12);
    }
  }
}

TEST(Evaluate, DegenerateMixtureGivesExactZeros) {
  const Circuit c = build_cp(2, 2, 2);
  auto p = CircuitParams::uniform(c);
  p.omega[0] = {1.0, 0.0};
  p.phi_row(0, 0)[0] = 1.0;
  p.phi_row(0, 0)[1] = 0.0;
  p.phi_row(1, 0)[0] = 0.0;
  p.phi_row(1, 0)[1] = 1.0;
  EXPECT_DOUBLE_EQ(evaluate(c, p, std::vector<int>{0, 1}), 0.0);
  EXPECT_EQ(evaluate(c, p, std::vector<int>{0, 0}), kNegInf);
  EXPECT_EQ(evaluate(c, p, std::vector<int>{1, 1}), kNegInf);
}

TEST(Evaluate, HmmMatchesLatentPathSum) {
  const Circuit c = build_hmm(3, 2, 2);
  Rng rng(5);
  const auto p = CircuitParams::random(c, rng, 1.5);
  for (std::size_t k = 0; k < 8; ++k) {
    const auto w = window_from_index(k, 3, 2);
    // Forward recursion written out over every latent path.
    double total = 0.0;
    for (int z0 = 0; z0 < 2; ++z0) {
      for (int z1 = 0; z1 < 2; ++z1) {
        for (int z2 = 0; z2 < 2; ++z2) {
          total += p.omega[0][z0] * p.phi_row(0, z0)[w[0]] * p.omega[1][z0 * 2 + z1] *
                   p.phi_row(1, z1)[w[1]] * p.omega[2][z1 * 2 + z2] * p.phi_row(2, z2)[w[2]];
        }
      }
    }
    EXPECT_NEAR(std::exp(evaluate(c, p, w)), total, 1e-12);
  }
}

TEST(Evaluate, RejectsBadWindows) {
  const Circuit c = build_cp(3, 4, 2);
  const auto p = CircuitParams::uniform(c);
  EXPECT_THROW(evaluate(c, p, std::vector<int>{0, 1}), ContractError);
  EXPECT_THROW(evaluate(c, p, std::vector<int>{0, 1, 4}), ContractError);
  EXPECT_THROW(evaluate(c, p, std::vector<int>{0, -1, 2}), ContractError);
  auto bad = p;
  bad.phi.pop_back();
  EXPECT_THROW(evaluate(c, bad, std::vector<int>{0, 1, 2}), ContractError);
}

TEST(Partition, ZeroForNormalizedParams) {
  Rng rng(11);
  for (const auto& s : spec_grid({1, 2, 3, 4, 6}, {2, 5}, {1, 3})) {
    const Circuit c = build_circuit(s);
    EXPECT_NEAR(partition(c, CircuitParams::random(c, rng, 2.0)), 0.0, 1e-7);
  }
}

TEST(Partition, ScalesWithAnUnnormalizedRow) {
  const Circuit c = build_ff(1, 3);
  auto p = CircuitParams::uniform(c);
  for (double& x : p.phi_row(0, 0)) x *= 2.0;
  EXPECT_NEAR(partition(c, p), std::log(2.0), 1e-12);
}

TEST(Partition, BtreeAgreesWithTableSum) {
  const Circuit c = build_btree(4, 3, 3);
  Rng rng(2);
  const auto p = CircuitParams::random(c, rng);
  double sum = 0.0;
  for (double x : enumerate_joint(c, p)) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_NEAR(partition(c, p), 0.0, 1e-7);
}

TEST(PrefixMarginals, FfIsARunningSumOfLogs) {
  const Circuit c = build_ff(4, 3);
  Rng rng(3);
  const auto p = CircuitParams::random(c, rng);
  const std::vector<int> w{2, 0, 1, 1};
  const auto pm = prefix_marginals(c, p, w);
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += std::log(p.phi_row(i, 0)[w[i]]);
    EXPECT_NEAR(pm[i], acc, 1e-12);
  }
  const auto cond = conditionals_from_prefix(pm);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(cond[i], std::log(p.phi_row(i, 0)[w[i]]), 1e-12);
}

TEST(PrefixMarginals, CpFirstEntryIsTheMarginal) {
  const Circuit c = build_cp(2, 2, 2);
  const auto p = small_cp(c);
  const auto pm = prefix_marginals(c, p, std::vector<int>{0, 0});
  EXPECT_NEAR(std::exp(pm[0]), 0.3 * 0.9 + 0.7 * 0.2, 1e-12);
  EXPECT_NEAR(std::exp(pm[0]), small_cp_prob(0, 0) + small_cp_prob(0, 1), 1e-12);
  const auto cond = conditionals_from_prefix(pm);
  EXPECT_NEAR(std::exp(cond[1]), small_cp_prob(0, 0) / (small_cp_prob(0, 0) + small_cp_prob(0, 1)), 1e-12);
}

TEST(PrefixMarginals, UniformJointGivesMinusLogV) {
  const Circuit c = build_hmm(3, 4, 2);
  const auto p = CircuitParams::uniform(c);
  for (double x : conditionals_from_prefix(prefix_marginals(c, p, std::vector<int>{3, 0, 2}))) {
    EXPECT_NEAR(x, -std::log(4.0), 1e-12);
  }
}

TEST(PrefixMarginals, AgreeWithBruteForceAndAreNonIncreasing) {
  Rng rng(17);
  for (const auto& s : spec_grid({2, 3, 4}, {2, 3}, {1, 2, 3})) {
    const Circuit c = build_circuit(s);
    const auto p = CircuitParams::random(c, rng, 1.5);
    std::uniform_int_distribution<int> tok(0, s.v - 1);
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<int> w(s.n);
      for (int& x : w) x = tok(rng);
      const auto pm = prefix_marginals(c, p, w);
      for (int i = 0; i < s.n; ++i) {
        const std::span<const int> prefix(w.data(), i + 1);
        EXPECT_NEAR(std::exp(pm[i]), reference::prefix_probability(c, p, prefix), 1e-9);
        if (i > 0) {
          EXPECT_LE(pm[i], pm[i - 1] + 1e-12);
        }
      }
      EXPECT_NEAR(pm.back(), evaluate(c, p, w), 1e-9);
    }
  }
}

TEST(Conditionals, MinusInfinityAfterFiniteIsRejected) {
  const std::vector<double> pm{kNegInf, -1.0};
  EXPECT_THROW(conditionals_from_prefix(pm), ContractError);
}

TEST(Conditionals, DistributionMatchesPrefixRatios) {
  Rng rng(23);
  for (const auto& s : spec_grid({3}, {3}, {1, 2})) {
    const Circuit c = build_circuit(s);
    const auto p = CircuitParams::random(c, rng);
    const auto lp = LogParams::from(c, p);
    const std::vector<int> prefix{2, 1};
    const auto dist = conditional_distribution(c, lp, prefix);
    const double denom = reference::prefix_probability(c, p, prefix);
    double sum = 0.0;
    for (int x = 0; x < s.v; ++x) {
      const std::vector<int> ext{2, 1, x};
      EXPECT_NEAR(dist[x], reference::prefix_probability(c, p, ext) / denom, 1e-9);
      sum += dist[x];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(OracleEquivalence, EvaluateMatchesClosedFormsOnTheGrid) {
  for (const auto& s : spec_grid({2, 3, 4}, {2, 3, 5}, {1, 2, 3})) {
    const Circuit c = build_circuit(s);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const auto p = CircuitParams::random(c, rng, 1.5);
      EXPECT_LE(max_abs_diff(enumerate_joint(c, p), reference::joint(c, p)), 1e-9);
    }
  }
}

TEST(Reductions, RankOneCpAndBtreeEqualFf) {
  Rng rng(29);
  for (int n : {2, 3, 4}) {
    for (int v : {2, 3, 5}) {
      const Circuit ff = build_ff(n, v);
      const auto pf = CircuitParams::random(ff, rng);
      for (const Circuit& other : {build_cp(n, v, 1), build_btree(n, v, 1)}) {
        auto po = CircuitParams::uniform(other);
        po.phi = pf.phi;
        EXPECT_LE(max_abs_diff(enumerate_joint(other, po), enumerate_joint(ff, pf)), 1e-12);
      }
    }
  }
}

TEST(Reductions, IdentityTransitionHmmEqualsCp) {
  Rng rng(31);
  for (int n : {2, 3, 4}) {
    for (int r : {1, 2, 3}) {
      const Circuit hmm = build_hmm(n, 3, r);
      const Circuit cp = build_cp(n, 3, r);
      auto ph = CircuitParams::random(hmm, rng);
      for (int t = 1; t < n; ++t) {
        std::fill(ph.omega[t].begin(), ph.omega[t].end(), 0.0);
        for (int z = 0; z < r; ++z) ph.omega[t][z * r + z] = 1.0;
      }
      auto pc = CircuitParams::uniform(cp);
      pc.phi = ph.phi;
      pc.omega[0] = ph.omega[0];
      EXPECT_LE(max_abs_diff(enumerate_joint(hmm, ph), enumerate_joint(cp, pc)), 1e-12);
    }
  }
}

TEST(Sampling, OneHotParamsGiveTheDeterministicWindow) {
  const Circuit c = build_btree(4, 3, 2);
  auto p = CircuitParams::uniform(c);
  const std::vector<int> want{2, 0, 1, 2};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 2; ++j) {
      auto row = p.phi_row(i, j);
      std::fill(row.begin(), row.end(), 0.0);
      row[want[i]] = 1.0;
    }
  }
  Rng rng(1);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(sample_window(c, p, rng), want);
  EXPECT_EQ(greedy_window(c, p), want);
}

TEST(Sampling, FfUniformFrequenciesWithinBinomialNoise) {
  const Circuit c = build_ff(2, 3);
  const auto p = CircuitParams::uniform(c);
  Rng rng(7);
  const int count = 100000;
  const auto h = histogram(9, count, [&] { return window_index(sample_window(c, p, rng), 3); });
  const double sigma = std::sqrt((1.0 / 9) * (8.0 / 9) / count);
  for (double f : h) EXPECT_NEAR(f, 1.0 / 9, 3 * sigma);
}

TEST(Sampling, EmpiricalJointIsCloseToTheEnumeratedJoint) {
  Rng rng(41);
  for (const auto& s : spec_grid({3}, {2}, {2})) {
    const Circuit c = build_circuit(s);
    const auto p = CircuitParams::random(c, rng, 1.5);
    const auto h = histogram(8, 50000, [&] { return window_index(sample_window(c, p, rng), 2); });
    EXPECT_LE(total_variation(h, enumerate_joint(c, p)), 0.02) << to_string(s.kind);
  }
}

TEST(Sampling, EvidenceIsKeptAndFreePositionsFollowTheConditional) {
  const Circuit c = build_hmm(3, 3, 2);
  Rng rng(43);
  const auto p = CircuitParams::random(c, rng, 1.5);
  const std::vector<int> evidence{1, -1, -1};
  const int count = 50000;
  const auto h = histogram(9, count, [&] {
    const auto w = sample_window_given(c, p, evidence, rng);
    EXPECT_EQ(w[0], 1);
    return static_cast<std::size_t>(w[1] * 3 + w[2]);
  });
  std::vector<double> want(9);
  const double denom = reference::prefix_probability(c, p, std::vector<int>{1});
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) want[a * 3 + b] = reference::probability(c, p, std::vector<int>{1, a, b}) / denom;
  }
  EXPECT_LE(total_variation(h, want), 0.02);
}

TEST(Greedy, FfIsPerPositionArgmax) {
  const Circuit c = build_ff(3, 4);
  Rng rng(47);
  const auto p = CircuitParams::random(c, rng);
  const auto w = greedy_window(c, p);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(w[i], argmax(p.phi_row(i, 0)));
}

TEST(Greedy, ChainedArgmaxFromTheEnumeratedJoint) {
  const Circuit c = build_cp(2, 3, 2);
  Rng rng(53);
  const auto p = CircuitParams::random(c, rng, 2.0);
  const auto joint = enumerate_joint(c, p);
  std::vector<double> first(3, 0.0);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) first[a] += joint[a * 3 + b];
  }
  const int a = argmax(first);
  const int b = argmax(std::vector<double>{joint[a * 3], joint[a * 3 + 1], joint[a * 3 + 2]});
  EXPECT_EQ(greedy_window(c, p), (std::vector<int>{a, b}));
}

TEST(Greedy, TiesGoToTheSmallestToken) {
  const Circuit c = build_cp(3, 4, 2);
  EXPECT_EQ(greedy_window(c, CircuitParams::uniform(c)), (std::vector<int>{0, 0, 0}));
}

TEST(Greedy, PrefixIsKept) {
  const Circuit c = build_btree(3, 4, 2);
  Rng rng(59);
  const auto p = CircuitParams::random(c, rng);
  const auto w = greedy_window_given(c, p, std::vector<int>{3});
  EXPECT_EQ(w[0], 3);
  const auto lp = LogParams::from(c, p);
  EXPECT_EQ(w[1], argmax(conditional_distribution(c, lp, std::vector<int>{3})));
}

TEST(Enumerate, FfUniformTable) {
  const Circuit c = build_ff(2, 2);
  const auto t = enumerate_joint(c, CircuitParams::uniform(c));
  ASSERT_EQ(t.size(), 4u);
  for (double x : t) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Enumerate, GuardOnLargeTables) {
  const Circuit c = build_ff(3, 320);
  EXPECT_THROW(enumerate_joint(c, CircuitParams::uniform(c)), GuardError);
  const Circuit ok = build_ff(2, 1000);  // exactly 1e6 windows
  EXPECT_EQ(enumerate_joint(ok, CircuitParams::uniform(ok)).size(), 1000000u);
}

TEST(Enumerate, WindowIndexRoundTrip) {
  for (std::size_t k = 0; k < 125; ++k) EXPECT_EQ(window_index(window_from_index(k, 3, 5), 5), k);
}

TEST(Enumerate, CsvDump) {
  const Circuit c = build_ff(2, 2);
  const auto t = enumerate_joint(c, CircuitParams::uniform(c));
  std::ostringstream out;
  write_joint_csv(out, c, t);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x0,x1,probability");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0,0.25");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST(Engine, BackwardMatchesFiniteDifferences) {
  Rng rng(61);
  for (const auto& s : spec_grid({3}, {3}, {2})) {
    const Circuit c = build_circuit(s);
    const auto p = CircuitParams::random(c, rng);
    const LogParams lp = LogParams::from(c, p);
    // Two observed windows and one with a marginalized tail.
    const std::vector<int> evidence{0, 2, 1, 1, 1, 0, 2, -1, -1};
    const std::vector<double> seeds{1.0, -0.5, 2.0};
    ForwardTape tape(c, lp, evidence, 3);
    auto grads = LogParamGrads::zeros_like(lp);
    backward(tape, seeds, grads);
    auto objective = [&](const LogParams& q) {
      ForwardTape t(c, q, evidence, 3);
      double total = 0.0;
      for (int b = 0; b < 3; ++b) total += seeds[b] * t.output(b);
      return total;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < lp.log_phi.size(); ++i) {
      LogParams up = lp, down = lp;
      up.log_phi[i] += h;
      down.log_phi[i] -= h;
      EXPECT_NEAR(grads.log_phi[i], (objective(up) - objective(down)) / (2 * h), 1e-6);
    }
    for (std::size_t t = 0; t < lp.log_omega.size(); ++t) {
      for (std::size_t i = 0; i < lp.log_omega[t].size(); ++i) {
        LogParams up = lp, down = lp;
        up.log_omega[t][i] += h;
        down.log_omega[t][i] -= h;
        EXPECT_NEAR(grads.log_omega[t][i], (objective(up) - objective(down)) / (2 * h), 1e-6);
      }
    }
  }
}

TEST(Engine, CheckParamsRejectsOffSimplexRows) {
  const Circuit c = build_cp(2, 3, 2);
  auto p = CircuitParams::uniform(c);
  EXPECT_NO_THROW(check_params(c, p));
  p.omega[0][0] = 0.9;
  EXPECT_THROW(check_params(c, p), ContractError);
}

}  // namespace
}  // namespace mtpc
