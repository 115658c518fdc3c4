#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "mtpc/error.hpp"
#include "mtpc/inference.hpp"
#include "mtpc/pipeline.hpp"
#include "mtpc/teacher.hpp"
#include "mtpc/training.hpp"
#include "test_util.hpp"

namespace mtpc {
namespace {

TrainingBatch random_batch(int count, int len, int v, Rng& rng) {
  std::uniform_int_distribution<int> tok(0, v - 1);
  std::vector<std::vector<int>> seqs(count, std::vector<int>(len));
  for (auto& s : seqs) {
    for (int& x : s) x = tok(rng);
  }
  return TrainingBatch::all_valid(std::move(seqs));
}

Model toy_model(const ArchitectureSpec& spec, int k, std::uint64_t seed) {
  Rng rng(seed);
  return random_model(spec, 4, 2, k, 0.5, rng);
}

TEST(MtpLoss, WindowOfOneIsNextTokenNll) {
  Rng rng(1);
  Model m = toy_model({ArchKind::kFF, 1, 1, 4}, 1, 1);
  auto batch = random_batch(3, 6, 4, rng);
  batch.valid[1][2] = 0;
  double want = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& seq = batch.sequences[s];
    double sum = 0.0;
    int valid = 0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      if (!batch.valid[s][t + 1]) continue;
      const auto e = encode_draft(m.backbone, m.adapter, std::span<const int>(seq.data(), t + 1));
      sum -= std::log(parameterize(m.head, m.circuit, e).phi_row(0, 0)[seq[t + 1]]);
      ++valid;
    }
    want += sum / (3.0 * valid);
  }
  for (double gamma : {0.5, 1.0}) {
    EXPECT_NEAR(mtp_loss(m, batch, {gamma, LossMode::kConditional}).loss, want, 1e-12);
  }
}

TEST(MtpLoss, UniformModelGivesLogVPerOffset) {
  Rng rng(2);
  Model m = toy_model({ArchKind::kCP, 3, 2, 4}, 0, 2);
  m.head = ParamHead::zeros(m.circuit, 4);
  const auto batch = random_batch(4, 9, 4, rng);
  for (LossMode mode : {LossMode::kConditional, LossMode::kMarginal}) {
    const auto lv = mtp_loss(m, batch, {0.9, mode});
    ASSERT_EQ(lv.l_j.size(), 3u);
    for (double l : lv.l_j) EXPECT_NEAR(l, std::log(4.0), 1e-12);
    EXPECT_NEAR(lv.loss, std::log(4.0) * (1 + 0.9 + 0.81), 1e-12);
  }
}

TEST(MtpLoss, DiscountWeightsTheOffsets) {
  Rng rng(3);
  const Model m = toy_model({ArchKind::kBTree, 3, 2, 4}, 1, 3);
  const auto batch = random_batch(3, 8, 4, rng);
  const auto lv = mtp_loss(m, batch, {0.8, LossMode::kConditional});
  EXPECT_NEAR(lv.loss, lv.l_j[0] + 0.8 * lv.l_j[1] + 0.64 * lv.l_j[2], 1e-12);
}

TEST(MtpLoss, MonotoneInGamma) {
  Rng rng(4);
  const Model m = toy_model({ArchKind::kHMM, 3, 2, 4}, 1, 4);
  const auto batch = random_batch(3, 8, 4, rng);
  double last = 0.0;
  for (double gamma : {0.1, 0.5, 0.8, 0.9, 1.0}) {
    const double l = mtp_loss(m, batch, {gamma, LossMode::kConditional}).loss;
    EXPECT_GE(l, last);
    last = l;
  }
}

TEST(MtpLoss, InvariantToSequenceOrder) {
  Rng rng(5);
  const Model m = toy_model({ArchKind::kCP, 3, 3, 4}, 1, 5);
  auto batch = random_batch(10, 7, 4, rng);
  batch.valid[2][3] = 0;
  const double a = mtp_loss(m, batch, {}).loss;
  std::reverse(batch.sequences.begin(), batch.sequences.end());
  std::reverse(batch.valid.begin(), batch.valid.end());
  EXPECT_NEAR(mtp_loss(m, batch, {}).loss, a, 1e-12);
}

TEST(MtpLoss, ConditionalEqualsMarginalForFf) {
  Rng rng(6);
  const Model m = toy_model({ArchKind::kFF, 3, 1, 4}, 0, 6);
  const auto batch = random_batch(3, 8, 4, rng);
  EXPECT_NEAR(mtp_loss(m, batch, {0.9, LossMode::kConditional}).loss,
              mtp_loss(m, batch, {0.9, LossMode::kMarginal}).loss, 1e-12);
}

TEST(MtpLoss, MarginalModeScoresSinglePositionMarginals) {
  Rng rng(7);
  const Model m = toy_model({ArchKind::kCP, 2, 3, 3}, 0, 7);
  const auto batch = TrainingBatch::all_valid({{0, 2, 1}});
  // Windows at t = 0 (offsets 1, 2) and t = 1 (offset 1).
  const auto e0 = encode_draft(m.backbone, m.adapter, std::vector<int>{0});
  const auto e1 = encode_draft(m.backbone, m.adapter, std::vector<int>{0, 2});
  const auto p0 = parameterize(m.head, m.circuit, e0);
  const auto p1 = parameterize(m.head, m.circuit, e1);
  auto marginal = [&](const CircuitParams& p, int pos, int tok) {
    double total = 0.0;
    const auto joint = enumerate_joint(m.circuit, p);
    for (std::size_t k = 0; k < joint.size(); ++k) {
      if (window_from_index(k, 2, 3)[pos] == tok) total += joint[k];
    }
    return total;
  };
  const double l1 = -(std::log(marginal(p0, 0, 2)) + std::log(marginal(p1, 0, 1))) / 2.0;
  const double l2 = -std::log(marginal(p0, 1, 1));
  const auto lv = mtp_loss(m, batch, {0.9, LossMode::kMarginal});
  EXPECT_NEAR(lv.l_j[0], l1, 1e-12);
  EXPECT_NEAR(lv.l_j[1], l2, 1e-12);
}

TEST(MtpLoss, NothingValidIsAContractError) {
  const Model m = toy_model({ArchKind::kCP, 2, 2, 3}, 0, 8);
  auto batch = TrainingBatch::all_valid({{0, 1, 2}});
  std::fill(batch.valid[0].begin(), batch.valid[0].end(), 0);
  EXPECT_THROW(mtp_loss(m, batch, {}), ContractError);
  EXPECT_THROW(mtp_loss(m, TrainingBatch{}, {}), ContractError);
}

TEST(GradCheck, EveryArchitectureAndDiscount) {
  Rng data_rng(9);
  const auto batch = random_batch(3, 6, 3, data_rng);
  Trainable all{true, false, true, true};
  for (ArchKind kind : testing::kAllKinds) {
    const int r = kind == ArchKind::kFF ? 1 : 2;
    const Model m = toy_model({kind, 3, r, 3}, 1, 10);
    for (double gamma : {0.8, 0.9, 1.0}) {
      for (LossMode mode : {LossMode::kConditional, LossMode::kMarginal}) {
        Rng rng(11);
        EXPECT_LE(grad_check(m, batch, {gamma, mode}, all, Objective::kDraft, 1e-5, 250, rng), 1e-4)
            << to_string(kind) << " gamma=" << gamma;
      }
    }
  }
}

TEST(GradCheck, TargetObjective) {
  Rng data_rng(12);
  const auto batch = random_batch(3, 6, 3, data_rng);
  const Model m = toy_model({ArchKind::kFF, 1, 1, 3}, 0, 12);
  Rng rng(13);
  EXPECT_LE(grad_check(m, batch, {}, Trainable{true, true, false, false}, Objective::kTarget, 1e-5, 250, rng),
            1e-4);
}

TEST(GradCheck, LinearProbeIsExact) {
  const std::vector<double> a{1.5, -2.0, 0.25};
  auto f = [&](std::span<const double> x) { return a[0] * x[0] + a[1] * x[1] + a[2] * x[2]; };
  auto g = [&](std::span<const double>) { return a; };
  EXPECT_LE(grad_check(f, g, std::vector<double>{0.3, 0.1, -0.7}, 1e-5), 1e-7);
}

TEST(GradCheck, CorruptedGradientIsCaught) {
  auto f = [](std::span<const double> x) { return x[0] * x[0] + std::sin(x[1]); };
  auto g = [](std::span<const double> x) { return std::vector<double>{2 * x[0], 1.1 * std::cos(x[1])}; };
  EXPECT_GT(grad_check(f, g, std::vector<double>{0.4, 0.2}, 1e-5), 1e-2);
}

TEST(Gradient, ShardingDoesNotChangeTheResult) {
  Rng rng(14);
  const Model m = toy_model({ArchKind::kHMM, 3, 2, 3}, 1, 14);
  const auto batch = random_batch(20, 6, 3, rng);
  auto run = [&](const char* threads) {
    setenv("MTPC_THREADS", threads, 1);
    Model g = zeros_like(m);
    const double loss = mtp_loss_grad(m, batch, {}, g).loss;
    std::vector<double> flat{loss};
    for (const auto& nt : named_tensors(g)) flat.insert(flat.end(), nt.tensor->data.begin(), nt.tensor->data.end());
    return flat;
  };
  const auto one = run("1");
  const auto three = run("3");
  unsetenv("MTPC_THREADS");
  EXPECT_EQ(one, three);
}

TEST(Gradient, LossMatchesTheLossOnlyPath) {
  Rng rng(15);
  const Model m = toy_model({ArchKind::kBTree, 4, 2, 3}, 2, 15);
  const auto batch = random_batch(4, 7, 3, rng);
  Model g = zeros_like(m);
  EXPECT_NEAR(mtp_loss_grad(m, batch, {}, g).loss, mtp_loss(m, batch, {}).loss, 1e-12);
}

TEST(Train, LossDropsOnAMemorizableSet) {
  Rng rng(16);
  Model m = toy_model({ArchKind::kCP, 2, 2, 4}, 1, 16);
  const auto batch = random_batch(50, 8, 4, rng);
  OptimizerConfig opt;
  opt.lr = 0.02;
  opt.steps = 60;
  const double before = mtp_loss(m, batch, {}).loss;
  const auto result = train(m, batch, {}, opt, Trainable{}, Objective::kDraft);
  ASSERT_EQ(result.trace.size(), 60u);
  EXPECT_NEAR(result.trace.front().loss, before, 1e-12);
  EXPECT_LT(mtp_loss(m, batch, {}).loss, before);
}

TEST(Train, ZeroLearningRateLeavesTheModelAlone) {
  Rng rng(17);
  Model m = toy_model({ArchKind::kHMM, 2, 2, 3}, 1, 17);
  const Model before = m;
  OptimizerConfig opt;
  opt.lr = 0.0;
  opt.steps = 3;
  train(m, random_batch(4, 5, 3, rng), {}, opt, Trainable{true, true, true, true}, Objective::kDraft);
  Model copy = before;
  const auto a = named_tensors(m);
  const auto b = named_tensors(copy);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;
}

TEST(Train, FrozenGroupsStayFrozen) {
  Rng rng(18);
  Model m = toy_model({ArchKind::kCP, 2, 2, 3}, 1, 18);
  Model copy = m;
  OptimizerConfig opt;
  opt.lr = 0.05;
  opt.steps = 3;
  train(m, random_batch(4, 5, 3, rng), {}, opt, Trainable{}, Objective::kDraft);
  const auto a = named_tensors(m);
  const auto b = named_tensors(copy);
  bool head_moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].group == TensorGroup::kBackbone || a[i].group == TensorGroup::kTarget) {
      EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;
    } else if (a[i].group == TensorGroup::kHead) {
      head_moved = head_moved || !(*a[i].tensor == *b[i].tensor);
    }
  }
  EXPECT_TRUE(head_moved);
}

TEST(Train, SameSeedSameTrace) {
  Rng rng(19);
  const auto batch = random_batch(40, 6, 3, rng);
  OptimizerConfig opt;
  opt.lr = 0.01;
  opt.steps = 5;
  opt.batch_size = 8;
  opt.seed = 4;
  auto run = [&] {
    Model m = toy_model({ArchKind::kBTree, 2, 2, 3}, 1, 19);
    std::vector<double> losses;
    for (const auto& e : train(m, batch, {}, opt, Trainable{}, Objective::kDraft).trace) losses.push_back(e.loss);
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, TraceIsJsonl) {
  std::ostringstream out;
  write_trace_jsonl(out, TraceEntry{3, 1.25, {1.0, 0.5}});
  const auto doc = nlohmann::json::parse(out.str());
  EXPECT_EQ(doc.at("step"), 3);
  EXPECT_EQ(doc.at("loss"), 1.25);
  EXPECT_EQ(doc.at("l_j").size(), 2u);
}

TEST(Batch, CheckRejectsMisalignedMasks) {
  auto batch = TrainingBatch::all_valid({{0, 1, 2}});
  EXPECT_NO_THROW(batch.check(3));
  EXPECT_THROW(batch.check(2), ContractError);
  batch.valid[0].pop_back();
  EXPECT_THROW(batch.check(3), ContractError);
}

}  // namespace
}  // namespace mtpc
