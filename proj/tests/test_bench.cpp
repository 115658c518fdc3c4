#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "mtpc/bench.hpp"
#include "mtpc/error.hpp"

namespace mtpc {
namespace {

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.teacher.v = 4;
  cfg.arch = {ArchKind::kCP, 2, 2, 4};
  cfg.d = 6;
  cfg.layers = 2;
  cfg.sequences = 16;
  cfg.length = 10;
  cfg.target_opt.steps = 5;
  cfg.draft_opt.steps = 5;
  cfg.target_opt.batch_size = 8;
  cfg.draft_opt.batch_size = 8;
  cfg.bench.prompts = 2;
  cfg.bench.prompt_length = 3;
  cfg.bench.repetitions = 2;
  cfg.bench.generation_length = 12;
  return cfg;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::size_t count_fields(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

TEST(Metrics, EstimatedThroughputArithmetic) {
  EXPECT_DOUBLE_EQ(est_toks(6.0, 0.03), 6.0 / 0.03);
  EXPECT_NEAR(est_toks(6.0, 0.03), 200.0, 1e-9);
  EXPECT_NEAR(est_toks(5.14, 0.0290), 177.24, 0.01);
  EXPECT_THROW(est_toks(1.0, 0.0), GuardError);
}

TEST(Metrics, Speedup) {
  MetricRecord a;
  a.mu_toks = 219.1;
  MetricRecord stp;
  stp.mu_toks = 40.03;
  EXPECT_NEAR(speedup(a, stp), 5.47, 0.005);
  EXPECT_EQ(speedup(a, a), 1.0);
  EXPECT_THROW(speedup(a, MetricRecord{}), GuardError);
}

TEST(Metrics, RecordJsonRoundTrip) {
  MetricRecord r;
  r.arch = "BTREE";
  r.r = 8;
  r.n = 16;
  r.k = 2;
  r.mu_acc = 3.5;
  r.mu_lat = 0.01;
  r.est_toks = 350.0;
  r.tag = "x";
  const auto doc = to_json(r);
  EXPECT_EQ(doc.at("timing"), kTimingRegion);
  const auto back = record_from_json(doc);
  EXPECT_EQ(back.arch, r.arch);
  EXPECT_EQ(back.n, 16);
  EXPECT_EQ(back.mu_acc, 3.5);
  EXPECT_EQ(back.tag, "x");
  EXPECT_THROW(record_from_json(nlohmann::json::object()), ConfigError);
}

TEST(Csv, FixedHeaderAndErrorRows) {
  std::ostringstream out;
  write_csv_header(out);
  MetricRecord ok;
  ok.arch = "CP";
  ok.r = 2;
  ok.n = 4;
  ok.mu_acc = 1.5;
  write_csv_row(out, ok);
  MetricRecord bad = ok;
  bad.error = "boom";
  write_csv_row(out, bad);
  const auto rows = lines_of(out.str());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "arch,r,n,k,mu_acc,mu_acc_std,mu_lat,mu_lat_std,mu_toks,mu_toks_std,est_toks,max_toks,speedup");
  EXPECT_EQ(count_fields(rows[1]), 13u);
  EXPECT_EQ(count_fields(rows[2]), 13u);
  EXPECT_EQ(rows[2], "CP,2,4,0,,,,,,,,,");
}

TEST(Baselines, StoreAndReloadByTag) {
  const auto path = std::filesystem::temp_directory_path() / "mtpc_baselines_test.jsonl";
  std::filesystem::remove(path);
  EXPECT_TRUE(load_baselines(path.string()).empty());
  MetricRecord r;
  r.arch = "STP";
  r.mu_toks = 10.0;
  EXPECT_THROW(store_baseline(path.string(), r), ContractError);
  r.tag = "STP";
  store_baseline(path.string(), r);
  r.mu_toks = 12.0;
  store_baseline(path.string(), r);
  const auto store = load_baselines(path.string());
  ASSERT_EQ(store.count("STP"), 1u);
  EXPECT_EQ(store.at("STP").mu_toks, 12.0);
  std::filesystem::remove(path);
}

TEST(Measure, RatesAreConsistent) {
  Rng rng(1);
  const Model m = random_model({ArchKind::kCP, 3, 2, 4}, 6, 2, 1, 0.5, rng);
  const auto teacher = make_teacher(tiny_config().teacher);
  BenchConfig bench = tiny_config().bench;
  const auto sets = make_prompt_sets(*teacher, bench);
  ASSERT_EQ(sets.size(), 2u);
  const auto rec = measure(m, sets, bench);
  EXPECT_GE(rec.mu_acc, 0.0);
  EXPECT_LE(rec.mu_acc, 3.0);
  EXPECT_GT(rec.mu_lat, 0.0);
  EXPECT_GT(rec.mu_toks, 0.0);
  EXPECT_GT(rec.max_toks, 0.0);
  EXPECT_EQ(rec.est_toks, rec.mu_acc / rec.mu_lat);
  const auto ar = measure_ar(m, sets, bench);
  EXPECT_EQ(ar.mu_acc, 1.0);
  EXPECT_EQ(ar.arch, "STP");
}

TEST(Sweep, OneRowPerCellAndFailuresBecomeRows) {
  PipelineConfig cfg = tiny_config();
  cfg.grid.archs = {ArchKind::kCP};
  cfg.grid.r = {2};
  cfg.grid.n = {2};
  cfg.grid.k = {0, 5};  // k = 5 exceeds the backbone depth
  std::ostringstream csv, jsonl;
  const auto rows = sweep(cfg, std::nullopt, &csv, &jsonl);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[1].error.empty());
  EXPECT_EQ(rows[1].k, 5);
  const auto csv_rows = lines_of(csv.str());
  ASSERT_EQ(csv_rows.size(), 3u);
  EXPECT_EQ(csv_rows[2], "CP,2,2,5,,,,,,,,,");
  const auto json_rows = lines_of(jsonl.str());
  ASSERT_EQ(json_rows.size(), 2u);
  EXPECT_TRUE(nlohmann::json::parse(json_rows[1]).contains("error"));
  EXPECT_EQ(nlohmann::json::parse(json_rows[0]).at("timing"), kTimingRegion);
}

TEST(Sweep, TokenStreamsAreReproducible) {
  PipelineConfig cfg = tiny_config();
  const auto teacher = make_teacher(cfg.teacher);
  const Model a = run_pipeline(cfg);
  const Model b = run_pipeline(cfg);
  const auto prompt = make_prompts(*teacher, 1, 3, 5).front();
  Session x(a, prompt, DecodeMode::kSample, 9);
  Session y(b, prompt, DecodeMode::kSample, 9);
  EXPECT_EQ(shared_state_decode(x, 30), shared_state_decode(y, 30));
}

TEST(Distillation, TrainingRaisesAcceptance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.data_seed = seed;
    cfg.d = 8;
    cfg.sequences = 64;
    cfg.length = 16;
    cfg.target_opt.steps = 150;
    cfg.draft_opt.steps = 150;
    cfg.arch = {ArchKind::kCP, 3, 4, cfg.teacher.v};
    cfg.bench.prompts = 8;
    cfg.bench.generation_length = 48;
    cfg.bench.repetitions = 1;
    const auto teacher = make_teacher(cfg.teacher);
    const auto data = make_dataset(cfg, *teacher);
    const Trunk trunk = train_trunk(cfg, data);
    Model m = init_draft_model(cfg, trunk, cfg.arch, cfg.adapter_k, data);
    const auto sets = make_prompt_sets(*teacher, cfg.bench);
    const double before = measure(m, sets, cfg.bench).mu_acc;
    train_draft(m, cfg, data);
    const double after = measure(m, sets, cfg.bench).mu_acc;
    EXPECT_GT(after, before) << "seed " << seed;
  }
}

}  // namespace
}  // namespace mtpc
