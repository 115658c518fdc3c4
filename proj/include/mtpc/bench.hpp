#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpc/pipeline.hpp"

namespace mtpc {

// Rates are per second of the measured region, which covers decode cycles
// only: model construction and prompt prefill happen before the clock starts.
inline constexpr const char* kTimingRegion =
    "decode cycles only; model construction and prompt prefill excluded";

struct MetricRecord {
  std::string arch;
  int r = 1;
  int n = 1;
  int k = 0;
  double mu_acc = 0.0;
  double mu_acc_std = 0.0;
  double mu_lat = 0.0;
  double mu_lat_std = 0.0;
  double mu_toks = 0.0;
  double mu_toks_std = 0.0;
  double est_toks = 0.0;
  double max_toks = 0.0;
  double speedup = 0.0;
  std::string tag;
  std::string error;
};

double est_toks(double mu_acc, double mu_lat);
// record.mu_toks / baseline.mu_toks; GuardError for a zero baseline.
double speedup(const MetricRecord& record, const MetricRecord& baseline);

using PromptSets = std::vector<std::vector<std::vector<int>>>;

PromptSets make_prompt_sets(const Teacher& teacher, const BenchConfig& bench);

// Shared-state speculative decoding over every prompt set; means and sample
// standard deviations are across sets. Also fills max_toks.
MetricRecord measure(const Model& model, const PromptSets& sets, const BenchConfig& bench);
// Same loop with verification disabled (every drafted token emitted).
double max_throughput(const Model& model, const PromptSets& sets, const BenchConfig& bench);
// One-token-at-a-time target decoding; mu_acc is 1 by definition.
MetricRecord measure_ar(const Model& model, const PromptSets& sets, const BenchConfig& bench);

nlohmann::json to_json(const MetricRecord& rec);
MetricRecord record_from_json(const nlohmann::json& doc);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const MetricRecord& rec);

// Baseline records stored by tag in a JSONL file; later lines win.
std::map<std::string, MetricRecord> load_baselines(const std::string& path);
void store_baseline(const std::string& path, const MetricRecord& rec);

// One record per grid cell; a failing cell becomes a row with `error` set.
// The trunk is trained once and shared by all cells.
std::vector<MetricRecord> sweep(const PipelineConfig& cfg, const std::optional<MetricRecord>& baseline,
                                std::ostream* csv, std::ostream* jsonl);

}  // namespace mtpc
