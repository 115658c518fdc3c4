#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpc/circuit.hpp"
#include "mtpc/neural.hpp"
#include "mtpc/specdec.hpp"
#include "mtpc/teacher.hpp"
#include "mtpc/training.hpp"

namespace mtpc {

struct BenchConfig {
  int prompts = 32;
  int prompt_length = 8;
  int repetitions = 3;
  int generation_length = 256;
  DecodeMode mode = DecodeMode::kSample;
  std::uint64_t seed = 0;
  bool parallel = false;  // sweep cells across MTPC_THREADS workers
};

struct SweepGrid {
  std::vector<ArchKind> archs{ArchKind::kCP};
  std::vector<int> r{1};
  std::vector<int> n{2};
  std::vector<int> k{0};
};

// Everything needed to go from a teacher to a trained draft/verifier pair
// and to benchmark it. Parsed from one JSON document; see README.
struct PipelineConfig {
  TeacherConfig teacher;
  ArchitectureSpec arch{ArchKind::kCP, 4, 4, 8};
  int d = 16;
  int layers = 2;
  double decay = 0.7;
  int adapter_k = 0;
  int adapter_rank = 4;

  int sequences = 256;
  int length = 32;
  int prompt_length = 0;  // leading positions of each sequence left unsupervised
  std::uint64_t data_seed = 1;

  OptimizerConfig target_opt{0.01, 0.9, 0.999, 1e-8, 300, 32, 2};
  OptimizerConfig draft_opt{0.01, 0.9, 0.999, 1e-8, 300, 32, 3};
  LossConfig loss;
  int warmstart_steps = 0;  // FF steps before converting to the target architecture
  double beta = 10.0;
  double head_init_std = 0.02;
  std::uint64_t seed = 0;

  BenchConfig bench;
  SweepGrid grid;
  std::string checkpoint;  // optional: load instead of training
  std::string baseline_store;
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc);
PipelineConfig load_pipeline_config(const std::string& path);
nlohmann::json to_json(const PipelineConfig& cfg);

struct Trunk {
  ToyBackbone backbone;
  TargetSTP target;
};

using TraceSink = std::function<void(const char* phase, const TraceEntry&)>;

TrainingBatch make_dataset(const PipelineConfig& cfg, const Teacher& teacher);

// Backbone + target head trained on next-token prediction.
Trunk train_trunk(const PipelineConfig& cfg, const TrainingBatch& data, const TraceSink& sink = {});

// Draft model for `arch` and adapter depth k on top of a trunk, initialized
// from an FF head (optionally warm-started) but not yet trained.
Model init_draft_model(const PipelineConfig& cfg, const Trunk& trunk, const ArchitectureSpec& arch,
                       int k, const TrainingBatch& data, const TraceSink& sink = {});

// Trains head and adapter with the backbone frozen.
TrainResult train_draft(Model& model, const PipelineConfig& cfg, const TrainingBatch& data,
                        const TraceSink& sink = {});

// Teacher -> data -> trunk -> draft model for cfg.arch / cfg.adapter_k.
Model run_pipeline(const PipelineConfig& cfg, const TraceSink& sink = {});

// Untrained model with random weights everywhere (adapter deltas included);
// used by tests and the self-check.
Model random_model(const ArchitectureSpec& arch, int d, int layers, int k, double head_std, Rng& rng);

std::vector<std::vector<int>> make_prompts(const Teacher& teacher, int count, int length,
                                           std::uint64_t seed);

}  // namespace mtpc
