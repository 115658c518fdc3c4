#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mtpc/neural.hpp"

namespace mtpc {

// valid[s][t] marks position t of sequence s as a supervised output.
struct TrainingBatch {
  std::vector<std::vector<int>> sequences;
  std::vector<std::vector<char>> valid;

  static TrainingBatch all_valid(std::vector<std::vector<int>> sequences);
  std::size_t size() const { return sequences.size(); }
  void check(int v) const;
};

// kConditional scores offset j with q(x_{t+j} | x_<=t, x_{t+1..t+j-1}), the
// chain-rule factor of the window likelihood. kMarginal scores it with the
// single-position marginal q(x_{t+j} | x_<=t), which ignores dependencies
// inside the window.
enum class LossMode { kConditional, kMarginal };

struct LossConfig {
  double gamma = 0.9;
  LossMode mode = LossMode::kConditional;
};

struct LossValue {
  double loss = 0.0;
  std::vector<double> l_j;  // undiscounted per-offset terms
};

// Discounted multi-token loss of the draft head over overlapping windows.
// Every prefix x_0..x_t opens a window; offset j contributes when position
// t + j exists and is valid, normalized by (sequences * valid count of that
// sequence at offset j). ContractError when nothing is valid.
LossValue mtp_loss(const Model& model, const TrainingBatch& batch, const LossConfig& cfg);

// Same loss, and gradients accumulated into `grad` (a zeroed model of the
// same shapes). Backbone gradients are skipped when with_backbone is false.
LossValue mtp_loss_grad(const Model& model, const TrainingBatch& batch, const LossConfig& cfg,
                        Model& grad, bool with_backbone = true);

// Next-token NLL of the target head on the verifier path, same normalization.
LossValue stp_loss(const Model& model, const TrainingBatch& batch);
LossValue stp_loss_grad(const Model& model, const TrainingBatch& batch, Model& grad,
                        bool with_backbone = true);

Model zeros_like(const Model& model);

enum class Objective { kDraft, kTarget };

// Which tensor groups the optimizer may change.
struct Trainable {
  bool backbone = false;
  bool target = false;
  bool adapter = true;
  bool head = true;

  bool allows(TensorGroup group) const;
};

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 100;
  int batch_size = 0;  // sequences per step; 0 = full batch
  std::uint64_t seed = 0;
};

struct TraceEntry {
  int step = 0;
  double loss = 0.0;
  std::vector<double> l_j;
};

struct TrainResult {
  std::vector<TraceEntry> trace;
};

// Adam on the trainable tensors. Mini-batches are drawn with a generator
// seeded from opt.seed, so runs are reproducible. DivergenceError on a
// non-finite loss. `on_step` (optional) sees every trace entry.
TrainResult train(Model& model, const TrainingBatch& data, const LossConfig& loss_cfg,
                  const OptimizerConfig& opt, const Trainable& trainable, Objective objective,
                  const std::function<void(const TraceEntry&)>& on_step = {});

void write_trace_jsonl(std::ostream& out, const TraceEntry& entry);

// Central finite differences on `coords` random coordinates of the
// trainable tensors (all of them when the model is smaller). Returns the
// worst |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
double grad_check(const Model& model, const TrainingBatch& batch, const LossConfig& cfg,
                  const Trainable& trainable, Objective objective, double step, int coords,
                  Rng& rng);

// Same check for an arbitrary function with a claimed gradient.
double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& grad,
                  std::span<const double> x, double step);

}  // namespace mtpc
