#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtpc/circuit.hpp"
#include "mtpc/engine.hpp"
#include "mtpc/numeric.hpp"

namespace mtpc {

// Causal toy encoder. The representation of prefix x_0..x_t is
//
//   h_0 = embed[x_t] + pool_t,   pool_t = decayed mean of context[x_tau], tau < t
//   h_l = h_{l-1} + tanh(weight[l-1] h_{l-1} + bias[l-1])
//
// and encode() returns h_L. decay = 1 gives a plain running mean; smaller
// values weight recent tokens more, which keeps order information.
struct ToyBackbone {
  int v = 0;
  int d = 0;
  int layers = 0;
  double decay = 1.0;
  Tensor embed;                 // v x d
  Tensor context;               // v x d
  std::vector<Tensor> weight;   // layers x (d x d)
  std::vector<Tensor> bias;     // layers x (d)

  static ToyBackbone random(int v, int d, int layers, double decay, Rng& rng);
  ToyBackbone zeros_like() const;
};

// Private low-rank deltas on the last k layers. Adapter layer a modifies
// backbone layer layers - k + a: weight += up * down, bias += bias_delta.
struct DraftAdapter {
  int k = 0;
  int rank = 4;
  std::vector<Tensor> up;     // d x rank
  std::vector<Tensor> down;   // rank x d
  std::vector<Tensor> bias;   // d

  // up starts at zero so the draft path initially equals the verifier path.
  static DraftAdapter create(int k, int rank, int d, Rng& rng);
  static DraftAdapter zeros(int k, int rank, int d);
  DraftAdapter zeros_like() const;
};

// W is n x components x v x d; R[t] is rows x cols x d and bias_R[t] rows x cols
// for omega table t.
struct ParamHead {
  ArchitectureSpec spec;
  int d = 0;
  int components = 1;
  Tensor W;
  std::vector<Tensor> R;
  std::vector<Tensor> bias_R;

  static ParamHead zeros(const Circuit& circuit, int d);
  static ParamHead random(const Circuit& circuit, int d, double stddev, Rng& rng);
  ParamHead zeros_like() const;
};

struct TargetSTP {
  Tensor U;  // v x d
  static TargetSTP zeros(int v, int d);
};

// Running pooled context for incremental encoding.
struct PoolState {
  std::vector<double> acc;
  double norm = 0.0;

  explicit PoolState(int d = 0) : acc(d, 0.0) {}
  void absorb(const ToyBackbone& bb, int token);
};

void check_prefix(const ToyBackbone& bb, std::span<const int> prefix);

// Layer-0 activation for the newest token given the pool of earlier tokens.
std::vector<double> input_activation(const ToyBackbone& bb, const PoolState& pool, int token);
// Applies layers [from, to) in place; adapter may be null (base layers only).
void run_layers(const ToyBackbone& bb, const DraftAdapter* adapter, std::vector<double>& h,
                int from, int to);

// Activations h_0..h_L of the verifier pass for the whole prefix.
std::vector<std::vector<double>> encode_layers(const ToyBackbone& bb, std::span<const int> prefix);
std::vector<double> encode(const ToyBackbone& bb, std::span<const int> prefix);
std::vector<double> encode_draft(const ToyBackbone& bb, const DraftAdapter& adapter,
                                 std::span<const int> prefix);

CircuitParams parameterize(const ParamHead& head, const Circuit& circuit, std::span<const double> e);

// Backpropagates gradients with respect to log phi / log omega through the
// softmax rows into head gradients and the embedding gradient de.
void parameterize_backward(const ParamHead& head, const Circuit& circuit,
                           std::span<const double> e, const CircuitParams& params,
                           const LogParamGrads& grads, ParamHead& head_grad,
                           std::span<double> de);

std::vector<double> target_logits(const TargetSTP& target, std::span<const double> e);
std::vector<double> target_next_dist(const TargetSTP& target, std::span<const double> e);

ParamHead init_cp_from_ff(const ParamHead& ff, int r, Rng& rng);
ParamHead init_hmm_identity(const ParamHead& cp, double beta = 10.0);
ParamHead init_btree_from_ff(const ParamHead& ff, int r, double beta, Rng& rng);

struct Model {
  ToyBackbone backbone;
  TargetSTP target;
  DraftAdapter adapter;
  ParamHead head;
  Circuit circuit;
};

// Named view over every tensor of a model, in a fixed order. Used by the
// optimizer, gradient checks and checkpoints.
enum class TensorGroup { kBackbone, kTarget, kAdapter, kHead };

struct NamedTensor {
  std::string name;
  TensorGroup group;
  Tensor* tensor;
};

std::vector<NamedTensor> named_tensors(Model& model);

}  // namespace mtpc
