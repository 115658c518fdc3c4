#pragma once

#include <span>
#include <vector>

#include "mtpc/circuit.hpp"
#include "mtpc/numeric.hpp"

namespace mtpc {

// Input categoricals and sum weights for one context.
//
// phi is laid out [position][component][token]; omega[t] is table t stored
// row-major (rows = units of the owning sum layer, cols = its inputs).
struct CircuitParams {
  int n = 0;
  int components = 0;
  int v = 0;
  std::vector<double> phi;
  std::vector<std::vector<double>> omega;

  std::span<const double> phi_row(int position, int component) const {
    return {phi.data() + (static_cast<std::size_t>(position) * components + component) * v,
            static_cast<std::size_t>(v)};
  }
  std::span<double> phi_row(int position, int component) {
    return {phi.data() + (static_cast<std::size_t>(position) * components + component) * v,
            static_cast<std::size_t>(v)};
  }

  static CircuitParams uniform(const Circuit& circuit);
  // Softmax of N(0, logit_scale^2) logits for every row.
  static CircuitParams random(const Circuit& circuit, Rng& rng, double logit_scale = 1.0);
};

// Throws ContractError when shapes do not match the circuit.
void check_param_shapes(const Circuit& circuit, const CircuitParams& params);
// Shapes plus simplex constraints on every row.
void check_params(const Circuit& circuit, const CircuitParams& params, double tol = 1e-9);

struct LogParams {
  int n = 0;
  int components = 0;
  int v = 0;
  std::vector<double> log_phi;
  std::vector<double> log_mass;  // log of each phi row's total, [position][component]
  std::vector<std::vector<double>> log_omega;

  static LogParams from(const Circuit& circuit, const CircuitParams& params);
};

// Feed-forward pass over a batch of evidence windows. Each window has n
// entries; a token id marks an observed position and -1 a marginalized one.
// Marginalized inputs output their total mass (1 for normalized rows).
class ForwardTape {
 public:
  ForwardTape(const Circuit& circuit, const LogParams& lp, std::span<const int> evidence,
              int batch);

  int batch() const { return batch_; }
  double output(int b) const { return values_[circuit_->output][b]; }
  // Unit-major values of one layer: entry u * batch + b.
  std::span<const double> values(int layer) const { return values_[layer]; }
  const Circuit& circuit() const { return *circuit_; }
  const LogParams& log_params() const { return *lp_; }
  int evidence(int b, int position) const {
    return evidence_[static_cast<std::size_t>(b) * circuit_->spec.n + position];
  }

 private:
  const Circuit* circuit_;
  const LogParams* lp_;
  std::vector<int> evidence_;
  int batch_;
  std::vector<std::vector<double>> values_;
};

// Gradients of sum_b seed[b] * log c(evidence_b) with respect to log phi
// entries and log omega entries. Marginalized inputs contribute nothing:
// for softmax-parameterized rows their mass is identically 1.
struct LogParamGrads {
  std::vector<double> log_phi;
  std::vector<std::vector<double>> log_omega;

  static LogParamGrads zeros_like(const LogParams& lp);
};

void backward(const ForwardTape& tape, std::span<const double> seeds, LogParamGrads& grads);

}  // namespace mtpc
