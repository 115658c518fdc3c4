#pragma once

#include <span>
#include <vector>

#include "mtpc/circuit.hpp"
#include "mtpc/engine.hpp"
#include "mtpc/neural.hpp"

namespace mtpc::reference {

// Direct evaluation of each architecture's defining formula in probability
// space, independent of the layered engine:
//   FF     prod_i phi_i(x_i)
//   CP     sum_j w_j prod_i phi_ij(x_i)
//   HMM    sum over every latent path z of prior(z_0) prod_i T_i(z_i | z_{i-1}) phi_{i z_i}(x_i)
//   BTREE  recursive mixture over each split, leaves phi_ij
// Only the location of each omega table is read from the circuit.
double probability(const Circuit& circuit, const CircuitParams& params, std::span<const int> window);

// Sum of probability() over every completion of a prefix.
double prefix_probability(const Circuit& circuit, const CircuitParams& params,
                          std::span<const int> prefix);

// Every window, lexicographic order.
std::vector<double> joint(const Circuit& circuit, const CircuitParams& params);

// Exact law of the first m tokens of autoregressive decoding from the target
// head, lexicographic order over v^m sequences.
std::vector<double> ar_law(const ToyBackbone& backbone, const TargetSTP& target,
                           std::span<const int> prompt, int m);

}  // namespace mtpc::reference
