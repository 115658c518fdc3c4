#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "mtpc/circuit.hpp"
#include "mtpc/engine.hpp"
#include "mtpc/numeric.hpp"

namespace mtpc {

// All functions validate shapes and token ranges (ContractError) and work in
// the log domain. Positions are 0-based.

double evaluate(const Circuit& circuit, const CircuitParams& params, std::span<const int> window);

// Every input replaced by its total mass.
double partition(const Circuit& circuit, const CircuitParams& params);

// Entry i is log q(window[0..i]); the last entry equals evaluate(window).
std::vector<double> prefix_marginals(const Circuit& circuit, const CircuitParams& params,
                                     std::span<const int> window);
// Same, reusing precomputed logs.
std::vector<double> prefix_marginals(const Circuit& circuit, const LogParams& lp,
                                     std::span<const int> window);

// Entry i is log q(x_i | x_<i) = pm[i] - pm[i-1].
std::vector<double> conditionals_from_prefix(std::span<const double> pm);

// Full distribution q(x_i = . | prefix), prefix.size() == i.
std::vector<double> conditional_distribution(const Circuit& circuit, const LogParams& lp,
                                             std::span<const int> prefix);

std::vector<int> sample_window(const Circuit& circuit, const CircuitParams& params, Rng& rng);
// Samples free positions (-1) given the observed ones.
std::vector<int> sample_window_given(const Circuit& circuit, const CircuitParams& params,
                                     std::span<const int> evidence, Rng& rng);

// Chained conditional argmax; ties go to the smallest token id.
std::vector<int> greedy_window(const Circuit& circuit, const CircuitParams& params);
// Same with the first prefix.size() positions fixed.
std::vector<int> greedy_window_given(const Circuit& circuit, const CircuitParams& params,
                                     std::span<const int> prefix);

inline constexpr double kMaxEnumeration = 1e6;

// Probability of every window, index = sum_i x_i * v^(n-1-i). GuardError when
// v^n exceeds kMaxEnumeration.
std::vector<double> enumerate_joint(const Circuit& circuit, const CircuitParams& params);
std::vector<int> window_from_index(std::size_t index, int n, int v);
void write_joint_csv(std::ostream& out, const Circuit& circuit, std::span<const double> table);

}  // namespace mtpc
