#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace mtpc {

using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) with -inf handled.
double log_add(double a, double b);

// Stable log-sum-exp; returns -inf for an empty span or all -inf entries.
double logsumexp(std::span<const double> xs);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Index of the largest entry, ties broken towards the smallest index.
int argmax(std::span<const double> xs);

int sample_categorical(std::span<const double> probs, Rng& rng);
int sample_log_categorical(std::span<const double> log_weights, Rng& rng);

double uniform01(Rng& rng);

double total_variation(std::span<const double> a, std::span<const double> b);

// Dense row-major tensor. Layout of each tensor is documented where it is
// declared; this type only carries the buffer and its shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t numel() const { return data.size(); }
  double* ptr(std::size_t offset = 0) { return data.data() + offset; }
  const double* ptr(std::size_t offset = 0) const { return data.data() + offset; }

  static Tensor randn(std::vector<std::size_t> dims, double stddev, Rng& rng);

  bool operator==(const Tensor&) const = default;
};

// y = A x for A stored row-major as rows x cols.
void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
// y += A^T g
void matvec_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g,
                  double* y);
// A += g x^T
void outer_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x);

}  // namespace mtpc
