#include "mtpc/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtpc/error.hpp"

namespace mtpc {

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double logsumexp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  if (std::isinf(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double hi = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (double& x : out) {
    x = std::exp(x - hi);
    z += x;
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& x : out) x -= lse;
  return out;
}

int argmax(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("argmax of empty span");
  int best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = static_cast<int>(i);
  }
  return best;
}

double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (!(total > 0.0)) throw ContractError("sample_categorical: no positive mass");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

int sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  const double lse = logsumexp(log_weights);
  if (lse == kNegInf) throw ContractError("sample_log_categorical: no positive mass");
  std::vector<double> probs(log_weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(log_weights[i] - lse);
  return sample_categorical(probs, rng);
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("total_variation: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return 0.5 * acc;
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  data.assign(count, fill);
}

Tensor Tensor::randn(std::vector<std::size_t> dims, double stddev, Rng& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.data) x = dist(rng);
  return t;
}

void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = a + i * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_t_acc(const double* a, std::size_t rows, std::size_t cols, const double* g,
                  double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    const double* row = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += gi * row[j];
  }
}

void outer_acc(double* a, std::size_t rows, std::size_t cols, const double* g, const double* x) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    double* row = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
  }
}

}  // namespace mtpc
