#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "mtpc/numeric.hpp"
#include "mtpc/training.hpp"

namespace mtpc {

enum class TeacherKind { kNgram, kLatentChain };

std::string_view to_string(TeacherKind kind);
TeacherKind teacher_from_string(std::string_view name);

struct TeacherConfig {
  TeacherKind kind = TeacherKind::kLatentChain;
  int v = 8;
  std::uint64_t seed = 0;
  // NGRAM: next token depends on the last `order` tokens (left-padded with
  // token 0); rows are softmax of N(0, logit_scale^2) logits.
  int order = 2;
  double logit_scale = 2.0;
  // LATENT_CHAIN: a hidden mode picks a template of `segment` tokens; the
  // mode is redrawn uniformly after every segment. Each emission is the
  // template token with probability 1 - noise, otherwise uniform.
  int modes = 2;
  int segment = 2;
  double noise = 0.02;
};

class Teacher {
 public:
  virtual ~Teacher() = default;
  int v() const { return v_; }
  // Exact p(x_{t+1} | prefix); the prefix may be empty.
  virtual std::vector<double> next_dist(std::span<const int> prefix) const = 0;
  // Exact sample of `len` tokens continuing `prefix`.
  virtual std::vector<int> sample(int len, Rng& rng, std::span<const int> prefix = {}) const;

 protected:
  explicit Teacher(int v) : v_(v) {}

 private:
  int v_;
};

std::unique_ptr<Teacher> make_teacher(const TeacherConfig& cfg);

// count sequences of length len; the first prompt_len positions of each are
// marked invalid (context only).
TrainingBatch distill_dataset(const Teacher& teacher, int count, int len, std::uint64_t seed,
                              int prompt_len = 0);

}  // namespace mtpc
