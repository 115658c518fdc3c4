#include "mtpc/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtpc/error.hpp"

namespace mtpc {

std::string_view to_string(TeacherKind kind) {
  return kind == TeacherKind::kNgram ? "NGRAM" : "LATENT_CHAIN";
}

TeacherKind teacher_from_string(std::string_view name) {
  if (name == "NGRAM") return TeacherKind::kNgram;
  if (name == "LATENT_CHAIN") return TeacherKind::kLatentChain;
  throw SpecError("unknown teacher kind: " + std::string(name));
}

std::vector<int> Teacher::sample(int len, Rng& rng, std::span<const int> prefix) const {
  std::vector<int> seq(prefix.begin(), prefix.end());
  for (int i = 0; i < len; ++i) seq.push_back(sample_categorical(next_dist(seq), rng));
  return {seq.begin() + static_cast<std::ptrdiff_t>(prefix.size()), seq.end()};
}

namespace {

class NgramTeacher final : public Teacher {
 public:
  NgramTeacher(const TeacherConfig& cfg) : Teacher(cfg.v), order_(cfg.order) {
    if (cfg.order < 0) throw SpecError("ngram order must be >= 0");
    if (std::pow(static_cast<double>(cfg.v), cfg.order) > 1e6) throw GuardError("ngram table too large");
    std::size_t rows = 1;
    for (int i = 0; i < cfg.order; ++i) rows *= static_cast<std::size_t>(cfg.v);
    Rng rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.logit_scale);
    table_.reserve(rows);
    std::vector<double> logits(cfg.v);
    for (std::size_t r = 0; r < rows; ++r) {
      for (double& x : logits) x = noise(rng);
      table_.push_back(softmax(logits));
    }
  }

  std::vector<double> next_dist(std::span<const int> prefix) const override {
    std::size_t row = 0;
    const int len = static_cast<int>(prefix.size());
    for (int i = len - order_; i < len; ++i) {
      const int tok = i >= 0 ? prefix[i] : 0;
      if (tok < 0 || tok >= v()) throw ContractError("token id out of range");
      row = row * static_cast<std::size_t>(v()) + static_cast<std::size_t>(tok);
    }
    return table_[row];
  }

 private:
  int order_;
  std::vector<std::vector<double>> table_;
};

// Hidden state (mode, phase); phase advances every token, the mode is redrawn
// when the phase wraps.
class LatentChainTeacher final : public Teacher {
 public:
  LatentChainTeacher(const TeacherConfig& cfg)
      : Teacher(cfg.v), modes_(cfg.modes), segment_(cfg.segment), noise_(cfg.noise) {
    if (cfg.modes < 1 || cfg.segment < 1) throw SpecError("latent chain needs modes, segment >= 1");
    if (!(cfg.noise >= 0.0 && cfg.noise <= 1.0)) throw SpecError("noise must lie in [0, 1]");
    Rng rng(cfg.seed);
    std::vector<int> perm(cfg.v);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    templates_.resize(static_cast<std::size_t>(modes_) * segment_);
    for (std::size_t s = 0; s < templates_.size(); ++s) templates_[s] = perm[s % perm.size()];
  }

  std::vector<double> next_dist(std::span<const int> prefix) const override {
    const int S = modes_ * segment_;
    std::vector<double> belief(S, 0.0), next(S);
    for (int m = 0; m < modes_; ++m) belief[state(m, 0)] = 1.0 / modes_;
    for (int tok : prefix) {
      if (tok < 0 || tok >= v()) throw ContractError("token id out of range");
      double z = 0.0;
      for (int s = 0; s < S; ++s) {
        belief[s] *= emission(s, tok);
        z += belief[s];
      }
      for (double& b : belief) b /= z;
      std::fill(next.begin(), next.end(), 0.0);
      for (int m = 0; m < modes_; ++m) {
        for (int p = 0; p < segment_; ++p) {
          const double b = belief[state(m, p)];
          if (p + 1 < segment_) {
            next[state(m, p + 1)] += b;
          } else {
            for (int m2 = 0; m2 < modes_; ++m2) next[state(m2, 0)] += b / modes_;
          }
        }
      }
      belief.swap(next);
    }
    std::vector<double> dist(v(), 0.0);
    for (int s = 0; s < S; ++s) {
      for (int x = 0; x < v(); ++x) dist[x] += belief[s] * emission(s, x);
    }
    return dist;
  }

 private:
  int state(int mode, int phase) const { return mode * segment_ + phase; }
  double emission(int s, int tok) const {
    return (tok == templates_[s] ? 1.0 - noise_ : 0.0) + noise_ / v();
  }

  int modes_;
  int segment_;
  double noise_;
  std::vector<int> templates_;
};

}  // namespace

std::unique_ptr<Teacher> make_teacher(const TeacherConfig& cfg) {
  if (cfg.v < 2) throw SpecError("teacher needs v >= 2");
  switch (cfg.kind) {
    case TeacherKind::kNgram: return std::make_unique<NgramTeacher>(cfg);
    case TeacherKind::kLatentChain: return std::make_unique<LatentChainTeacher>(cfg);
  }
  throw SpecError("unknown teacher kind");
}

TrainingBatch distill_dataset(const Teacher& teacher, int count, int len, std::uint64_t seed,
                              int prompt_len) {
  if (count < 1 || len < 1) throw ContractError("dataset needs count >= 1 and len >= 1");
  Rng rng(seed);
  TrainingBatch batch;
  for (int i = 0; i < count; ++i) {
    batch.sequences.push_back(teacher.sample(len, rng));
    std::vector<char> valid(len, 1);
    for (int t = 0; t < std::min(prompt_len, len); ++t) valid[t] = 0;
    batch.valid.push_back(std::move(valid));
  }
  return batch;
}

}  // namespace mtpc
