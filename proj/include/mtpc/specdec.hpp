#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "mtpc/inference.hpp"
#include "mtpc/neural.hpp"

namespace mtpc {

enum class DecodeMode { kGreedy, kSample };

std::string_view to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(std::string_view name);

// What happens to the verifier's extra token after a cycle.
//
// kCarry:   zero accepted -> emit it, S state goes stale (caught up next
//           cycle); rejection after s >= 1 accepted -> emit it and condition
//           the next draft window on it (its S state is computed by the next
//           cycle's single S pass); everything accepted -> drop it.
// kDrop:    like kCarry except that after s >= 1 accepted the rejection
//           token is discarded and the position is redrafted. This skews
//           the output law away from the verifier's and is kept only to
//           demonstrate that.
// kVanilla: always emit it; the S state is caught up every cycle.
enum class FreeTokenPolicy { kCarry, kDrop, kVanilla };

// max(0, p - q) renormalized. GuardError when p <= q everywhere.
std::vector<double> residual_dist(std::span<const double> p, std::span<const double> q);

struct VerifyResult {
  int accepted = 0;     // s
  int final_token = -1; // residual / verifier token on rejection, -1 if all accepted
};

// Token-level speculative verification of window[0..). p_rows[i] is the
// verifier distribution for window[i]; log_q[i] the draft log-conditional of
// window[i]; q_row(i) returns the full draft conditional at position i (only
// called on rejection).
VerifyResult verify(std::span<const int> window, std::span<const double> log_q,
                    const std::vector<std::vector<double>>& p_rows,
                    const std::function<std::vector<double>(int)>& q_row, Rng& rng);

// Accept while the drafted token equals the verifier argmax; on mismatch the
// final token is that argmax.
VerifyResult verify_greedy(std::span<const int> window,
                           const std::vector<std::vector<double>>& p_rows);

struct CycleResult {
  std::vector<int> drafted;  // full window, including a carried first token
  int accepted = 0;          // newly drafted tokens accepted
  std::vector<int> emitted;
  bool free_token = false;
  bool carried = false;      // window position 0 was fixed by the previous cycle
};

struct DecodeStats {
  std::int64_t cycles = 0;
  std::int64_t zero_accept_cycles = 0;
  std::int64_t accepted = 0;
  std::int64_t emitted = 0;
  std::int64_t s_forwards = 0;
  std::int64_t s_catchups = 0;
  std::int64_t v_forwards = 0;
  std::int64_t d_forwards = 0;
};

// Single-owner decoding state over shared immutable weights. The shared
// trunk S is backbone layers [0, L - k); the verifier V is the remaining base
// layers plus the target head; the draft D is the adapter layers plus the
// circuit head.
class Session {
 public:
  Session(const Model& model, std::span<const int> prompt, DecodeMode mode, std::uint64_t seed,
          FreeTokenPolicy policy = FreeTokenPolicy::kCarry);

  // One draft/verify cycle.
  CycleResult step();
  // Draft-only cycle: emits the whole window, one S pass, no verifier.
  CycleResult step_unverified();

  const std::vector<int>& tokens() const { return tokens_; }
  std::vector<int> generated() const;
  const DecodeStats& stats() const { return stats_; }
  bool s_state_set() const { return !stale_; }
  int prompt_length() const { return prompt_len_; }

 private:
  // S state of tokens_[idx] given the pool of all earlier tokens.
  std::vector<double> shared_state(const PoolState& pool, int token) const;
  void catch_up();
  std::vector<double> draft_embedding() const;
  std::vector<double> verifier_dist(const std::vector<double>& s_state) const;

  const Model* model_;
  DecodeMode mode_;
  FreeTokenPolicy policy_;
  Rng rng_;
  int split_;                   // first layer outside the shared trunk
  int prompt_len_;
  std::vector<int> tokens_;     // prompt followed by committed tokens
  int anchor_;                  // index of the token whose S state is cached
  PoolState pool_;              // pool over tokens_[0..anchor_]
  std::vector<double> s_state_;
  bool stale_ = false;          // tokens after the anchor must be caught up first
  DecodeStats stats_;
};

void write_cycle_jsonl(std::ostream& out, const CycleResult& cycle, const DecodeStats& stats);

// Runs cycles until at least max_new_tokens tokens are generated (the last
// cycle may overshoot). `on_cycle` sees each cycle after its stats update.
std::vector<int> shared_state_decode(Session& session, int max_new_tokens,
                                     const std::function<void(const CycleResult&)>& on_cycle = {});

// One token at a time from the target head; the reference law for every
// speculative mode.
std::vector<int> ar_generate(const ToyBackbone& backbone, const TargetSTP& target,
                             std::span<const int> prompt, int count, DecodeMode mode, Rng& rng);

}  // namespace mtpc
