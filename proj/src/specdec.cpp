#include "mtpc/specdec.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mtpc/error.hpp"

namespace mtpc {

std::string_view to_string(DecodeMode mode) {
  return mode == DecodeMode::kGreedy ? "greedy" : "sample";
}

DecodeMode decode_mode_from_string(std::string_view name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "sample") return DecodeMode::kSample;
  throw ConfigError("mode must be greedy or sample");
}

std::vector<double> residual_dist(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ContractError("residual_dist: size mismatch");
  std::vector<double> r(p.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = std::max(0.0, p[i] - q[i]);
    z += r[i];
  }
  if (!(z > 0.0)) throw GuardError("residual_dist: p does not exceed q anywhere");
  for (double& x : r) x /= z;
  return r;
}

VerifyResult verify(std::span<const int> window, std::span<const double> log_q,
                    const std::vector<std::vector<double>>& p_rows,
                    const std::function<std::vector<double>(int)>& q_row, Rng& rng) {
  if (log_q.size() != window.size() || p_rows.size() < window.size()) {
    throw ContractError("verify: inconsistent window / conditional sizes");
  }
  VerifyResult out;
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (log_q[i] == kNegInf) throw ContractError("verify: drafted token has zero draft probability");
    const double log_p = std::log(p_rows[i][window[i]]);
    // alpha <= min(1, p/q); the clamp is implicit because alpha <= 1.
    const double alpha = uniform01(rng);
    if (std::log(alpha) <= log_p - log_q[i]) {
      ++out.accepted;
      continue;
    }
    const auto q = q_row(static_cast<int>(i));
    out.final_token = sample_categorical(residual_dist(p_rows[i], q), rng);
    return out;
  }
  return out;
}

VerifyResult verify_greedy(std::span<const int> window,
                           const std::vector<std::vector<double>>& p_rows) {
  VerifyResult out;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const int best = argmax(p_rows[i]);
    if (window[i] != best) {
      out.final_token = best;
      return out;
    }
    ++out.accepted;
  }
  return out;
}

Session::Session(const Model& model, std::span<const int> prompt, DecodeMode mode,
                 std::uint64_t seed, FreeTokenPolicy policy)
    : model_(&model),
      mode_(mode),
      policy_(policy),
      rng_(seed),
      split_(model.backbone.layers - model.adapter.k),
      prompt_len_(static_cast<int>(prompt.size())),
      tokens_(prompt.begin(), prompt.end()),
      pool_(model.backbone.d) {
  check_prefix(model.backbone, prompt);
  if (split_ < 0) throw ContractError("adapter has more layers than the backbone");
  if (model.circuit.spec.v != model.backbone.v) throw ContractError("head and backbone vocabularies differ");
  // Prefill: the pool covers everything before the last prompt token, whose
  // S state seeds the first draft.
  for (std::size_t t = 0; t + 1 < prompt.size(); ++t) pool_.absorb(model.backbone, prompt[t]);
  s_state_ = shared_state(pool_, prompt.back());
  pool_.absorb(model.backbone, prompt.back());
  anchor_ = prompt_len_ - 1;
}

std::vector<int> Session::generated() const {
  return {tokens_.begin() + prompt_len_, tokens_.end()};
}

std::vector<double> Session::shared_state(const PoolState& pool, int token) const {
  auto h = input_activation(model_->backbone, pool, token);
  run_layers(model_->backbone, nullptr, h, 0, split_);
  return h;
}

void Session::catch_up() {
  for (std::size_t i = anchor_ + 1; i < tokens_.size(); ++i) {
    s_state_ = shared_state(pool_, tokens_[i]);
    pool_.absorb(model_->backbone, tokens_[i]);
  }
  anchor_ = static_cast<int>(tokens_.size()) - 1;
  ++stats_.s_forwards;
  ++stats_.s_catchups;
  stale_ = false;
}

std::vector<double> Session::draft_embedding() const {
  auto h = s_state_;
  run_layers(model_->backbone, &model_->adapter, h, split_, model_->backbone.layers);
  return h;
}

std::vector<double> Session::verifier_dist(const std::vector<double>& s_state) const {
  auto h = s_state;
  run_layers(model_->backbone, nullptr, h, split_, model_->backbone.layers);
  return target_next_dist(model_->target, h);
}

CycleResult Session::step() {
  if (stale_) catch_up();
  const Circuit& circuit = model_->circuit;
  const int n = circuit.spec.n;
  const int c = static_cast<int>(tokens_.size()) - 1 - anchor_;
  if (c < 0 || c >= n) throw ContractError("session holds more carried tokens than the window");

  CycleResult res;
  res.carried = c > 0;
  const std::vector<int> pending(tokens_.begin() + anchor_ + 1, tokens_.end());

  // D: draft window from the cached S state.
  const auto e = draft_embedding();
  ++stats_.d_forwards;
  const CircuitParams params = parameterize(model_->head, circuit, e);
  const LogParams lp = LogParams::from(circuit, params);
  std::vector<int> window;
  if (mode_ == DecodeMode::kGreedy) {
    window = greedy_window_given(circuit, params, pending);
  } else {
    std::vector<int> evidence(n, -1);
    std::copy(pending.begin(), pending.end(), evidence.begin());
    window = sample_window_given(circuit, params, evidence, rng_);
  }
  res.drafted = window;

  // S: one pass over the window positions.
  std::vector<std::vector<double>> states(n);
  PoolState pool = pool_;
  for (int i = 0; i < n; ++i) {
    states[i] = shared_state(pool, window[i]);
    pool.absorb(model_->backbone, window[i]);
  }
  ++stats_.s_forwards;

  // V: verifier conditionals for every window position and the one after.
  std::vector<std::vector<double>> p_rows(n + 1);
  for (int i = c; i <= n; ++i) p_rows[i] = verifier_dist(i == 0 ? s_state_ : states[i - 1]);
  ++stats_.v_forwards;

  const std::span<const int> fresh(window.data() + c, n - c);
  const std::vector<std::vector<double>> fresh_p(p_rows.begin() + c, p_rows.begin() + n);
  VerifyResult vr;
  if (mode_ == DecodeMode::kGreedy) {
    vr = verify_greedy(fresh, fresh_p);
  } else {
    const auto cond = conditionals_from_prefix(prefix_marginals(circuit, lp, window));
    vr = verify(fresh, std::span<const double>(cond).subspan(c), fresh_p,
                [&](int i) {
                  return conditional_distribution(
                      circuit, lp, std::span<const int>(window.data(), static_cast<std::size_t>(c + i)));
                },
                rng_);
  }

  const int s = vr.accepted;
  res.accepted = s;
  for (int i = c; i < c + s; ++i) {
    tokens_.push_back(window[i]);
    res.emitted.push_back(window[i]);
  }
  // Every committed window token now has its S state from this cycle.
  if (c + s > 0) {
    for (int i = 0; i < c + s; ++i) pool_.absorb(model_->backbone, window[i]);
    s_state_ = states[c + s - 1];
    anchor_ += c + s;
  }

  auto emit_free = [&](int token, bool stale) {
    tokens_.push_back(token);
    res.emitted.push_back(token);
    res.free_token = true;
    stale_ = stale;
  };
  if (vr.final_token >= 0) {
    if (s == 0) {
      emit_free(vr.final_token, true);
    } else if (policy_ == FreeTokenPolicy::kCarry) {
      emit_free(vr.final_token, false);
    } else if (policy_ == FreeTokenPolicy::kVanilla) {
      emit_free(vr.final_token, true);
    }
  } else if (policy_ == FreeTokenPolicy::kVanilla) {
    const int token = mode_ == DecodeMode::kGreedy ? argmax(p_rows[n]) : sample_categorical(p_rows[n], rng_);
    emit_free(token, true);
  }

  ++stats_.cycles;
  if (s == 0) ++stats_.zero_accept_cycles;
  stats_.accepted += s;
  stats_.emitted += static_cast<std::int64_t>(res.emitted.size());
  if (res.emitted.empty()) throw ContractError("speculative cycle made no progress");
  return res;
}

CycleResult Session::step_unverified() {
  if (stale_) catch_up();
  const Circuit& circuit = model_->circuit;
  const int n = circuit.spec.n;
  const int c = static_cast<int>(tokens_.size()) - 1 - anchor_;
  const std::vector<int> pending(tokens_.begin() + anchor_ + 1, tokens_.end());
  const auto e = draft_embedding();
  ++stats_.d_forwards;
  const CircuitParams params = parameterize(model_->head, circuit, e);
  std::vector<int> window;
  if (mode_ == DecodeMode::kGreedy) {
    window = greedy_window_given(circuit, params, pending);
  } else {
    std::vector<int> evidence(n, -1);
    std::copy(pending.begin(), pending.end(), evidence.begin());
    window = sample_window_given(circuit, params, evidence, rng_);
  }
  CycleResult res;
  res.drafted = window;
  res.carried = c > 0;
  for (int i = 0; i < n; ++i) {
    s_state_ = shared_state(pool_, window[i]);
    pool_.absorb(model_->backbone, window[i]);
    if (i >= c) {
      tokens_.push_back(window[i]);
      res.emitted.push_back(window[i]);
    }
  }
  anchor_ = static_cast<int>(tokens_.size()) - 1;
  ++stats_.s_forwards;
  res.accepted = n - c;
  ++stats_.cycles;
  stats_.accepted += res.accepted;
  stats_.emitted += static_cast<std::int64_t>(res.emitted.size());
  return res;
}

void write_cycle_jsonl(std::ostream& out, const CycleResult& cycle, const DecodeStats& stats) {
  out << nlohmann::json{{"cycle", stats.cycles},
                        {"drafted", cycle.drafted},
                        {"accepted_s", cycle.accepted},
                        {"emitted", cycle.emitted},
                        {"free_token", cycle.free_token},
                        {"s_forwards", stats.s_forwards},
                        {"v_forwards", stats.v_forwards},
                        {"d_forwards", stats.d_forwards}}
             .dump()
      << "\n";
}

std::vector<int> shared_state_decode(Session& session, int max_new_tokens,
                                     const std::function<void(const CycleResult&)>& on_cycle) {
  if (max_new_tokens < 1) throw ContractError("max_new_tokens must be >= 1");
  const std::size_t target = static_cast<std::size_t>(session.prompt_length()) + max_new_tokens;
  // Each cycle emits at least one token, so this bound is never reached by a
  // correct session.
  for (int guard = 0; session.tokens().size() < target; ++guard) {
    if (guard > max_new_tokens) throw ContractError("decode loop exceeded its cycle bound");
    const CycleResult res = session.step();
    if (on_cycle) on_cycle(res);
  }
  return session.generated();
}

std::vector<int> ar_generate(const ToyBackbone& bb, const TargetSTP& target,
                             std::span<const int> prompt, int count, DecodeMode mode, Rng& rng) {
  check_prefix(bb, prompt);
  if (count < 1) throw ContractError("count must be >= 1");
  PoolState pool(bb.d);
  for (std::size_t t = 0; t + 1 < prompt.size(); ++t) pool.absorb(bb, prompt[t]);
  int last = prompt.back();
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    auto h = input_activation(bb, pool, last);
    run_layers(bb, nullptr, h, 0, bb.layers);
    const auto p = target_next_dist(target, h);
    const int next = mode == DecodeMode::kGreedy ? argmax(p) : sample_categorical(p, rng);
    pool.absorb(bb, last);
    out.push_back(next);
    last = next;
  }
  return out;
}

}  // namespace mtpc
