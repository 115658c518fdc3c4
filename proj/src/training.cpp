#include "mtpc/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mtpc/engine.hpp"
#include "mtpc/error.hpp"
#include "mtpc/inference.hpp"

namespace mtpc {

TrainingBatch TrainingBatch::all_valid(std::vector<std::vector<int>> sequences) {
  TrainingBatch b;
  for (const auto& s : sequences) b.valid.emplace_back(s.size(), 1);
  b.sequences = std::move(sequences);
  return b;
}

void TrainingBatch::check(int v) const {
  if (sequences.size() != valid.size()) throw ContractError("valid mask count does not match sequences");
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (sequences[s].size() != valid[s].size()) throw ContractError("valid mask length mismatch");
    for (int tok : sequences[s]) {
      if (tok < 0 || tok >= v) throw ContractError("token id out of range");
    }
  }
}

Model zeros_like(const Model& m) {
  Model z;
  z.backbone = m.backbone.zeros_like();
  z.target = m.target;
  std::fill(z.target.U.data.begin(), z.target.U.data.end(), 0.0);
  z.adapter = m.adapter.zeros_like();
  z.head = m.head.zeros_like();
  z.circuit = m.circuit;
  return z;
}

namespace {

// Per-position activations of one sequence on the draft (adapter != null)
// or verifier path.
struct SequenceTape {
  int T = 0;
  int L = 0;
  int d = 0;
  int first_private = 0;
  std::vector<double> norm;  // pooling normalizer before each token
  std::vector<double> h;     // T x (L + 1) x d
  std::vector<double> act;   // T x L x d, tanh outputs

  double* H(int t, int l) { return h.data() + (static_cast<std::size_t>(t) * (L + 1) + l) * d; }
  const double* H(int t, int l) const {
    return h.data() + (static_cast<std::size_t>(t) * (L + 1) + l) * d;
  }
  const double* A(int t, int l) const {
    return act.data() + (static_cast<std::size_t>(t) * L + l) * d;
  }
};

SequenceTape forward_sequence(const ToyBackbone& bb, const DraftAdapter* adapter,
                              const std::vector<int>& seq) {
  SequenceTape tape;
  tape.T = static_cast<int>(seq.size());
  tape.L = bb.layers;
  tape.d = bb.d;
  tape.first_private = adapter != nullptr ? bb.layers - adapter->k : bb.layers;
  const auto D = static_cast<std::size_t>(bb.d);
  tape.norm.resize(seq.size());
  tape.h.resize(seq.size() * (bb.layers + 1) * D);
  tape.act.resize(seq.size() * bb.layers * D);
  PoolState pool(bb.d);
  std::vector<double> z(D), low, lifted(D);
  for (int t = 0; t < tape.T; ++t) {
    tape.norm[t] = pool.norm;
    const auto h0 = input_activation(bb, pool, seq[t]);
    std::copy(h0.begin(), h0.end(), tape.H(t, 0));
    for (int l = 0; l < bb.layers; ++l) {
      const double* hin = tape.H(t, l);
      matvec(bb.weight[l].ptr(), D, D, hin, z.data());
      for (std::size_t i = 0; i < D; ++i) z[i] += bb.bias[l].data[i];
      if (l >= tape.first_private) {
        const int a = l - tape.first_private;
        const auto P = static_cast<std::size_t>(adapter->rank);
        low.assign(P, 0.0);
        matvec(adapter->down[a].ptr(), P, D, hin, low.data());
        matvec(adapter->up[a].ptr(), D, P, low.data(), lifted.data());
        for (std::size_t i = 0; i < D; ++i) z[i] += lifted[i] + adapter->bias[a].data[i];
      }
      double* hout = tape.H(t, l + 1);
      double* act = tape.act.data() + (static_cast<std::size_t>(t) * bb.layers + l) * D;
      for (std::size_t i = 0; i < D; ++i) {
        act[i] = std::tanh(z[i]);
        hout[i] = hin[i] + act[i];
      }
    }
    pool.absorb(bb, seq[t]);
  }
  return tape;
}

// Backpropagates dE (T x d, gradients on the final activations) through the
// layers and the pooling. Backbone gradients go to gb when non-null; the
// pass stops at the first private layer otherwise.
void backward_sequence(const ToyBackbone& bb, const DraftAdapter* adapter,
                       const SequenceTape& tape, const std::vector<int>& seq,
                       const std::vector<double>& dE, ToyBackbone* gb, DraftAdapter* ga) {
  const auto D = static_cast<std::size_t>(bb.d);
  const int stop = gb != nullptr ? 0 : tape.first_private;
  std::vector<double> dh(D), dz(D), low, tmp;
  std::vector<double> dpool;  // per position gradient on the pooled context / norm
  if (gb != nullptr) dpool.assign(static_cast<std::size_t>(tape.T) * D, 0.0);
  for (int t = 0; t < tape.T; ++t) {
    const double* de = dE.data() + static_cast<std::size_t>(t) * D;
    if (std::all_of(de, de + D, [](double x) { return x == 0.0; })) continue;
    std::copy(de, de + D, dh.begin());
    for (int l = tape.L - 1; l >= stop; --l) {
      const double* hin = tape.H(t, l);
      const double* act = tape.A(t, l);
      for (std::size_t i = 0; i < D; ++i) dz[i] = dh[i] * (1.0 - act[i] * act[i]);
      if (gb != nullptr) {
        outer_acc(gb->weight[l].ptr(), D, D, dz.data(), hin);
        for (std::size_t i = 0; i < D; ++i) gb->bias[l].data[i] += dz[i];
      }
      matvec_t_acc(bb.weight[l].ptr(), D, D, dz.data(), dh.data());
      if (l >= tape.first_private) {
        const int a = l - tape.first_private;
        const auto P = static_cast<std::size_t>(adapter->rank);
        low.assign(P, 0.0);
        matvec(adapter->down[a].ptr(), P, D, hin, low.data());
        tmp.assign(P, 0.0);
        matvec_t_acc(adapter->up[a].ptr(), D, P, dz.data(), tmp.data());
        if (ga != nullptr) {
          outer_acc(ga->up[a].ptr(), D, P, dz.data(), low.data());
          outer_acc(ga->down[a].ptr(), P, D, tmp.data(), hin);
          for (std::size_t i = 0; i < D; ++i) ga->bias[a].data[i] += dz[i];
        }
        matvec_t_acc(adapter->down[a].ptr(), P, D, tmp.data(), dh.data());
      }
    }
    if (gb == nullptr) continue;
    double* erow = gb->embed.ptr(static_cast<std::size_t>(seq[t]) * D);
    for (std::size_t i = 0; i < D; ++i) erow[i] += dh[i];
    if (tape.norm[t] > 0.0) {
      double* dp = dpool.data() + static_cast<std::size_t>(t) * D;
      for (std::size_t i = 0; i < D; ++i) dp[i] = dh[i] / tape.norm[t];
    }
  }
  if (gb == nullptr) return;
  // pool_t = sum_{tau < t} decay^(t-1-tau) context[x_tau] / norm_t, so the
  // row of x_tau receives S_tau = sum_{t > tau} decay^(t-1-tau) dpool_t.
  std::vector<double> carry(D, 0.0);
  for (int tau = tape.T - 2; tau >= 0; --tau) {
    const double* dp = dpool.data() + static_cast<std::size_t>(tau + 1) * D;
    for (std::size_t i = 0; i < D; ++i) carry[i] = dp[i] + bb.decay * carry[i];
    double* crow = gb->context.ptr(static_cast<std::size_t>(seq[tau]) * D);
    for (std::size_t i = 0; i < D; ++i) crow[i] += carry[i];
  }
}

// Number of positions t with t + j inside the sequence and valid, j = 1..n.
std::vector<int> valid_counts(const std::vector<char>& valid, int n) {
  const int T = static_cast<int>(valid.size());
  std::vector<int> count(n + 1, 0);
  for (int t = 0; t + 1 < T; ++t) {
    for (int j = 1; j <= n && t + j < T; ++j) count[j] += valid[t + j] ? 1 : 0;
  }
  return count;
}

struct Partial {
  double loss = 0.0;
  std::vector<double> l_j;
};

Partial draft_sequence(const Model& m, const std::vector<int>& seq, const std::vector<char>& valid,
                       const LossConfig& cfg, double N, Model* grad, bool with_backbone) {
  const Circuit& c = m.circuit;
  const int n = c.spec.n;
  const int T = static_cast<int>(seq.size());
  Partial out;
  out.l_j.assign(n, 0.0);
  const auto count = valid_counts(valid, n);
  const SequenceTape tape = forward_sequence(m.backbone, &m.adapter, seq);
  const auto D = static_cast<std::size_t>(m.backbone.d);
  std::vector<double> dE;
  if (grad != nullptr) dE.assign(static_cast<std::size_t>(T) * D, 0.0);
  std::vector<double> coef(n + 2), seeds;
  std::vector<int> evidence;
  for (int t = 0; t + 1 < T; ++t) {
    const int span_len = std::min(n, T - 1 - t);
    std::fill(coef.begin(), coef.end(), 0.0);
    bool any = false;
    for (int j = 1; j <= span_len; ++j) {
      if (valid[t + j] && count[j] > 0) {
        coef[j] = std::pow(cfg.gamma, j - 1) / (N * count[j]);
        any = true;
      }
    }
    if (!any) continue;
    const std::span<const double> e(tape.H(t, tape.L), D);
    const CircuitParams params = parameterize(m.head, c, e);
    const LogParams lp = LogParams::from(c, params);
    evidence.assign(static_cast<std::size_t>(span_len) * n, -1);
    for (int b = 0; b < span_len; ++b) {
      int* row = evidence.data() + static_cast<std::size_t>(b) * n;
      if (cfg.mode == LossMode::kConditional) {
        for (int i = 0; i <= b; ++i) row[i] = seq[t + 1 + i];
      } else {
        row[b] = seq[t + 1 + b];
      }
    }
    const ForwardTape ft(c, lp, evidence, span_len);
    for (int j = 1; j <= span_len; ++j) {
      if (coef[j] == 0.0) continue;
      double logq = ft.output(j - 1);
      if (cfg.mode == LossMode::kConditional && j > 1) logq -= ft.output(j - 2);
      out.l_j[j - 1] += -logq / (N * count[j]);
      out.loss += coef[j] * -logq;
    }
    if (grad == nullptr) continue;
    seeds.assign(span_len, 0.0);
    for (int b = 0; b < span_len; ++b) {
      const int j = b + 1;
      seeds[b] = cfg.mode == LossMode::kConditional ? -(coef[j] - (j < span_len ? coef[j + 1] : 0.0))
                                                    : -coef[j];
    }
    LogParamGrads lg = LogParamGrads::zeros_like(lp);
    backward(ft, seeds, lg);
    parameterize_backward(m.head, c, e, params, lg, grad->head,
                          std::span<double>(dE.data() + static_cast<std::size_t>(t) * D, D));
  }
  if (grad != nullptr) {
    backward_sequence(m.backbone, &m.adapter, tape, seq, dE,
                      with_backbone ? &grad->backbone : nullptr, &grad->adapter);
  }
  return out;
}

Partial target_sequence(const Model& m, const std::vector<int>& seq, const std::vector<char>& valid,
                        double N, Model* grad, bool with_backbone) {
  const int T = static_cast<int>(seq.size());
  Partial out;
  out.l_j.assign(1, 0.0);
  const auto count = valid_counts(valid, 1);
  if (count[1] == 0) return out;
  const SequenceTape tape = forward_sequence(m.backbone, nullptr, seq);
  const auto D = static_cast<std::size_t>(m.backbone.d);
  const auto V = static_cast<std::size_t>(m.backbone.v);
  std::vector<double> dE;
  if (grad != nullptr) dE.assign(static_cast<std::size_t>(T) * D, 0.0);
  const double w = 1.0 / (N * count[1]);
  for (int t = 0; t + 1 < T; ++t) {
    if (!valid[t + 1]) continue;
    const std::span<const double> e(tape.H(t, tape.L), D);
    const auto logits = target_logits(m.target, e);
    const auto lsm = log_softmax(logits);
    const int x = seq[t + 1];
    out.loss += -lsm[x] * w;
    if (grad == nullptr) continue;
    std::vector<double> dl(V);
    for (std::size_t k = 0; k < V; ++k) dl[k] = std::exp(lsm[k]) * w;
    dl[x] -= w;
    outer_acc(grad->target.U.ptr(), V, D, dl.data(), e.data());
    matvec_t_acc(m.target.U.ptr(), V, D, dl.data(), dE.data() + static_cast<std::size_t>(t) * D);
  }
  out.l_j[0] = out.loss;
  if (grad != nullptr && with_backbone) {
    backward_sequence(m.backbone, nullptr, tape, seq, dE, &grad->backbone, nullptr);
  }
  return out;
}

int thread_count() {
  if (const char* env = std::getenv("MTPC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

void add_into(Model& dst, Model& src) {
  auto a = named_tensors(dst);
  auto b = named_tensors(src);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& x = a[i].tensor->data;
    const auto& y = b[i].tensor->data;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += y[k];
  }
}

// Evaluates sequences in fixed shards and reduces them in shard order, so
// results do not depend on the number of worker threads.
template <typename Fn>
LossValue run_sharded(const Model& m, const TrainingBatch& batch, int terms, Model* grad, Fn&& fn) {
  constexpr std::size_t kShard = 8;
  const std::size_t S = batch.size();
  const std::size_t shards = (S + kShard - 1) / kShard;
  std::vector<Partial> partials(shards);
  std::vector<Model> grads;
  if (grad != nullptr) grads.assign(shards, zeros_like(m));
  auto work = [&](std::size_t shard) {
    Partial p;
    p.l_j.assign(terms, 0.0);
    for (std::size_t s = shard * kShard; s < std::min(S, (shard + 1) * kShard); ++s) {
      const Partial q = fn(batch.sequences[s], batch.valid[s], grad != nullptr ? &grads[shard] : nullptr);
      p.loss += q.loss;
      for (int j = 0; j < terms; ++j) p.l_j[j] += q.l_j[j];
    }
    partials[shard] = std::move(p);
  };
  const int threads = std::min<int>(thread_count(), static_cast<int>(shards));
  if (threads <= 1) {
    for (std::size_t s = 0; s < shards; ++s) work(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < shards; s = next++) work(s);
      });
    }
    for (auto& th : pool) th.join();
  }
  LossValue total;
  total.l_j.assign(terms, 0.0);
  for (std::size_t s = 0; s < shards; ++s) {
    total.loss += partials[s].loss;
    for (int j = 0; j < terms; ++j) total.l_j[j] += partials[s].l_j[j];
    if (grad != nullptr) add_into(*grad, grads[s]);
  }
  return total;
}

void check_any_valid(const TrainingBatch& batch) {
  for (const auto& v : batch.valid) {
    for (std::size_t t = 1; t < v.size(); ++t) {
      if (v[t]) return;
    }
  }
  throw ContractError("batch has no valid target positions");
}

LossValue draft_impl(const Model& m, const TrainingBatch& batch, const LossConfig& cfg, Model* grad,
                     bool with_backbone) {
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw ContractError("gamma must lie in (0, 1]");
  batch.check(m.circuit.spec.v);
  check_any_valid(batch);
  const double N = static_cast<double>(batch.size());
  return run_sharded(m, batch, m.circuit.spec.n, grad,
                     [&](const std::vector<int>& seq, const std::vector<char>& valid, Model* g) {
                       return draft_sequence(m, seq, valid, cfg, N, g, with_backbone);
                     });
}

LossValue target_impl(const Model& m, const TrainingBatch& batch, Model* grad, bool with_backbone) {
  batch.check(m.backbone.v);
  check_any_valid(batch);
  const double N = static_cast<double>(batch.size());
  return run_sharded(m, batch, 1, grad,
                     [&](const std::vector<int>& seq, const std::vector<char>& valid, Model* g) {
                       return target_sequence(m, seq, valid, N, g, with_backbone);
                     });
}

}  // namespace

LossValue mtp_loss(const Model& m, const TrainingBatch& batch, const LossConfig& cfg) {
  return draft_impl(m, batch, cfg, nullptr, false);
}

LossValue mtp_loss_grad(const Model& m, const TrainingBatch& batch, const LossConfig& cfg,
                        Model& grad, bool with_backbone) {
  return draft_impl(m, batch, cfg, &grad, with_backbone);
}

LossValue stp_loss(const Model& m, const TrainingBatch& batch) {
  return target_impl(m, batch, nullptr, false);
}

LossValue stp_loss_grad(const Model& m, const TrainingBatch& batch, Model& grad, bool with_backbone) {
  return target_impl(m, batch, &grad, with_backbone);
}

bool Trainable::allows(TensorGroup group) const {
  switch (group) {
    case TensorGroup::kBackbone: return backbone;
    case TensorGroup::kTarget: return target;
    case TensorGroup::kAdapter: return adapter;
    case TensorGroup::kHead: return head;
  }
  return false;
}

namespace {

LossValue objective_grad(const Model& m, const TrainingBatch& batch, const LossConfig& cfg,
                         Objective objective, Model& grad, bool with_backbone) {
  return objective == Objective::kDraft ? mtp_loss_grad(m, batch, cfg, grad, with_backbone)
                                        : stp_loss_grad(m, batch, grad, with_backbone);
}

double objective_value(const Model& m, const TrainingBatch& batch, const LossConfig& cfg,
                       Objective objective) {
  return objective == Objective::kDraft ? mtp_loss(m, batch, cfg).loss : stp_loss(m, batch).loss;
}

TrainingBatch subset(const TrainingBatch& data, const std::vector<std::size_t>& idx) {
  TrainingBatch b;
  for (std::size_t i : idx) {
    b.sequences.push_back(data.sequences[i]);
    b.valid.push_back(data.valid[i]);
  }
  return b;
}

}  // namespace

TrainResult train(Model& model, const TrainingBatch& data, const LossConfig& loss_cfg,
                  const OptimizerConfig& opt, const Trainable& trainable, Objective objective,
                  const std::function<void(const TraceEntry&)>& on_step) {
  if (data.size() == 0) throw ContractError("training data is empty");
  if (opt.lr < 0.0) throw ContractError("learning rate must be non-negative");
  Rng rng(opt.seed);
  auto params = named_tensors(model);
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].tensor->numel(), 0.0);
    m2[i].assign(params[i].tensor->numel(), 0.0);
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_step =
      opt.batch_size > 0 ? std::min<std::size_t>(opt.batch_size, data.size()) : data.size();
  TrainResult result;
  for (int step = 1; step <= opt.steps; ++step) {
    TrainingBatch mini;
    if (per_step < data.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      mini = subset(data, std::vector<std::size_t>(order.begin(), order.begin() + per_step));
    }
    const TrainingBatch& batch = per_step < data.size() ? mini : data;
    Model grad = zeros_like(model);
    const LossValue lv = objective_grad(model, batch, loss_cfg, objective, grad, trainable.backbone);
    if (!std::isfinite(lv.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (terms:";
      for (double x : lv.l_j) msg << " " << x;
      msg << ")";
      throw DivergenceError(msg.str());
    }
    TraceEntry entry{step, lv.loss, lv.l_j};
    if (on_step) on_step(entry);
    result.trace.push_back(std::move(entry));
    auto gparams = named_tensors(grad);
    const double c1 = 1.0 - std::pow(opt.beta1, step);
    const double c2 = 1.0 - std::pow(opt.beta2, step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!trainable.allows(params[i].group)) continue;
      auto& w = params[i].tensor->data;
      const auto& g = gparams[i].tensor->data;
      for (std::size_t k = 0; k < w.size(); ++k) {
        m1[i][k] = opt.beta1 * m1[i][k] + (1.0 - opt.beta1) * g[k];
        m2[i][k] = opt.beta2 * m2[i][k] + (1.0 - opt.beta2) * g[k] * g[k];
        w[k] -= opt.lr * (m1[i][k] / c1) / (std::sqrt(m2[i][k] / c2) + opt.eps);
      }
    }
  }
  return result;
}

void write_trace_jsonl(std::ostream& out, const TraceEntry& e) {
  out << nlohmann::json{{"step", e.step}, {"loss", e.loss}, {"l_j", e.l_j}}.dump() << "\n";
}

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

double grad_check(const Model& model, const TrainingBatch& batch, const LossConfig& cfg,
                  const Trainable& trainable, Objective objective, double step, int coords,
                  Rng& rng) {
  Model work = model;
  Model grad = zeros_like(model);
  objective_grad(work, batch, cfg, objective, grad, trainable.backbone);
  auto params = named_tensors(work);
  auto gparams = named_tensors(grad);
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.allows(params[i].group)) continue;
    for (std::size_t k = 0; k < params[i].tensor->numel(); ++k) all.emplace_back(i, k);
  }
  if (all.empty()) throw ContractError("grad_check: nothing is trainable");
  if (static_cast<std::size_t>(coords) < all.size()) {
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(coords);
  }
  double worst = 0.0;
  for (const auto& [i, k] : all) {
    double& w = params[i].tensor->data[k];
    const double saved = w;
    w = saved + step;
    const double up = objective_value(work, batch, cfg, objective);
    w = saved - step;
    const double down = objective_value(work, batch, cfg, objective);
    w = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, relative_error(gparams[i].tensor->data[k], numeric));
  }
  return worst;
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& grad,
                  std::span<const double> x, double step) {
  std::vector<double> work(x.begin(), x.end());
  const auto g = grad(work);
  if (g.size() != work.size()) throw ContractError("grad_check: gradient size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < work.size(); ++k) {
    const double saved = work[k];
    work[k] = saved + step;
    const double up = f(work);
    work[k] = saved - step;
    const double down = f(work);
    work[k] = saved;
    worst = std::max(worst, relative_error(g[k], (up - down) / (2.0 * step)));
  }
  return worst;
}

}  // namespace mtpc
