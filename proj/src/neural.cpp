#include "mtpc/neural.hpp"

#include <cmath>

#include "mtpc/error.hpp"

namespace mtpc {

ToyBackbone ToyBackbone::random(int v, int d, int layers, double decay, Rng& rng) {
  if (v < 2 || d < 1 || layers < 0) throw SpecError("backbone needs v >= 2, d >= 1, layers >= 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw SpecError("pooling decay must lie in (0, 1]");
  ToyBackbone bb;
  bb.v = v;
  bb.d = d;
  bb.layers = layers;
  bb.decay = decay;
  const auto V = static_cast<std::size_t>(v);
  const auto D = static_cast<std::size_t>(d);
  bb.embed = Tensor::randn({V, D}, 1.0, rng);
  bb.context = Tensor::randn({V, D}, 1.0, rng);
  for (int l = 0; l < layers; ++l) {
    bb.weight.push_back(Tensor::randn({D, D}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    bb.bias.emplace_back(std::vector<std::size_t>{D});
  }
  return bb;
}

ToyBackbone ToyBackbone::zeros_like() const {
  ToyBackbone z = *this;
  std::fill(z.embed.data.begin(), z.embed.data.end(), 0.0);
  std::fill(z.context.data.begin(), z.context.data.end(), 0.0);
  for (auto& t : z.weight) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (auto& t : z.bias) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

DraftAdapter DraftAdapter::zeros(int k, int rank, int d) {
  if (k < 0 || rank < 1) throw SpecError("adapter needs k >= 0 and rank >= 1");
  DraftAdapter a;
  a.k = k;
  a.rank = rank;
  const auto D = static_cast<std::size_t>(d);
  const auto P = static_cast<std::size_t>(rank);
  for (int i = 0; i < k; ++i) {
    a.up.emplace_back(std::vector<std::size_t>{D, P});
    a.down.emplace_back(std::vector<std::size_t>{P, D});
    a.bias.emplace_back(std::vector<std::size_t>{D});
  }
  return a;
}

DraftAdapter DraftAdapter::create(int k, int rank, int d, Rng& rng) {
  DraftAdapter a = zeros(k, rank, d);
  for (auto& t : a.down) {
    t = Tensor::randn(t.shape, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  }
  return a;
}

DraftAdapter DraftAdapter::zeros_like() const {
  DraftAdapter z = *this;
  for (auto* group : {&z.up, &z.down, &z.bias}) {
    for (auto& t : *group) std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  return z;
}

ParamHead ParamHead::zeros(const Circuit& c, int d) {
  ParamHead h;
  h.spec = c.spec;
  h.d = d;
  h.components = c.input_width;
  const auto D = static_cast<std::size_t>(d);
  h.W = Tensor({static_cast<std::size_t>(c.spec.n), static_cast<std::size_t>(c.input_width),
                static_cast<std::size_t>(c.spec.v), D});
  for (const auto& s : c.omega_shapes) {
    const auto rows = static_cast<std::size_t>(s.rows);
    const auto cols = static_cast<std::size_t>(s.cols);
    h.R.emplace_back(std::vector<std::size_t>{rows, cols, D});
    h.bias_R.emplace_back(std::vector<std::size_t>{rows, cols});
  }
  return h;
}

ParamHead ParamHead::random(const Circuit& c, int d, double stddev, Rng& rng) {
  ParamHead h = zeros(c, d);
  h.W = Tensor::randn(h.W.shape, stddev, rng);
  for (auto& t : h.R) t = Tensor::randn(t.shape, stddev, rng);
  for (auto& t : h.bias_R) t = Tensor::randn(t.shape, stddev, rng);
  return h;
}

ParamHead ParamHead::zeros_like() const {
  ParamHead z = *this;
  std::fill(z.W.data.begin(), z.W.data.end(), 0.0);
  for (auto& t : z.R) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (auto& t : z.bias_R) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

TargetSTP TargetSTP::zeros(int v, int d) {
  TargetSTP t;
  t.U = Tensor({static_cast<std::size_t>(v), static_cast<std::size_t>(d)});
  return t;
}

void PoolState::absorb(const ToyBackbone& bb, int token) {
  const double* row = bb.context.ptr(static_cast<std::size_t>(token) * bb.d);
  for (int i = 0; i < bb.d; ++i) acc[i] = bb.decay * acc[i] + row[i];
  norm = bb.decay * norm + 1.0;
}

void check_prefix(const ToyBackbone& bb, std::span<const int> prefix) {
  if (prefix.empty()) throw ContractError("encoding needs a non-empty prefix");
  for (int tok : prefix) {
    if (tok < 0 || tok >= bb.v) throw ContractError("token id out of range");
  }
}

std::vector<double> input_activation(const ToyBackbone& bb, const PoolState& pool, int token) {
  if (token < 0 || token >= bb.v) throw ContractError("token id out of range");
  std::vector<double> h(bb.embed.ptr(static_cast<std::size_t>(token) * bb.d),
                        bb.embed.ptr(static_cast<std::size_t>(token + 1) * bb.d));
  if (pool.norm > 0.0) {
    for (int i = 0; i < bb.d; ++i) h[i] += pool.acc[i] / pool.norm;
  }
  return h;
}

void run_layers(const ToyBackbone& bb, const DraftAdapter* adapter, std::vector<double>& h,
                int from, int to) {
  const auto D = static_cast<std::size_t>(bb.d);
  const int first_private = adapter != nullptr ? bb.layers - adapter->k : bb.layers;
  if (adapter != nullptr && (adapter->k > bb.layers || adapter->k < 0)) {
    throw ContractError("adapter has more layers than the backbone");
  }
  std::vector<double> z(D), low;
  for (int l = from; l < to; ++l) {
    matvec(bb.weight[l].ptr(), D, D, h.data(), z.data());
    for (std::size_t i = 0; i < D; ++i) z[i] += bb.bias[l].data[i];
    if (l >= first_private) {
      const int a = l - first_private;
      const auto P = static_cast<std::size_t>(adapter->rank);
      low.assign(P, 0.0);
      matvec(adapter->down[a].ptr(), P, D, h.data(), low.data());
      std::vector<double> lifted(D);
      matvec(adapter->up[a].ptr(), D, P, low.data(), lifted.data());
      for (std::size_t i = 0; i < D; ++i) z[i] += lifted[i] + adapter->bias[a].data[i];
    }
    for (std::size_t i = 0; i < D; ++i) h[i] += std::tanh(z[i]);
  }
}

std::vector<std::vector<double>> encode_layers(const ToyBackbone& bb, std::span<const int> prefix) {
  check_prefix(bb, prefix);
  PoolState pool(bb.d);
  for (std::size_t t = 0; t + 1 < prefix.size(); ++t) pool.absorb(bb, prefix[t]);
  std::vector<std::vector<double>> acts;
  acts.push_back(input_activation(bb, pool, prefix.back()));
  for (int l = 0; l < bb.layers; ++l) {
    auto next = acts.back();
    run_layers(bb, nullptr, next, l, l + 1);
    acts.push_back(std::move(next));
  }
  return acts;
}

std::vector<double> encode(const ToyBackbone& bb, std::span<const int> prefix) {
  return encode_layers(bb, prefix).back();
}

std::vector<double> encode_draft(const ToyBackbone& bb, const DraftAdapter& adapter,
                                 std::span<const int> prefix) {
  check_prefix(bb, prefix);
  PoolState pool(bb.d);
  for (std::size_t t = 0; t + 1 < prefix.size(); ++t) pool.absorb(bb, prefix[t]);
  auto h = input_activation(bb, pool, prefix.back());
  run_layers(bb, &adapter, h, 0, bb.layers);
  return h;
}

namespace {

void check_head(const ParamHead& head, const Circuit& c, std::size_t e_size) {
  if (!(head.spec == c.spec) || head.components != c.input_width ||
      head.R.size() != c.omega_shapes.size() || e_size != static_cast<std::size_t>(head.d)) {
    throw ContractError("head does not match circuit or embedding width");
  }
  for (std::size_t t = 0; t < c.omega_shapes.size(); ++t) {
    const auto& s = c.omega_shapes[t];
    if (head.R[t].numel() != static_cast<std::size_t>(s.rows) * s.cols * head.d ||
        head.bias_R[t].numel() != static_cast<std::size_t>(s.rows) * s.cols) {
      throw ContractError("head sum table shape mismatch");
    }
  }
}

}  // namespace

CircuitParams parameterize(const ParamHead& head, const Circuit& c, std::span<const double> e) {
  check_head(head, c, e.size());
  CircuitParams p;
  p.n = c.spec.n;
  p.components = c.input_width;
  p.v = c.spec.v;
  p.phi.resize(c.num_input_params());
  const auto D = static_cast<std::size_t>(head.d);
  const auto V = static_cast<std::size_t>(p.v);
  std::vector<double> logits(V);
  const std::size_t rows = static_cast<std::size_t>(p.n) * p.components;
  for (std::size_t row = 0; row < rows; ++row) {
    matvec(head.W.ptr(row * V * D), V, D, e.data(), logits.data());
    const auto probs = softmax(logits);
    std::copy(probs.begin(), probs.end(), p.phi.begin() + static_cast<std::ptrdiff_t>(row * V));
  }
  p.omega.resize(c.omega_shapes.size());
  for (std::size_t t = 0; t < c.omega_shapes.size(); ++t) {
    const auto cols = static_cast<std::size_t>(c.omega_shapes[t].cols);
    const auto units = static_cast<std::size_t>(c.omega_shapes[t].rows);
    p.omega[t].resize(units * cols);
    std::vector<double> sl(cols);
    for (std::size_t u = 0; u < units; ++u) {
      matvec(head.R[t].ptr(u * cols * D), cols, D, e.data(), sl.data());
      for (std::size_t k = 0; k < cols; ++k) sl[k] += head.bias_R[t].data[u * cols + k];
      const auto probs = softmax(sl);
      std::copy(probs.begin(), probs.end(), p.omega[t].begin() + static_cast<std::ptrdiff_t>(u * cols));
    }
  }
  return p;
}

void parameterize_backward(const ParamHead& head, const Circuit& c, std::span<const double> e,
                           const CircuitParams& p, const LogParamGrads& g, ParamHead& hg,
                           std::span<double> de) {
  const auto D = static_cast<std::size_t>(head.d);
  const auto V = static_cast<std::size_t>(p.v);
  std::vector<double> dl;
  // d log softmax(l)_x / d l_y = [x == y] - p_y, so dl = g - p * sum(g).
  auto row_backward = [&](const double* probs, const double* grad, std::size_t width) {
    double total = 0.0;
    for (std::size_t k = 0; k < width; ++k) total += grad[k];
    dl.resize(width);
    bool any = false;
    for (std::size_t k = 0; k < width; ++k) {
      dl[k] = grad[k] - probs[k] * total;
      any = any || dl[k] != 0.0;
    }
    return any;
  };
  const std::size_t rows = static_cast<std::size_t>(p.n) * p.components;
  for (std::size_t row = 0; row < rows; ++row) {
    if (!row_backward(p.phi.data() + row * V, g.log_phi.data() + row * V, V)) continue;
    outer_acc(hg.W.ptr(row * V * D), V, D, dl.data(), e.data());
    matvec_t_acc(head.W.ptr(row * V * D), V, D, dl.data(), de.data());
  }
  for (std::size_t t = 0; t < c.omega_shapes.size(); ++t) {
    const auto cols = static_cast<std::size_t>(c.omega_shapes[t].cols);
    const auto units = static_cast<std::size_t>(c.omega_shapes[t].rows);
    for (std::size_t u = 0; u < units; ++u) {
      if (!row_backward(p.omega[t].data() + u * cols, g.log_omega[t].data() + u * cols, cols)) {
        continue;
      }
      outer_acc(hg.R[t].ptr(u * cols * D), cols, D, dl.data(), e.data());
      matvec_t_acc(head.R[t].ptr(u * cols * D), cols, D, dl.data(), de.data());
      for (std::size_t k = 0; k < cols; ++k) hg.bias_R[t].data[u * cols + k] += dl[k];
    }
  }
}

std::vector<double> target_logits(const TargetSTP& target, std::span<const double> e) {
  const std::size_t v = target.U.shape.at(0);
  const std::size_t d = target.U.shape.at(1);
  if (e.size() != d) throw ContractError("embedding width does not match target head");
  std::vector<double> logits(v);
  matvec(target.U.ptr(), v, d, e.data(), logits.data());
  return logits;
}

std::vector<double> target_next_dist(const TargetSTP& target, std::span<const double> e) {
  return softmax(target_logits(target, e));
}

namespace {

constexpr double kSumInitStd = 0.02;

void check_ff(const ParamHead& ff, int r) {
  if (ff.spec.kind != ArchKind::kFF) throw ContractError("initialization source must be an FF head");
  if (r < 1) throw SpecError("rank must be >= 1");
}

// Copies the single FF component into every component slot.
void replicate_w(const ParamHead& ff, ParamHead& out) {
  const std::size_t vd = static_cast<std::size_t>(ff.spec.v) * ff.d;
  for (int i = 0; i < ff.spec.n; ++i) {
    const double* src = ff.W.ptr(static_cast<std::size_t>(i) * vd);
    for (int j = 0; j < out.components; ++j) {
      std::copy(src, src + vd, out.W.ptr((static_cast<std::size_t>(i) * out.components + j) * vd));
    }
  }
}

void set_identity_bias(Tensor& bias, double beta) {
  std::fill(bias.data.begin(), bias.data.end(), 0.0);
  const std::size_t rows = bias.shape.at(0);
  const std::size_t cols = bias.shape.at(1);
  for (std::size_t u = 0; u < std::min(rows, cols); ++u) bias.data[u * cols + u] = beta;
}

}  // namespace

ParamHead init_cp_from_ff(const ParamHead& ff, int r, Rng& rng) {
  check_ff(ff, r);
  const Circuit cp = build_cp(ff.spec.n, ff.spec.v, r);
  ParamHead out = ParamHead::zeros(cp, ff.d);
  replicate_w(ff, out);
  // Non-uniform, context-dependent mixture weights break the symmetry
  // between the identical components once training starts.
  for (auto& t : out.R) t = Tensor::randn(t.shape, kSumInitStd, rng);
  for (auto& t : out.bias_R) t = Tensor::randn(t.shape, kSumInitStd, rng);
  return out;
}

ParamHead init_hmm_identity(const ParamHead& cp, double beta) {
  if (cp.spec.kind != ArchKind::kCP) throw ContractError("identity initialization needs a CP head");
  if (beta < 0.0) throw ContractError("identity bias must be non-negative");
  const Circuit hmm = build_hmm(cp.spec.n, cp.spec.v, cp.spec.r);
  ParamHead out = ParamHead::zeros(hmm, cp.d);
  out.W = cp.W;
  out.R[0] = cp.R[0];
  out.bias_R[0] = cp.bias_R[0];
  for (std::size_t t = 1; t < out.bias_R.size(); ++t) set_identity_bias(out.bias_R[t], beta);
  return out;
}

ParamHead init_btree_from_ff(const ParamHead& ff, int r, double beta, Rng& rng) {
  check_ff(ff, r);
  if (beta < 0.0) throw ContractError("identity bias must be non-negative");
  const Circuit tree = build_btree(ff.spec.n, ff.spec.v, r);
  ParamHead out = ParamHead::zeros(tree, ff.d);
  replicate_w(ff, out);
  const auto owner = tree.table_owner();
  for (std::size_t t = 0; t < owner.size(); ++t) {
    if (owner[t] == tree.output) {
      out.R[t] = Tensor::randn(out.R[t].shape, kSumInitStd, rng);
      out.bias_R[t] = Tensor::randn(out.bias_R[t].shape, kSumInitStd, rng);
    } else {
      set_identity_bias(out.bias_R[t], beta);
    }
  }
  return out;
}

std::vector<NamedTensor> named_tensors(Model& m) {
  std::vector<NamedTensor> out;
  auto add = [&out](std::string name, TensorGroup group, Tensor& t) {
    out.push_back({std::move(name), group, &t});
  };
  add("backbone.embed", TensorGroup::kBackbone, m.backbone.embed);
  add("backbone.context", TensorGroup::kBackbone, m.backbone.context);
  for (std::size_t l = 0; l < m.backbone.weight.size(); ++l) {
    add("backbone.weight." + std::to_string(l), TensorGroup::kBackbone, m.backbone.weight[l]);
    add("backbone.bias." + std::to_string(l), TensorGroup::kBackbone, m.backbone.bias[l]);
  }
  add("target.U", TensorGroup::kTarget, m.target.U);
  for (std::size_t a = 0; a < m.adapter.up.size(); ++a) {
    add("adapter.up." + std::to_string(a), TensorGroup::kAdapter, m.adapter.up[a]);
    add("adapter.down." + std::to_string(a), TensorGroup::kAdapter, m.adapter.down[a]);
    add("adapter.bias." + std::to_string(a), TensorGroup::kAdapter, m.adapter.bias[a]);
  }
  add("head.W", TensorGroup::kHead, m.head.W);
  for (std::size_t t = 0; t < m.head.R.size(); ++t) {
    add("head.R." + std::to_string(t), TensorGroup::kHead, m.head.R[t]);
    add("head.bias_R." + std::to_string(t), TensorGroup::kHead, m.head.bias_R[t]);
  }
  return out;
}

}  // namespace mtpc
