#include "mtpc/engine.hpp"

#include <cmath>
#include <string>

#include "mtpc/error.hpp"

namespace mtpc {

CircuitParams CircuitParams::uniform(const Circuit& c) {
  CircuitParams p;
  p.n = c.spec.n;
  p.components = c.input_width;
  p.v = c.spec.v;
  p.phi.assign(c.num_input_params(), 1.0 / c.spec.v);
  for (const auto& s : c.omega_shapes) {
    p.omega.emplace_back(static_cast<std::size_t>(s.rows) * s.cols, 1.0 / s.cols);
  }
  return p;
}

CircuitParams CircuitParams::random(const Circuit& c, Rng& rng, double logit_scale) {
  CircuitParams p = uniform(c);
  std::normal_distribution<double> noise(0.0, logit_scale);
  std::vector<double> logits;
  auto fill_rows = [&](std::vector<double>& buf, std::size_t width) {
    for (std::size_t off = 0; off < buf.size(); off += width) {
      logits.resize(width);
      for (double& x : logits) x = noise(rng);
      const auto row = softmax(logits);
      std::copy(row.begin(), row.end(), buf.begin() + static_cast<std::ptrdiff_t>(off));
    }
  };
  fill_rows(p.phi, static_cast<std::size_t>(p.v));
  for (std::size_t t = 0; t < p.omega.size(); ++t) {
    fill_rows(p.omega[t], static_cast<std::size_t>(c.omega_shapes[t].cols));
  }
  return p;
}

void check_param_shapes(const Circuit& c, const CircuitParams& p) {
  if (p.n != c.spec.n || p.v != c.spec.v || p.components != c.input_width ||
      p.phi.size() != c.num_input_params()) {
    throw ContractError("phi shape does not match circuit");
  }
  if (p.omega.size() != c.omega_shapes.size()) throw ContractError("omega table count mismatch");
  for (std::size_t t = 0; t < p.omega.size(); ++t) {
    const auto& s = c.omega_shapes[t];
    if (p.omega[t].size() != static_cast<std::size_t>(s.rows) * s.cols) {
      throw ContractError("omega table " + std::to_string(t) + " shape mismatch");
    }
  }
}

void check_params(const Circuit& c, const CircuitParams& p, double tol) {
  check_param_shapes(c, p);
  auto check_rows = [tol](const std::vector<double>& buf, std::size_t width, const char* what) {
    for (std::size_t off = 0; off < buf.size(); off += width) {
      double total = 0.0;
      for (std::size_t i = 0; i < width; ++i) {
        if (!(buf[off + i] >= 0.0)) throw ContractError(std::string(what) + " has a negative entry");
        total += buf[off + i];
      }
      if (std::abs(total - 1.0) > tol) throw ContractError(std::string(what) + " row does not sum to 1");
    }
  };
  check_rows(p.phi, static_cast<std::size_t>(p.v), "phi");
  for (std::size_t t = 0; t < p.omega.size(); ++t) {
    check_rows(p.omega[t], static_cast<std::size_t>(c.omega_shapes[t].cols), "omega");
  }
}

LogParams LogParams::from(const Circuit& c, const CircuitParams& p) {
  check_param_shapes(c, p);
  LogParams lp;
  lp.n = p.n;
  lp.components = p.components;
  lp.v = p.v;
  lp.log_phi.resize(p.phi.size());
  for (std::size_t i = 0; i < p.phi.size(); ++i) lp.log_phi[i] = std::log(p.phi[i]);
  lp.log_mass.resize(static_cast<std::size_t>(p.n) * p.components);
  for (int i = 0; i < p.n; ++i) {
    for (int j = 0; j < p.components; ++j) {
      double total = 0.0;
      for (double x : p.phi_row(i, j)) total += x;
      lp.log_mass[static_cast<std::size_t>(i) * p.components + j] = std::log(total);
    }
  }
  lp.log_omega.resize(p.omega.size());
  for (std::size_t t = 0; t < p.omega.size(); ++t) {
    lp.log_omega[t].resize(p.omega[t].size());
    for (std::size_t i = 0; i < p.omega[t].size(); ++i) lp.log_omega[t][i] = std::log(p.omega[t][i]);
  }
  return lp;
}

ForwardTape::ForwardTape(const Circuit& c, const LogParams& lp, std::span<const int> evidence,
                         int batch)
    : circuit_(&c), lp_(&lp), evidence_(evidence.begin(), evidence.end()), batch_(batch) {
  const int n = c.spec.n;
  if (static_cast<std::size_t>(batch) * n != evidence.size()) {
    throw ContractError("evidence size does not match batch * n");
  }
  for (int tok : evidence_) {
    if (tok < -1 || tok >= c.spec.v) throw ContractError("token id out of range");
  }
  const std::size_t B = static_cast<std::size_t>(batch);
  values_.resize(c.layers.size());
  std::vector<double> column;
  for (std::size_t li = 0; li < c.layers.size(); ++li) {
    const Layer& layer = c.layers[li];
    auto& out = values_[li];
    out.assign(static_cast<std::size_t>(layer.width) * B, 0.0);
    switch (layer.kind) {
      case LayerKind::kInput: {
        const int pos = layer.position;
        for (int j = 0; j < layer.width; ++j) {
          const std::size_t row = static_cast<std::size_t>(pos) * lp.components + j;
          for (std::size_t b = 0; b < B; ++b) {
            const int tok = evidence_[b * n + pos];
            out[j * B + b] = tok < 0 ? lp.log_mass[row] : lp.log_phi[row * lp.v + tok];
          }
        }
        break;
      }
      case LayerKind::kProduct: {
        for (int in : layer.inputs) {
          const auto& src = values_[in];
          for (std::size_t k = 0; k < out.size(); ++k) out[k] += src[k];
        }
        break;
      }
      case LayerKind::kSum: {
        const auto& lw = lp.log_omega[layer.table_id];
        int cols = 0;
        for (int in : layer.inputs) cols += c.layers[in].width;
        column.resize(cols);
        for (std::size_t b = 0; b < B; ++b) {
          int off = 0;
          for (int in : layer.inputs) {
            const auto& src = values_[in];
            const int w = c.layers[in].width;
            for (int u = 0; u < w; ++u) column[off + u] = src[u * B + b];
            off += w;
          }
          for (int u = 0; u < layer.width; ++u) {
            const double* wrow = lw.data() + static_cast<std::size_t>(u) * cols;
            double hi = kNegInf;
            for (int k = 0; k < cols; ++k) hi = std::max(hi, wrow[k] + column[k]);
            if (hi == kNegInf) {
              out[u * B + b] = kNegInf;
              continue;
            }
            double acc = 0.0;
            for (int k = 0; k < cols; ++k) acc += std::exp(wrow[k] + column[k] - hi);
            out[u * B + b] = hi + std::log(acc);
          }
        }
        break;
      }
    }
  }
}

LogParamGrads LogParamGrads::zeros_like(const LogParams& lp) {
  LogParamGrads g;
  g.log_phi.assign(lp.log_phi.size(), 0.0);
  for (const auto& t : lp.log_omega) g.log_omega.emplace_back(t.size(), 0.0);
  return g;
}

void backward(const ForwardTape& tape, std::span<const double> seeds, LogParamGrads& grads) {
  const Circuit& c = tape.circuit();
  const LogParams& lp = tape.log_params();
  const std::size_t B = static_cast<std::size_t>(tape.batch());
  if (seeds.size() != B) throw ContractError("seed count must equal batch size");
  std::vector<std::vector<double>> adj(c.layers.size());
  for (std::size_t li = 0; li < c.layers.size(); ++li) {
    adj[li].assign(static_cast<std::size_t>(c.layers[li].width) * B, 0.0);
  }
  for (std::size_t b = 0; b < B; ++b) adj[c.output][b] = seeds[b];

  for (int li = static_cast<int>(c.layers.size()) - 1; li >= 0; --li) {
    const Layer& layer = c.layers[li];
    const auto& a = adj[li];
    const auto vals = tape.values(li);
    switch (layer.kind) {
      case LayerKind::kInput: {
        const int pos = layer.position;
        for (int j = 0; j < layer.width; ++j) {
          const std::size_t row = static_cast<std::size_t>(pos) * lp.components + j;
          for (std::size_t b = 0; b < B; ++b) {
            const double g = a[j * B + b];
            const int tok = tape.evidence(static_cast<int>(b), pos);
            if (g == 0.0 || tok < 0) continue;
            grads.log_phi[row * lp.v + tok] += g;
          }
        }
        break;
      }
      case LayerKind::kProduct: {
        for (int in : layer.inputs) {
          auto& dst = adj[in];
          for (std::size_t k = 0; k < a.size(); ++k) dst[k] += a[k];
        }
        break;
      }
      case LayerKind::kSum: {
        const auto& lw = lp.log_omega[layer.table_id];
        auto& gw = grads.log_omega[layer.table_id];
        int cols = 0;
        for (int in : layer.inputs) cols += c.layers[in].width;
        for (std::size_t b = 0; b < B; ++b) {
          for (int u = 0; u < layer.width; ++u) {
            const double g = a[u * B + b];
            const double y = vals[u * B + b];
            if (g == 0.0 || y == kNegInf) continue;
            const double* wrow = lw.data() + static_cast<std::size_t>(u) * cols;
            double* grow = gw.data() + static_cast<std::size_t>(u) * cols;
            int off = 0;
            for (int in : layer.inputs) {
              const auto src = tape.values(in);
              auto& dst = adj[in];
              const int w = c.layers[in].width;
              for (int k = 0; k < w; ++k) {
                const double x = src[k * B + b];
                if (x == kNegInf || wrow[off + k] == kNegInf) continue;
                const double share = g * std::exp(wrow[off + k] + x - y);
                grow[off + k] += share;
                dst[k * B + b] += share;
              }
              off += w;
            }
          }
        }
        break;
      }
    }
  }
}

}  // namespace mtpc
