#include "mtpc/inference.hpp"

#include <cmath>
#include <ostream>

#include "mtpc/error.hpp"

namespace mtpc {
namespace {

void check_window(const Circuit& c, std::span<const int> window, bool allow_missing) {
  if (static_cast<int>(window.size()) != c.spec.n) {
    throw ContractError("window length must equal n");
  }
  for (int tok : window) {
    if (tok >= c.spec.v || tok < (allow_missing ? -1 : 0)) {
      throw ContractError("token id out of range");
    }
  }
}

// Chooses a column of a sum unit; `values` gives the log value of each
// concatenated input unit (empty: weights alone).
int choose_column(const double* log_row, int cols, const std::vector<double>& values, Rng& rng) {
  std::vector<double> w(log_row, log_row + cols);
  if (!values.empty()) {
    for (int k = 0; k < cols; ++k) w[k] += values[k];
  }
  return sample_log_categorical(w, rng);
}

std::vector<int> ancestral(const Circuit& c, const CircuitParams& p, const LogParams& lp,
                           const ForwardTape* tape, std::span<const int> evidence, Rng& rng) {
  const int n = c.spec.n;
  std::vector<int> out(evidence.begin(), evidence.end());
  std::vector<char> reached(n, 0);
  std::vector<std::pair<int, int>> stack{{c.output, 0}};
  std::vector<double> column;
  while (!stack.empty()) {
    const auto [li, u] = stack.back();
    stack.pop_back();
    const Layer& layer = c.layers[li];
    switch (layer.kind) {
      case LayerKind::kInput: {
        const int pos = layer.position;
        if (reached[pos]) throw ContractError("two input units reached for one position");
        reached[pos] = 1;
        if (out[pos] < 0) out[pos] = sample_categorical(p.phi_row(pos, u), rng);
        break;
      }
      case LayerKind::kProduct:
        for (auto it = layer.inputs.rbegin(); it != layer.inputs.rend(); ++it) {
          stack.emplace_back(*it, u);
        }
        break;
      case LayerKind::kSum: {
        int cols = 0;
        for (int in : layer.inputs) cols += c.layers[in].width;
        column.clear();
        if (tape != nullptr) {
          for (int in : layer.inputs) {
            const auto vals = tape->values(in);
            for (int k = 0; k < c.layers[in].width; ++k) column.push_back(vals[k]);
          }
        }
        const double* row = lp.log_omega[layer.table_id].data() + static_cast<std::size_t>(u) * cols;
        int k = choose_column(row, cols, column, rng);
        for (int in : layer.inputs) {
          if (k < c.layers[in].width) {
            stack.emplace_back(in, k);
            break;
          }
          k -= c.layers[in].width;
        }
        break;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!reached[i]) throw ContractError("sampling left a position unassigned");
  }
  return out;
}

}  // namespace

double evaluate(const Circuit& c, const CircuitParams& p, std::span<const int> window) {
  check_window(c, window, false);
  const LogParams lp = LogParams::from(c, p);
  ForwardTape tape(c, lp, window, 1);
  return tape.output(0);
}

double partition(const Circuit& c, const CircuitParams& p) {
  const LogParams lp = LogParams::from(c, p);
  const std::vector<int> none(c.spec.n, -1);
  ForwardTape tape(c, lp, none, 1);
  return tape.output(0);
}

std::vector<double> prefix_marginals(const Circuit& c, const LogParams& lp,
                                     std::span<const int> window) {
  check_window(c, window, false);
  const int n = c.spec.n;
  std::vector<int> evidence(static_cast<std::size_t>(n) * n, -1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) evidence[static_cast<std::size_t>(i) * n + j] = window[j];
  }
  ForwardTape tape(c, lp, evidence, n);
  std::vector<double> pm(n);
  for (int i = 0; i < n; ++i) pm[i] = tape.output(i);
  return pm;
}

std::vector<double> prefix_marginals(const Circuit& c, const CircuitParams& p,
                                     std::span<const int> window) {
  return prefix_marginals(c, LogParams::from(c, p), window);
}

std::vector<double> conditionals_from_prefix(std::span<const double> pm) {
  std::vector<double> out(pm.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < pm.size(); ++i) {
    if (prev == kNegInf) {
      if (pm[i] != kNegInf) throw ContractError("finite marginal after a zero-probability prefix");
      out[i] = kNegInf;
      continue;
    }
    out[i] = pm[i] - prev;
    prev = pm[i];
  }
  return out;
}

std::vector<double> conditional_distribution(const Circuit& c, const LogParams& lp,
                                             std::span<const int> prefix) {
  const int n = c.spec.n;
  const int v = c.spec.v;
  const int i = static_cast<int>(prefix.size());
  if (i >= n) throw ContractError("prefix must be shorter than the window");
  std::vector<int> evidence(static_cast<std::size_t>(v) * n, -1);
  for (int x = 0; x < v; ++x) {
    for (int j = 0; j < i; ++j) {
      if (prefix[j] < 0 || prefix[j] >= v) throw ContractError("token id out of range");
      evidence[static_cast<std::size_t>(x) * n + j] = prefix[j];
    }
    evidence[static_cast<std::size_t>(x) * n + i] = x;
  }
  ForwardTape tape(c, lp, evidence, v);
  std::vector<double> logs(v);
  for (int x = 0; x < v; ++x) logs[x] = tape.output(x);
  if (logsumexp(logs) == kNegInf) throw ContractError("conditioning on a zero-probability prefix");
  return softmax(logs);
}

std::vector<int> sample_window(const Circuit& c, const CircuitParams& p, Rng& rng) {
  const std::vector<int> none(c.spec.n, -1);
  const LogParams lp = LogParams::from(c, p);
  return ancestral(c, p, lp, nullptr, none, rng);
}

std::vector<int> sample_window_given(const Circuit& c, const CircuitParams& p,
                                     std::span<const int> evidence, Rng& rng) {
  check_window(c, evidence, true);
  const LogParams lp = LogParams::from(c, p);
  bool any = false;
  for (int tok : evidence) any = any || tok >= 0;
  if (!any) return ancestral(c, p, lp, nullptr, evidence, rng);
  ForwardTape tape(c, lp, evidence, 1);
  if (tape.output(0) == kNegInf) throw ContractError("evidence has zero probability");
  return ancestral(c, p, lp, &tape, evidence, rng);
}

std::vector<int> greedy_window_given(const Circuit& c, const CircuitParams& p,
                                     std::span<const int> prefix) {
  const LogParams lp = LogParams::from(c, p);
  std::vector<int> out(prefix.begin(), prefix.end());
  while (static_cast<int>(out.size()) < c.spec.n) {
    const auto dist = conditional_distribution(c, lp, out);
    out.push_back(argmax(dist));
  }
  return out;
}

std::vector<int> greedy_window(const Circuit& c, const CircuitParams& p) {
  return greedy_window_given(c, p, {});
}

std::vector<int> window_from_index(std::size_t index, int n, int v) {
  std::vector<int> w(n);
  for (int i = n - 1; i >= 0; --i) {
    w[i] = static_cast<int>(index % static_cast<std::size_t>(v));
    index /= static_cast<std::size_t>(v);
  }
  return w;
}

std::vector<double> enumerate_joint(const Circuit& c, const CircuitParams& p) {
  const int n = c.spec.n;
  const int v = c.spec.v;
  if (std::pow(static_cast<double>(v), n) > kMaxEnumeration) {
    throw GuardError("enumerate_joint: v^n exceeds the enumeration limit");
  }
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total *= static_cast<std::size_t>(v);
  const LogParams lp = LogParams::from(c, p);
  std::vector<double> table(total);
  constexpr std::size_t kChunk = 4096;
  std::vector<int> evidence;
  for (std::size_t start = 0; start < total; start += kChunk) {
    const std::size_t count = std::min(kChunk, total - start);
    evidence.clear();
    for (std::size_t k = 0; k < count; ++k) {
      const auto w = window_from_index(start + k, n, v);
      evidence.insert(evidence.end(), w.begin(), w.end());
    }
    ForwardTape tape(c, lp, evidence, static_cast<int>(count));
    for (std::size_t k = 0; k < count; ++k) table[start + k] = std::exp(tape.output(static_cast<int>(k)));
  }
  return table;
}

void write_joint_csv(std::ostream& out, const Circuit& c, std::span<const double> table) {
  const int n = c.spec.n;
  for (int i = 0; i < n; ++i) out << "x" << i << ",";
  out << "probability\n";
  out.precision(17);
  for (std::size_t k = 0; k < table.size(); ++k) {
    for (int tok : window_from_index(k, n, c.spec.v)) out << tok << ",";
    out << table[k] << "\n";
  }
}

}  // namespace mtpc
