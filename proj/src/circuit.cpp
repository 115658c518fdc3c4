#include "mtpc/circuit.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "mtpc/error.hpp"

namespace mtpc {

namespace {

std::vector<int> merged_scope(const std::vector<Layer>& layers, const std::vector<int>& inputs) {
  std::vector<int> scope;
  for (int in : inputs) {
    const auto& s = layers[in].scope;
    scope.insert(scope.end(), s.begin(), s.end());
  }
  std::sort(scope.begin(), scope.end());
  scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
  return scope;
}

class Builder {
 public:
  Builder(ArchitectureSpec spec, int input_width) {
    circuit_.spec = spec;
    circuit_.input_width = input_width;
  }

  int input(int position) {
    Layer layer;
    layer.kind = LayerKind::kInput;
    layer.scope = {position};
    layer.width = circuit_.input_width;
    layer.table_id = position;
    layer.position = position;
    return push(std::move(layer));
  }

  int product(std::vector<int> inputs, int width) {
    Layer layer;
    layer.kind = LayerKind::kProduct;
    layer.scope = merged_scope(circuit_.layers, inputs);
    layer.width = width;
    layer.inputs = std::move(inputs);
    return push(std::move(layer));
  }

  int sum(std::vector<int> inputs, int width, int table_id) {
    Layer layer;
    layer.kind = LayerKind::kSum;
    layer.scope = merged_scope(circuit_.layers, inputs);
    layer.width = width;
    int cols = 0;
    for (int in : inputs) cols += circuit_.layers[in].width;
    layer.inputs = std::move(inputs);
    if (table_id < 0) table_id = static_cast<int>(circuit_.omega_shapes.size());
    if (static_cast<int>(circuit_.omega_shapes.size()) <= table_id) {
      circuit_.omega_shapes.resize(table_id + 1);
    }
    circuit_.omega_shapes[table_id] = {width, cols};
    layer.table_id = table_id;
    return push(std::move(layer));
  }

  Circuit finish(int output) {
    circuit_.output = output;
    return std::move(circuit_);
  }

  const Layer& layer(int index) const { return circuit_.layers[index]; }

 private:
  int push(Layer layer) {
    circuit_.layers.push_back(std::move(layer));
    return static_cast<int>(circuit_.layers.size()) - 1;
  }

  Circuit circuit_;
};

void check_common(int n, int v, int r) {
  if (n < 1) throw SpecError("window size n must be >= 1");
  if (v < 2) throw SpecError("vocabulary size v must be >= 2");
  if (r < 1) throw SpecError("rank r must be >= 1");
}

int btree_node(Builder& b, int lo, int hi, int r, bool root) {
  if (hi - lo == 1) return b.input(lo);
  const int mid = lo + (hi - lo) / 2;
  const int left = btree_node(b, lo, mid, r, false);
  const int right = btree_node(b, mid, hi, r, false);
  const int prod = b.product({left, right}, r);
  return b.sum({prod}, root ? 1 : r, -1);
}

}  // namespace

std::string_view to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::kFF: return "FF";
    case ArchKind::kCP: return "CP";
    case ArchKind::kHMM: return "HMM";
    case ArchKind::kBTree: return "BTREE";
  }
  return "?";
}

ArchKind arch_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  if (upper == "FF") return ArchKind::kFF;
  if (upper == "CP") return ArchKind::kCP;
  if (upper == "HMM") return ArchKind::kHMM;
  if (upper == "BTREE") return ArchKind::kBTree;
  throw SpecError("unknown architecture: " + std::string(name));
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "INPUT";
    case LayerKind::kProduct: return "PRODUCT";
    case LayerKind::kSum: return "SUM";
  }
  return "?";
}

std::size_t Circuit::num_input_params() const {
  return static_cast<std::size_t>(spec.n) * input_width * spec.v;
}

std::size_t Circuit::num_sum_params() const {
  std::size_t total = 0;
  for (const auto& s : omega_shapes) total += static_cast<std::size_t>(s.rows) * s.cols;
  return total;
}

int Circuit::num_sum_layers() const {
  return static_cast<int>(std::count_if(layers.begin(), layers.end(),
                                        [](const Layer& l) { return l.kind == LayerKind::kSum; }));
}

std::vector<int> Circuit::table_owner() const {
  std::vector<int> owner(omega_shapes.size(), -1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::kSum && l.table_id >= 0 &&
        l.table_id < static_cast<int>(owner.size())) {
      owner[l.table_id] = static_cast<int>(i);
    }
  }
  return owner;
}

Circuit build_ff(int n, int v) {
  check_common(n, v, 1);
  Builder b({ArchKind::kFF, n, 1, v}, 1);
  std::vector<int> inputs;
  for (int i = 0; i < n; ++i) inputs.push_back(b.input(i));
  if (n == 1) return b.finish(inputs[0]);
  return b.finish(b.product(inputs, 1));
}

Circuit build_cp(int n, int v, int r) {
  check_common(n, v, r);
  Builder b({ArchKind::kCP, n, r, v}, r);
  std::vector<int> inputs;
  for (int i = 0; i < n; ++i) inputs.push_back(b.input(i));
  const int body = n == 1 ? inputs[0] : b.product(inputs, r);
  return b.finish(b.sum({body}, 1, 0));
}

Circuit build_hmm(int n, int v, int r) {
  check_common(n, v, r);
  Builder b({ArchKind::kHMM, n, r, v}, r);
  std::vector<int> emissions;
  for (int i = 0; i < n; ++i) emissions.push_back(b.input(i));
  // Backward messages: msg_i(z_i) = e_i(x_i | z_i) * sum_{z_{i+1}} t(z_{i+1} | z_i) msg_{i+1}.
  int message = emissions[n - 1];
  for (int i = n - 2; i >= 0; --i) {
    const int transition = b.sum({message}, r, i + 1);
    message = b.product({emissions[i], transition}, r);
  }
  return b.finish(b.sum({message}, 1, 0));
}

Circuit build_btree(int n, int v, int r) {
  check_common(n, v, r);
  if (n < 2) throw SpecError("BTREE requires n >= 2 (use FF for a single position)");
  Builder b({ArchKind::kBTree, n, r, v}, r);
  const int root = btree_node(b, 0, n, r, true);
  return b.finish(root);
}

Circuit build_circuit(const ArchitectureSpec& spec) {
  switch (spec.kind) {
    case ArchKind::kFF:
      if (spec.r != 1) throw SpecError("FF requires r == 1");
      return build_ff(spec.n, spec.v);
    case ArchKind::kCP: return build_cp(spec.n, spec.v, spec.r);
    case ArchKind::kHMM: return build_hmm(spec.n, spec.v, spec.r);
    case ArchKind::kBTree: return build_btree(spec.n, spec.v, spec.r);
  }
  throw SpecError("unknown architecture");
}

ValidationReport validate(const Circuit& c) {
  ValidationReport rep;
  auto fail = [&rep](bool& flag, std::string msg) {
    flag = false;
    rep.failures.push_back(std::move(msg));
  };
  const int num_layers = static_cast<int>(c.layers.size());
  const int n = c.spec.n;

  for (int i = 0; i < num_layers; ++i) {
    const Layer& l = c.layers[i];
    const std::string tag = "layer " + std::to_string(i) + ": ";
    for (int in : l.inputs) {
      if (in < 0 || in >= i) fail(rep.acyclic, tag + "input " + std::to_string(in) + " does not precede it");
    }
  }
  if (!rep.acyclic) {
    // Scope checks below index inputs; bail out on a broken graph.
    rep.scopes_consistent = rep.smooth = rep.decomposable = rep.single_output = rep.param_shapes = false;
    return rep;
  }

  std::vector<int> table_uses(c.omega_shapes.size(), 0);
  for (int i = 0; i < num_layers; ++i) {
    const Layer& l = c.layers[i];
    const std::string tag = "layer " + std::to_string(i) + ": ";
    if (!std::is_sorted(l.scope.begin(), l.scope.end()) ||
        std::adjacent_find(l.scope.begin(), l.scope.end()) != l.scope.end()) {
      fail(rep.scopes_consistent, tag + "scope not a sorted set");
    }
    if (l.width < 1) fail(rep.param_shapes, tag + "width < 1");
    switch (l.kind) {
      case LayerKind::kInput:
        if (!l.inputs.empty()) fail(rep.scopes_consistent, tag + "input layer with inputs");
        if (l.scope.size() != 1 || l.scope[0] != l.position) {
          fail(rep.scopes_consistent, tag + "input scope must be its single position");
        }
        if (l.position < 0 || l.position >= n) fail(rep.param_shapes, tag + "position out of range");
        if (l.width != c.input_width) fail(rep.param_shapes, tag + "input width differs from phi components");
        if (l.table_id != l.position) fail(rep.param_shapes, tag + "phi table id must equal position");
        break;
      case LayerKind::kProduct: {
        if (l.inputs.empty()) fail(rep.scopes_consistent, tag + "product without inputs");
        if (merged_scope(c.layers, l.inputs) != l.scope) {
          fail(rep.scopes_consistent, tag + "scope is not the union of input scopes");
        }
        std::size_t total = 0;
        for (int in : l.inputs) total += c.layers[in].scope.size();
        if (total != merged_scope(c.layers, l.inputs).size()) {
          fail(rep.decomposable, tag + "product inputs have overlapping scopes");
        }
        for (int in : l.inputs) {
          if (c.layers[in].width != l.width) fail(rep.param_shapes, tag + "product input width mismatch");
        }
        break;
      }
      case LayerKind::kSum: {
        if (l.inputs.empty()) fail(rep.scopes_consistent, tag + "sum without inputs");
        if (merged_scope(c.layers, l.inputs) != l.scope) {
          fail(rep.scopes_consistent, tag + "scope is not the union of input scopes");
        }
        for (int in : l.inputs) {
          if (c.layers[in].scope != c.layers[l.inputs[0]].scope) {
            fail(rep.smooth, tag + "sum inputs have different scopes");
            break;
          }
        }
        int cols = 0;
        for (int in : l.inputs) cols += c.layers[in].width;
        if (l.table_id < 0 || l.table_id >= static_cast<int>(c.omega_shapes.size())) {
          fail(rep.param_shapes, tag + "omega table id out of range");
        } else {
          ++table_uses[l.table_id];
          const TableShape& s = c.omega_shapes[l.table_id];
          if (s.rows != l.width || s.cols != cols) fail(rep.param_shapes, tag + "omega table shape mismatch");
        }
        break;
      }
    }
  }
  for (std::size_t t = 0; t < table_uses.size(); ++t) {
    if (table_uses[t] != 1) {
      fail(rep.param_shapes, "omega table " + std::to_string(t) + " used " +
                                 std::to_string(table_uses[t]) + " times");
    }
  }

  if (c.output < 0 || c.output >= num_layers) {
    fail(rep.single_output, "output index out of range");
  } else {
    const Layer& out = c.layers[c.output];
    std::vector<int> full(n);
    std::iota(full.begin(), full.end(), 0);
    if (out.width != 1) fail(rep.single_output, "output layer width must be 1");
    if (out.scope != full) fail(rep.single_output, "output scope is not the full window");
    // Every layer must feed the output, otherwise there is more than one root.
    std::vector<bool> reached(num_layers, false);
    reached[c.output] = true;
    for (int i = c.output; i >= 0; --i) {
      if (!reached[i]) continue;
      for (int in : c.layers[i].inputs) reached[in] = true;
    }
    for (int i = 0; i < num_layers; ++i) {
      if (!reached[i]) fail(rep.single_output, "layer " + std::to_string(i) + " does not reach the output");
    }
  }
  return rep;
}

nlohmann::json to_json(const ArchitectureSpec& spec) {
  return {{"kind", std::string(to_string(spec.kind))}, {"n", spec.n}, {"r", spec.r}, {"v", spec.v}};
}

ArchitectureSpec spec_from_json(const nlohmann::json& doc) {
  try {
    ArchitectureSpec spec;
    spec.kind = arch_from_string(doc.at("kind").get<std::string>());
    spec.n = doc.at("n").get<int>();
    spec.r = doc.value("r", 1);
    spec.v = doc.at("v").get<int>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture spec: ") + e.what());
  }
}

nlohmann::json to_json(const Circuit& c) {
  nlohmann::json doc = to_json(c.spec);
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : c.layers) {
    layers.push_back({{"kind", std::string(to_string(l.kind))},
                      {"scope", l.scope},
                      {"width", l.width},
                      {"inputs", l.inputs},
                      {"table_id", l.table_id}});
  }
  doc["layers"] = std::move(layers);
  doc["output"] = c.output;
  return doc;
}

Circuit circuit_from_json(const nlohmann::json& doc) {
  try {
    Circuit c;
    c.spec = spec_from_json(doc);
    int max_table = -1;
    bool saw_input = false;
    for (const auto& item : doc.at("layers")) {
      Layer l;
      const auto kind = item.at("kind").get<std::string>();
      if (kind == "INPUT") {
        l.kind = LayerKind::kInput;
      } else if (kind == "PRODUCT") {
        l.kind = LayerKind::kProduct;
      } else if (kind == "SUM") {
        l.kind = LayerKind::kSum;
      } else {
        throw ConfigError("unknown layer kind " + kind);
      }
      l.scope = item.at("scope").get<std::vector<int>>();
      l.width = item.at("width").get<int>();
      l.inputs = item.value("inputs", std::vector<int>{});
      l.table_id = item.value("table_id", -1);
      if (l.kind == LayerKind::kInput) {
        l.position = l.table_id;
        if (!saw_input) c.input_width = l.width;
        saw_input = true;
      }
      if (l.kind == LayerKind::kSum) max_table = std::max(max_table, l.table_id);
      c.layers.push_back(std::move(l));
    }
    c.omega_shapes.assign(max_table + 1, {});
    for (const Layer& l : c.layers) {
      if (l.kind != LayerKind::kSum || l.table_id < 0) continue;
      int cols = 0;
      for (int in : l.inputs) {
        if (in < 0 || in >= static_cast<int>(c.layers.size())) throw ConfigError("layer input out of range");
        cols += c.layers[in].width;
      }
      c.omega_shapes[l.table_id] = {l.width, cols};
    }
    c.output = doc.contains("output") ? doc["output"].get<int>() : static_cast<int>(c.layers.size()) - 1;
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("circuit document: ") + e.what());
  }
}

}  // namespace mtpc
