#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtpc {

enum class ArchKind { kFF, kCP, kHMM, kBTree };

std::string_view to_string(ArchKind kind);
ArchKind arch_from_string(std::string_view name);

// Shape of a multi-token head: window size n, rank r (latent cardinality)
// and vocabulary size v. FF always has r == 1.
struct ArchitectureSpec {
  ArchKind kind = ArchKind::kFF;
  int n = 1;
  int r = 1;
  int v = 2;

  bool operator==(const ArchitectureSpec&) const = default;
};

enum class LayerKind { kInput, kProduct, kSum };

std::string_view to_string(LayerKind kind);

// A group of `width` units sharing scope and wiring.
//
// INPUT:   unit j is the categorical phi[position][j].
// PRODUCT: unit j multiplies unit j of every input (all inputs have `width`
//          units).
// SUM:     unit j mixes the concatenated units of its inputs with row j of
//          omega table `table_id`; the table is width x (sum of input widths).
struct Layer {
  LayerKind kind = LayerKind::kInput;
  std::vector<int> scope;   // sorted window positions, 0-based
  int width = 1;
  std::vector<int> inputs;  // indices of earlier layers
  int table_id = -1;        // SUM: omega table; INPUT: phi table (== position)
  int position = -1;        // INPUT only

  bool operator==(const Layer&) const = default;
};

struct TableShape {
  int rows = 0;
  int cols = 0;
  bool operator==(const TableShape&) const = default;
};

// Layered, scope-annotated computational graph. Parameters never live here:
// one circuit serves every context, only CircuitParams change.
struct Circuit {
  ArchitectureSpec spec;
  std::vector<Layer> layers;  // topological order
  int output = -1;
  int input_width = 1;        // categorical tables per position (1 for FF, r otherwise)
  std::vector<TableShape> omega_shapes;

  std::size_t num_input_params() const;
  std::size_t num_sum_params() const;
  std::size_t num_params() const { return num_input_params() + num_sum_params(); }
  int num_sum_layers() const;
  // Layer index of the SUM layer that owns each omega table.
  std::vector<int> table_owner() const;

  bool operator==(const Circuit&) const = default;
};

Circuit build_ff(int n, int v);
Circuit build_cp(int n, int v, int r);
// Inhomogeneous HMM. Table 0 is the prior over the first latent; table i
// (1 <= i < n) holds q(z_i | z_{i-1}) with rows indexed by z_{i-1}.
Circuit build_hmm(int n, int v, int r);
// Binary tree; each split puts floor(n/2) positions on the left.
Circuit build_btree(int n, int v, int r);
Circuit build_circuit(const ArchitectureSpec& spec);

struct ValidationReport {
  bool acyclic = true;
  bool scopes_consistent = true;
  bool smooth = true;
  bool decomposable = true;
  bool single_output = true;
  bool param_shapes = true;
  std::vector<std::string> failures;

  bool ok() const {
    return acyclic && scopes_consistent && smooth && decomposable && single_output &&
           param_shapes;
  }
};

ValidationReport validate(const Circuit& circuit);

nlohmann::json to_json(const Circuit& circuit);
Circuit circuit_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_json(const nlohmann::json& doc);

}  // namespace mtpc
