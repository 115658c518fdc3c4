#include "mtpc/reference.hpp"

#include <cmath>
#include <functional>

#include "mtpc/error.hpp"

namespace mtpc::reference {
namespace {

double phi(const CircuitParams& p, int position, int component, int token) {
  return p.phi_row(position, component)[token];
}

double omega(const Circuit& c, const CircuitParams& p, int table, int row, int col) {
  return p.omega[table][static_cast<std::size_t>(row) * c.omega_shapes[table].cols + col];
}

int table_for_scope(const Circuit& c, int lo, int hi) {
  for (const Layer& l : c.layers) {
    if (l.kind != LayerKind::kSum || l.scope.empty()) continue;
    if (l.scope.front() == lo && l.scope.back() == hi - 1 &&
        static_cast<int>(l.scope.size()) == hi - lo) {
      return l.table_id;
    }
  }
  throw ContractError("no sum table covers the requested scope");
}

double btree(const Circuit& c, const CircuitParams& p, std::span<const int> x, int lo, int hi,
             int unit) {
  if (hi - lo == 1) return phi(p, lo, unit, x[lo]);
  const int mid = lo + (hi - lo) / 2;
  const int table = table_for_scope(c, lo, hi);
  double total = 0.0;
  for (int k = 0; k < c.spec.r; ++k) {
    total += omega(c, p, table, unit, k) * btree(c, p, x, lo, mid, k) * btree(c, p, x, mid, hi, k);
  }
  return total;
}

}  // namespace

double probability(const Circuit& c, const CircuitParams& p, std::span<const int> x) {
  const int n = c.spec.n;
  const int r = c.spec.r;
  if (static_cast<int>(x.size()) != n) throw ContractError("window length must equal n");
  switch (c.spec.kind) {
    case ArchKind::kFF: {
      double prod = 1.0;
      for (int i = 0; i < n; ++i) prod *= phi(p, i, 0, x[i]);
      return prod;
    }
    case ArchKind::kCP: {
      double total = 0.0;
      for (int j = 0; j < r; ++j) {
        double prod = omega(c, p, 0, 0, j);
        for (int i = 0; i < n; ++i) prod *= phi(p, i, j, x[i]);
        total += prod;
      }
      return total;
    }
    case ArchKind::kHMM: {
      std::vector<int> z(n, 0);
      double total = 0.0;
      while (true) {
        double prod = omega(c, p, 0, 0, z[0]) * phi(p, 0, z[0], x[0]);
        for (int i = 1; i < n; ++i) prod *= omega(c, p, i, z[i - 1], z[i]) * phi(p, i, z[i], x[i]);
        total += prod;
        int i = n - 1;
        while (i >= 0 && ++z[i] == r) z[i--] = 0;
        if (i < 0) break;
      }
      return total;
    }
    case ArchKind::kBTree:
      return btree(c, p, x, 0, n, 0);
  }
  return 0.0;
}

double prefix_probability(const Circuit& c, const CircuitParams& p, std::span<const int> prefix) {
  const int n = c.spec.n;
  const int v = c.spec.v;
  std::vector<int> x(n, 0);
  const int fixed = static_cast<int>(prefix.size());
  for (int i = 0; i < fixed; ++i) x[i] = prefix[i];
  double total = 0.0;
  while (true) {
    total += probability(c, p, x);
    int i = n - 1;
    while (i >= fixed && ++x[i] == v) x[i--] = 0;
    if (i < fixed) break;
  }
  return total;
}

std::vector<double> joint(const Circuit& c, const CircuitParams& p) {
  const int n = c.spec.n;
  const int v = c.spec.v;
  std::vector<int> x(n, 0);
  std::vector<double> out;
  while (true) {
    out.push_back(probability(c, p, x));
    int i = n - 1;
    while (i >= 0 && ++x[i] == v) x[i--] = 0;
    if (i < 0) break;
  }
  return out;
}

std::vector<double> ar_law(const ToyBackbone& bb, const TargetSTP& target,
                           std::span<const int> prompt, int m) {
  std::vector<double> law;
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::function<void(double, int)> expand = [&](double mass, int depth) {
    if (depth == m) {
      law.push_back(mass);
      return;
    }
    const auto p = target_next_dist(target, encode(bb, seq));
    for (int x = 0; x < bb.v; ++x) {
      seq.push_back(x);
      expand(mass * p[x], depth + 1);
      seq.pop_back();
    }
  };
  expand(1.0, 0);
  return law;
}

}  // namespace mtpc::reference
