#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include "mtpc/cli.hpp"
#include "mtpc/inference.hpp"
#include "mtpc/neural.hpp"
#include "mtpc/pipeline.hpp"
#include "mtpc/reference.hpp"
#include "mtpc/specdec.hpp"

namespace mtpc {
namespace {

constexpr ArchKind kArchs[] = {ArchKind::kFF, ArchKind::kCP, ArchKind::kHMM, ArchKind::kBTree};

ArchitectureSpec make_spec(ArchKind kind, int n, int r, int v) {
  if (kind == ArchKind::kFF) r = 1;
  if (kind == ArchKind::kBTree && n < 2) n = 2;
  return {kind, n, r, v};
}

double worst_oracle_gap() {
  double worst = 0.0;
  for (ArchKind kind : kArchs) {
    for (int n : {2, 3}) {
      for (int v : {2, 3}) {
        for (int r : {1, 2}) {
          for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const Circuit c = build_circuit(make_spec(kind, n, r, v));
            Rng rng(seed);
            const CircuitParams p = CircuitParams::random(c, rng);
            const auto table = reference::joint(c, p);
            for (std::size_t i = 0; i < table.size(); ++i) {
              const auto w = window_from_index(i, c.spec.n, v);
              worst = std::max(worst, std::abs(std::exp(evaluate(c, p, w)) - table[i]));
              const auto pm = prefix_marginals(c, p, w);
              for (int k = 0; k < c.spec.n; ++k) {
                const double ref = reference::prefix_probability(c, p, std::span<const int>(w.data(), k + 1));
                worst = std::max(worst, std::abs(std::exp(pm[k]) - ref));
              }
            }
            worst = std::max(worst, std::abs(std::exp(partition(c, p)) - 1.0));
          }
        }
      }
    }
  }
  return worst;
}

double worst_reduction_gap() {
  double worst = 0.0;
  Rng rng(11);
  for (int n : {2, 3}) {
    const int v = 3;
    const Circuit ff = build_ff(n, v);
    const CircuitParams pf = CircuitParams::random(ff, rng);
    const auto base = enumerate_joint(ff, pf);
    for (const Circuit& other : {build_cp(n, v, 1), build_btree(n, v, 1)}) {
      CircuitParams po = CircuitParams::uniform(other);
      po.phi = pf.phi;
      const auto t = enumerate_joint(other, po);
      for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - base[i]));
    }
  }
  return worst;
}

double lossless_gap(ArchKind kind, std::uint64_t seed, int runs) {
  Rng rng(seed);
  const int v = 3;
  const int m = 2;
  const Model model = random_model(make_spec(kind, 2, 2, v), 4, 2, 1, 1.0, rng);
  const std::vector<int> prompt{1, 2};
  const auto exact = reference::ar_law(model.backbone, model.target, prompt, m);
  std::vector<double> counts(exact.size(), 0.0);
  for (int i = 0; i < runs; ++i) {
    Session s(model, prompt, DecodeMode::kSample, seed * 1000003ULL + static_cast<std::uint64_t>(i));
    const auto out = shared_state_decode(s, m);
    counts[static_cast<std::size_t>(out[0] * v + out[1])] += 1.0 / runs;
  }
  return total_variation(counts, exact);
}

bool greedy_identical(ArchKind kind, std::uint64_t seed) {
  Rng rng(seed);
  const Model model = random_model(make_spec(kind, 3, 2, 4), 6, 2, 1, 1.0, rng);
  for (int i = 0; i < 10; ++i) {
    std::vector<int> prompt;
    for (int t = 0; t < 3; ++t) prompt.push_back(static_cast<int>(rng() % 4));
    Session s(model, prompt, DecodeMode::kGreedy, 0);
    auto spec = shared_state_decode(s, 20);
    spec.resize(20);
    Rng unused(0);
    if (spec != ar_generate(model.backbone, model.target, prompt, 20, DecodeMode::kGreedy, unused)) return false;
  }
  return true;
}

}  // namespace

int run_selftest(std::ostream& out) {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << " (" << detail << ")\n";
    failures += ok ? 0 : 1;
  };
  const double oracle = worst_oracle_gap();
  report("oracle equivalence", oracle <= 1e-9, "max gap " + std::to_string(oracle));
  const double reduce = worst_reduction_gap();
  report("architecture reductions", reduce <= 1e-9, "max gap " + std::to_string(reduce));
  for (ArchKind kind : kArchs) {
    const double tv = lossless_gap(kind, 5, 20000);
    report("lossless sampling " + std::string(to_string(kind)), tv <= 0.03, "TV " + std::to_string(tv));
  }
  for (ArchKind kind : kArchs) {
    report("greedy identity " + std::string(to_string(kind)), greedy_identical(kind, 9), "10 prompts");
  }
  out << (failures == 0 ? "selftest passed\n" : "selftest failed\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace mtpc
