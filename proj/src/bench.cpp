#include "mtpc/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <thread>

#include "mtpc/error.hpp"

namespace mtpc {

double est_toks(double mu_acc, double mu_lat) {
  if (!(mu_lat > 0.0)) throw GuardError("est_toks: latency must be positive");
  return mu_acc / mu_lat;
}

double speedup(const MetricRecord& record, const MetricRecord& baseline) {
  if (!(baseline.mu_toks > 0.0)) throw GuardError("speedup: baseline throughput is zero");
  return record.mu_toks / baseline.mu_toks;
}

PromptSets make_prompt_sets(const Teacher& teacher, const BenchConfig& bench) {
  PromptSets sets;
  for (int s = 0; s < bench.repetitions; ++s) {
    sets.push_back(make_prompts(teacher, bench.prompts, bench.prompt_length,
                                bench.seed * 1000003ULL + static_cast<std::uint64_t>(s)));
  }
  return sets;
}

namespace {

using Clock = std::chrono::steady_clock;

struct SetTotals {
  double cycles = 0.0;
  double accepted = 0.0;
  double emitted = 0.0;
  double seconds = 0.0;
};

std::uint64_t decode_seed(const BenchConfig& bench, std::size_t set, std::size_t prompt) {
  return bench.seed ^ (0x9e3779b97f4a7c15ULL * (set * 7919 + prompt + 1));
}

template <typename Body>
std::vector<SetTotals> run_sets(const PromptSets& sets, Body&& body) {
  std::vector<SetTotals> out;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    SetTotals t;
    for (std::size_t p = 0; p < sets[s].size(); ++p) body(s, p, sets[s][p], t);
    out.push_back(t);
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size() - 1))};
}

void fill_rates(MetricRecord& rec, const std::vector<SetTotals>& totals) {
  std::vector<double> acc, lat, toks;
  for (const auto& t : totals) {
    if (!(t.cycles > 0.0) || !(t.seconds > 0.0)) throw GuardError("benchmark measured no cycles");
    acc.push_back(t.accepted / t.cycles);
    lat.push_back(t.seconds / t.cycles);
    toks.push_back(t.emitted / t.seconds);
  }
  std::tie(rec.mu_acc, rec.mu_acc_std) = mean_std(acc);
  std::tie(rec.mu_lat, rec.mu_lat_std) = mean_std(lat);
  std::tie(rec.mu_toks, rec.mu_toks_std) = mean_std(toks);
  rec.est_toks = est_toks(rec.mu_acc, rec.mu_lat);
}

}  // namespace

MetricRecord measure(const Model& model, const PromptSets& sets, const BenchConfig& bench) {
  MetricRecord rec;
  rec.arch = std::string(to_string(model.circuit.spec.kind));
  rec.r = model.circuit.spec.r;
  rec.n = model.circuit.spec.n;
  rec.k = model.adapter.k;
  const auto totals = run_sets(sets, [&](std::size_t s, std::size_t p, const std::vector<int>& prompt,
                                         SetTotals& t) {
    Session session(model, prompt, bench.mode, decode_seed(bench, s, p));
    const auto start = Clock::now();
    shared_state_decode(session, bench.generation_length);
    t.seconds += std::chrono::duration<double>(Clock::now() - start).count();
    t.cycles += static_cast<double>(session.stats().cycles);
    t.accepted += static_cast<double>(session.stats().accepted);
    t.emitted += static_cast<double>(session.stats().emitted);
  });
  fill_rates(rec, totals);
  rec.max_toks = max_throughput(model, sets, bench);
  rec.speedup = 1.0;
  return rec;
}

double max_throughput(const Model& model, const PromptSets& sets, const BenchConfig& bench) {
  const auto totals = run_sets(sets, [&](std::size_t s, std::size_t p, const std::vector<int>& prompt,
                                         SetTotals& t) {
    Session session(model, prompt, bench.mode, decode_seed(bench, s, p));
    const std::size_t goal = prompt.size() + static_cast<std::size_t>(bench.generation_length);
    const auto start = Clock::now();
    while (session.tokens().size() < goal) session.step_unverified();
    t.seconds += std::chrono::duration<double>(Clock::now() - start).count();
    t.emitted += static_cast<double>(session.stats().emitted);
  });
  double total = 0.0;
  for (const auto& t : totals) {
    if (!(t.seconds > 0.0)) throw GuardError("benchmark measured no time");
    total += t.emitted / t.seconds;
  }
  return total / static_cast<double>(totals.size());
}

MetricRecord measure_ar(const Model& model, const PromptSets& sets, const BenchConfig& bench) {
  MetricRecord rec;
  rec.arch = "STP";
  rec.r = 1;
  rec.n = 1;
  rec.k = 0;
  const auto totals = run_sets(sets, [&](std::size_t s, std::size_t p, const std::vector<int>& prompt,
                                         SetTotals& t) {
    Rng rng(decode_seed(bench, s, p));
    const auto start = Clock::now();
    ar_generate(model.backbone, model.target, prompt, bench.generation_length, bench.mode, rng);
    t.seconds += std::chrono::duration<double>(Clock::now() - start).count();
    t.cycles += bench.generation_length;
    t.accepted += bench.generation_length;
    t.emitted += bench.generation_length;
  });
  fill_rates(rec, totals);
  rec.max_toks = rec.mu_toks;
  rec.speedup = 1.0;
  return rec;
}

nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json doc = {{"arch", r.arch},         {"r", r.r},
                        {"n", r.n},               {"k", r.k},
                        {"mu_acc", r.mu_acc},     {"mu_acc_std", r.mu_acc_std},
                        {"mu_lat", r.mu_lat},     {"mu_lat_std", r.mu_lat_std},
                        {"mu_toks", r.mu_toks},   {"mu_toks_std", r.mu_toks_std},
                        {"est_toks", r.est_toks}, {"max_toks", r.max_toks},
                        {"speedup", r.speedup},   {"timing", kTimingRegion}};
  if (!r.tag.empty()) doc["tag"] = r.tag;
  if (!r.error.empty()) doc["error"] = r.error;
  return doc;
}

MetricRecord record_from_json(const nlohmann::json& doc) {
  try {
    MetricRecord r;
    r.arch = doc.at("arch").get<std::string>();
    r.r = doc.value("r", 1);
    r.n = doc.value("n", 1);
    r.k = doc.value("k", 0);
    r.mu_acc = doc.value("mu_acc", 0.0);
    r.mu_acc_std = doc.value("mu_acc_std", 0.0);
    r.mu_lat = doc.value("mu_lat", 0.0);
    r.mu_lat_std = doc.value("mu_lat_std", 0.0);
    r.mu_toks = doc.value("mu_toks", 0.0);
    r.mu_toks_std = doc.value("mu_toks_std", 0.0);
    r.est_toks = doc.value("est_toks", 0.0);
    r.max_toks = doc.value("max_toks", 0.0);
    r.speedup = doc.value("speedup", 0.0);
    r.tag = doc.value("tag", std::string());
    r.error = doc.value("error", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("metric record: ") + e.what());
  }
}

void write_csv_header(std::ostream& out) {
  out << "arch,r,n,k,mu_acc,mu_acc_std,mu_lat,mu_lat_std,mu_toks,mu_toks_std,est_toks,max_toks,speedup\n";
}

void write_csv_row(std::ostream& out, const MetricRecord& r) {
  out << r.arch << "," << r.r << "," << r.n << "," << r.k;
  if (!r.error.empty()) {
    // Failed cells keep their coordinates; metrics stay empty.
    out << ",,,,,,,,,\n";
    return;
  }
  const auto old = out.precision(17);
  for (double x : {r.mu_acc, r.mu_acc_std, r.mu_lat, r.mu_lat_std, r.mu_toks, r.mu_toks_std,
                   r.est_toks, r.max_toks, r.speedup}) {
    out << "," << x;
  }
  out << "\n";
  out.precision(old);
}

std::map<std::string, MetricRecord> load_baselines(const std::string& path) {
  std::map<std::string, MetricRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("baseline store " + path + ": " + e.what());
    }
    MetricRecord rec = record_from_json(doc);
    if (rec.tag.empty()) throw ConfigError("baseline store " + path + ": record without tag");
    out[rec.tag] = rec;
  }
  return out;
}

void store_baseline(const std::string& path, const MetricRecord& rec) {
  if (rec.tag.empty()) throw ContractError("baseline records need a tag");
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot write baseline store " + path);
  out << to_json(rec).dump() << "\n";
}

namespace {

int worker_count() {
  if (const char* env = std::getenv("MTPC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace

std::vector<MetricRecord> sweep(const PipelineConfig& cfg, const std::optional<MetricRecord>& baseline,
                                std::ostream* csv, std::ostream* jsonl) {
  const auto teacher = make_teacher(cfg.teacher);
  const TrainingBatch data = make_dataset(cfg, *teacher);
  const Trunk trunk = train_trunk(cfg, data);
  const PromptSets sets = make_prompt_sets(*teacher, cfg.bench);

  struct Cell {
    ArchitectureSpec spec;
    int k;
  };
  std::vector<Cell> cells;
  for (ArchKind kind : cfg.grid.archs) {
    // FF has no rank; one cell per (n, k).
    const std::vector<int> ranks = kind == ArchKind::kFF ? std::vector<int>{1} : cfg.grid.r;
    for (int r : ranks) {
      for (int n : cfg.grid.n) {
        for (int k : cfg.grid.k) cells.push_back({{kind, n, r, cfg.teacher.v}, k});
      }
    }
  }
  std::vector<MetricRecord> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& cell = cells[i];
    MetricRecord rec;
    try {
      if (cell.k < 0 || cell.k > cfg.layers) throw SpecError("adapter depth out of range");
      Model m = init_draft_model(cfg, trunk, cell.spec, cell.k, data);
      train_draft(m, cfg, data);
      rec = measure(m, sets, cfg.bench);
      rec.speedup = baseline ? speedup(rec, *baseline) : 1.0;
    } catch (const std::exception& e) {
      rec = MetricRecord{};
      rec.arch = std::string(to_string(cell.spec.kind));
      rec.r = cell.spec.r;
      rec.n = cell.spec.n;
      rec.k = cell.k;
      rec.error = e.what();
    }
    rows[i] = rec;
  };
  const int workers = cfg.bench.parallel ? std::min<int>(worker_count(), static_cast<int>(cells.size())) : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  if (csv != nullptr) {
    write_csv_header(*csv);
    for (const auto& r : rows) write_csv_row(*csv, r);
  }
  if (jsonl != nullptr) {
    for (const auto& r : rows) *jsonl << to_json(r).dump() << "\n";
  }
  return rows;
}

}  // namespace mtpc
