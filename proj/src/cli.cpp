#include "mtpc/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mtpc/bench.hpp"
#include "mtpc/checkpoint.hpp"
#include "mtpc/error.hpp"
#include "mtpc/pipeline.hpp"

namespace mtpc {
namespace {

using nlohmann::json;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string baseline;
  std::string tag;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

PipelineConfig load_config(const Options& o) {
  PipelineConfig cfg = load_pipeline_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.bench.seed = *o.seed;
  }
  if (!o.mode.empty()) cfg.bench.mode = decode_mode_from_string(o.mode);
  return cfg;
}

ArchitectureSpec spec_from_doc(const json& doc) {
  if (doc.contains("arch")) return pipeline_config_from_json(doc).arch;
  return spec_from_json(doc);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  return f;
}

void print_tokens(std::ostream& out, const char* label, const std::vector<int>& tokens) {
  out << label << ":";
  for (int t : tokens) out << " " << t;
  out << "\n";
}

Model obtain_model(const PipelineConfig& cfg) {
  if (!cfg.checkpoint.empty()) {
    Model m = load_checkpoint(cfg.checkpoint);
    if (m.backbone.v != cfg.teacher.v) throw ConfigError("checkpoint vocabulary does not match the teacher");
    return m;
  }
  return run_pipeline(cfg);
}

std::string store_path(const PipelineConfig& cfg) {
  return cfg.baseline_store.empty() ? std::string("mtpc-baselines.jsonl") : cfg.baseline_store;
}

std::optional<MetricRecord> resolve_baseline(const std::string& tag, const PipelineConfig& cfg,
                                             const Model& model, const PromptSets& sets) {
  if (tag.empty()) return std::nullopt;
  const auto store = load_baselines(store_path(cfg));
  if (auto it = store.find(tag); it != store.end()) return it->second;
  if (tag != "STP") throw ConfigError("unknown baseline tag " + tag + " (measure it first with --tag)");
  MetricRecord rec = measure_ar(model, sets, cfg.bench);
  rec.tag = tag;
  store_baseline(store_path(cfg), rec);
  return rec;
}

int cmd_build(const Options& o, std::ostream& out) {
  const json doc = read_json(o.config);
  Circuit c;
  try {
    c = build_circuit(spec_from_doc(doc));
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  const ValidationReport report = validate(c);
  out << "circuit " << to_string(c.spec.kind) << " n=" << c.spec.n << " r=" << c.spec.r << " v=" << c.spec.v
      << " layers=" << c.layers.size() << " params=" << c.num_params() << " valid=" << (report.ok() ? "yes" : "no")
      << "\n";
  for (const auto& f : report.failures) out << "  " << f << "\n";
  if (!o.out.empty()) open_out(o.out) << to_json(c).dump(2) << "\n";
  return report.ok() ? 0 : 1;
}

void print_circuit(std::ostream& out, const Circuit& c) {
  const ValidationReport report = validate(c);
  out << "circuit " << to_string(c.spec.kind) << " n=" << c.spec.n << " r=" << c.spec.r << " v=" << c.spec.v << "\n";
  out << "  layers " << c.layers.size() << ", sum layers " << c.num_sum_layers() << ", input params "
      << c.num_input_params() << ", sum params " << c.num_sum_params() << "\n";
  out << "  acyclic=" << report.acyclic << " smooth=" << report.smooth << " decomposable=" << report.decomposable
      << " single_output=" << report.single_output << " param_shapes=" << report.param_shapes << "\n";
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const Layer& l = c.layers[i];
    out << "  [" << i << "] " << to_string(l.kind) << " width=" << l.width << " scope={";
    for (std::size_t k = 0; k < l.scope.size(); ++k) out << (k ? "," : "") << l.scope[k];
    out << "}";
    if (!l.inputs.empty()) {
      out << " inputs=";
      for (std::size_t k = 0; k < l.inputs.size(); ++k) out << (k ? "," : "") << l.inputs[k];
    }
    if (l.kind == LayerKind::kSum) {
      const auto& s = c.omega_shapes[l.table_id];
      out << " table=" << l.table_id << " (" << s.rows << "x" << s.cols << ")";
    }
    out << "\n";
  }
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const json doc = read_json(o.config);
  if (doc.contains("format")) {
    Model m = model_from_json(doc);
    print_circuit(out, m.circuit);
    out << "backbone d=" << m.backbone.d << " layers=" << m.backbone.layers << " decay=" << m.backbone.decay
        << "; adapter k=" << m.adapter.k << " rank=" << m.adapter.rank << "\n";
    std::size_t total = 0;
    for (const auto& nt : named_tensors(m)) {
      out << "  " << nt.name << " [";
      for (std::size_t k = 0; k < nt.tensor->shape.size(); ++k) out << (k ? "x" : "") << nt.tensor->shape[k];
      out << "]\n";
      total += nt.tensor->numel();
    }
    out << "  total parameters " << total << "\n";
    return 0;
  }
  if (doc.contains("layers")) {
    print_circuit(out, circuit_from_json(doc));
    return validate(circuit_from_json(doc)).ok() ? 0 : 1;
  }
  try {
    print_circuit(out, build_circuit(spec_from_doc(doc)));
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_config(o);
  const std::string path = o.out.empty() ? std::string("mtpc-model.json") : o.out;
  std::ofstream trace = open_out(path + ".trace.jsonl");
  Model m = run_pipeline(cfg, [&](const char* phase, const TraceEntry& e) {
    trace << json{{"phase", phase}, {"step", e.step}, {"loss", e.loss}, {"l_j", e.l_j}}.dump() << "\n";
  });
  save_checkpoint(m, path);
  out << "wrote " << path << " and " << path << ".trace.jsonl\n";
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_config(o);
  const Model m = obtain_model(cfg);
  const auto teacher = make_teacher(cfg.teacher);
  const auto prompt = make_prompts(*teacher, 1, cfg.bench.prompt_length, cfg.bench.seed).front();
  Session session(m, prompt, cfg.bench.mode, cfg.bench.seed);
  std::ostringstream trace;
  const auto tokens = shared_state_decode(session, cfg.bench.generation_length,
                                          [&](const CycleResult& c) { write_cycle_jsonl(trace, c, session.stats()); });
  print_tokens(out, "prompt", prompt);
  print_tokens(out, "tokens", tokens);
  if (o.out.empty()) {
    out << trace.str();
  } else {
    open_out(o.out) << trace.str();
  }
  return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_config(o);
  const Model m = obtain_model(cfg);
  const auto teacher = make_teacher(cfg.teacher);
  const PromptSets sets = make_prompt_sets(*teacher, cfg.bench);
  const auto base = resolve_baseline(o.baseline, cfg, m, sets);
  MetricRecord rec = measure(m, sets, cfg.bench);
  if (base) rec.speedup = speedup(rec, *base);
  if (!o.tag.empty()) {
    rec.tag = o.tag;
    store_baseline(store_path(cfg), rec);
  }
  const std::string line = to_json(rec).dump();
  if (o.out.empty()) {
    out << line << "\n";
  } else {
    open_out(o.out) << line << "\n";
    out << "wrote " << o.out << "\n";
  }
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_config(o);
  std::optional<MetricRecord> base;
  if (!o.baseline.empty()) {
    const auto teacher = make_teacher(cfg.teacher);
    const PromptSets sets = make_prompt_sets(*teacher, cfg.bench);
    const Model m = run_pipeline([&] {
      PipelineConfig c = cfg;
      c.draft_opt.steps = 0;
      return c;
    }());
    base = resolve_baseline(o.baseline, cfg, m, sets);
  }
  const std::string csv_path = o.out.empty() ? std::string("mtpc-sweep.csv") : o.out;
  std::string jsonl_path = csv_path;
  if (jsonl_path.size() > 4 && jsonl_path.substr(jsonl_path.size() - 4) == ".csv") jsonl_path.resize(jsonl_path.size() - 4);
  jsonl_path += ".jsonl";
  std::ofstream csv = open_out(csv_path);
  std::ofstream jsonl = open_out(jsonl_path);
  const auto rows = sweep(cfg, base, &csv, &jsonl);
  int failed = 0;
  for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
  out << "wrote " << rows.size() << " rows to " << csv_path << " and " << jsonl_path;
  if (failed > 0) out << " (" << failed << " failed cells)";
  out << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Probabilistic-circuit multi-token drafting toolkit", "mtpc"};
  app.require_subcommand(1, 1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "JSON configuration file");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--seed", o.seed, "seed overriding the configuration");
    sub->add_option("--mode", o.mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
    sub->add_option("--baseline", o.baseline, "baseline tag for speed-up");
  };
  auto* build = app.add_subcommand("build", "construct and validate a circuit from a spec file");
  auto* inspect = app.add_subcommand("inspect", "print layer and parameter summaries");
  auto* train_cmd = app.add_subcommand("train", "train trunk, target and draft head; write a checkpoint");
  auto* generate = app.add_subcommand("generate", "shared-state speculative decoding with a trace");
  auto* bench = app.add_subcommand("bench", "measure acceptance, latency and throughput");
  auto* sweep_cmd = app.add_subcommand("sweep", "benchmark a grid of architectures");
  auto* selftest = app.add_subcommand("selftest", "run the built-in consistency checks");
  for (auto* sub : {build, inspect, train_cmd, generate, bench, sweep_cmd}) add_common(sub, true);
  bench->add_option("--tag", o.tag, "store this record as a baseline under TAG");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "error: unknown subcommand " << argv[1] << "\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (build->parsed()) return cmd_build(o, out);
    if (inspect->parsed()) return cmd_inspect(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (generate->parsed()) return cmd_generate(o, out);
    if (bench->parsed()) return cmd_bench(o, out);
    if (sweep_cmd->parsed()) return cmd_sweep(o, out);
    if (selftest->parsed()) return run_selftest(out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mtpc
