#include "mtpc/pipeline.hpp"

#include <fstream>

#include "mtpc/error.hpp"

namespace mtpc {
namespace {

using nlohmann::json;

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_opt(const json& obj, OptimizerConfig& opt) {
  read(obj, "steps", opt.steps);
  read(obj, "lr", opt.lr);
  read(obj, "batch_size", opt.batch_size);
  read(obj, "seed", opt.seed);
  read(obj, "beta1", opt.beta1);
  read(obj, "beta2", opt.beta2);
  read(obj, "eps", opt.eps);
  if (opt.steps < 0 || opt.lr < 0.0 || opt.batch_size < 0) throw ConfigError("optimizer settings must be non-negative");
}

json opt_json(const OptimizerConfig& o) {
  return {{"steps", o.steps}, {"lr", o.lr}, {"batch_size", o.batch_size}, {"seed", o.seed},
          {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig cfg;
  try {
    if (doc.contains("teacher")) {
      const auto& t = doc.at("teacher");
      if (t.contains("kind")) cfg.teacher.kind = teacher_from_string(t.at("kind").get<std::string>());
      read(t, "v", cfg.teacher.v);
      read(t, "seed", cfg.teacher.seed);
      read(t, "order", cfg.teacher.order);
      read(t, "logit_scale", cfg.teacher.logit_scale);
      read(t, "modes", cfg.teacher.modes);
      read(t, "segment", cfg.teacher.segment);
      read(t, "noise", cfg.teacher.noise);
    }
    if (doc.contains("arch")) {
      const auto& a = doc.at("arch");
      if (a.contains("kind")) cfg.arch.kind = arch_from_string(a.at("kind").get<std::string>());
      read(a, "n", cfg.arch.n);
      read(a, "r", cfg.arch.r);
    }
    cfg.arch.v = cfg.teacher.v;
    if (cfg.arch.kind == ArchKind::kFF) cfg.arch.r = 1;
    if (doc.contains("backbone")) {
      const auto& b = doc.at("backbone");
      read(b, "d", cfg.d);
      read(b, "layers", cfg.layers);
      read(b, "decay", cfg.decay);
    }
    if (doc.contains("adapter")) {
      read(doc.at("adapter"), "k", cfg.adapter_k);
      read(doc.at("adapter"), "rank", cfg.adapter_rank);
    }
    if (doc.contains("data")) {
      const auto& d = doc.at("data");
      read(d, "sequences", cfg.sequences);
      read(d, "length", cfg.length);
      read(d, "prompt_length", cfg.prompt_length);
      read(d, "seed", cfg.data_seed);
    }
    if (doc.contains("target_training")) read_opt(doc.at("target_training"), cfg.target_opt);
    if (doc.contains("draft_training")) {
      const auto& t = doc.at("draft_training");
      read_opt(t, cfg.draft_opt);
      read(t, "gamma", cfg.loss.gamma);
      read(t, "warmstart_steps", cfg.warmstart_steps);
      if (t.contains("loss")) {
        const auto mode = t.at("loss").get<std::string>();
        if (mode == "conditional") {
          cfg.loss.mode = LossMode::kConditional;
        } else if (mode == "marginal") {
          cfg.loss.mode = LossMode::kMarginal;
        } else {
          throw ConfigError("draft_training.loss must be conditional or marginal");
        }
      }
    }
    if (doc.contains("init")) {
      read(doc.at("init"), "beta", cfg.beta);
      read(doc.at("init"), "head_std", cfg.head_init_std);
    }
    read(doc, "seed", cfg.seed);
    if (doc.contains("bench")) {
      const auto& b = doc.at("bench");
      read(b, "prompts", cfg.bench.prompts);
      read(b, "prompt_length", cfg.bench.prompt_length);
      read(b, "repetitions", cfg.bench.repetitions);
      read(b, "generation_length", cfg.bench.generation_length);
      read(b, "seed", cfg.bench.seed);
      read(b, "parallel", cfg.bench.parallel);
      if (b.contains("mode")) cfg.bench.mode = decode_mode_from_string(b.at("mode").get<std::string>());
    }
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      if (s.contains("archs")) {
        cfg.grid.archs.clear();
        for (const auto& a : s.at("archs")) cfg.grid.archs.push_back(arch_from_string(a.get<std::string>()));
      }
      read(s, "r", cfg.grid.r);
      read(s, "n", cfg.grid.n);
      read(s, "k", cfg.grid.k);
    }
    read(doc, "checkpoint", cfg.checkpoint);
    read(doc, "baseline_store", cfg.baseline_store);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.teacher.v < 2 || cfg.arch.n < 1 || cfg.arch.r < 1 || cfg.d < 1 || cfg.layers < 0 ||
      cfg.adapter_k < 0 || cfg.adapter_k > cfg.layers || cfg.adapter_rank < 1) {
    throw ConfigError("config: sizes out of range (need v >= 2, n, r, d >= 1, 0 <= k <= layers)");
  }
  if (cfg.sequences < 1 || cfg.length < 2) throw ConfigError("config: data needs sequences >= 1, length >= 2");
  if (!(cfg.loss.gamma > 0.0 && cfg.loss.gamma <= 1.0)) throw ConfigError("config: gamma must lie in (0, 1]");
  if (!(cfg.decay > 0.0 && cfg.decay <= 1.0)) throw ConfigError("config: decay must lie in (0, 1]");
  if (cfg.bench.repetitions < 1 || cfg.bench.prompts < 1 || cfg.bench.prompt_length < 1 ||
      cfg.bench.generation_length < 1) {
    throw ConfigError("config: bench sizes must be >= 1");
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return pipeline_config_from_json(doc);
}

json to_json(const PipelineConfig& c) {
  json archs = json::array();
  for (ArchKind a : c.grid.archs) archs.push_back(std::string(to_string(a)));
  return {
      {"teacher",
       {{"kind", std::string(to_string(c.teacher.kind))}, {"v", c.teacher.v}, {"seed", c.teacher.seed},
        {"order", c.teacher.order}, {"logit_scale", c.teacher.logit_scale}, {"modes", c.teacher.modes},
        {"segment", c.teacher.segment}, {"noise", c.teacher.noise}}},
      {"arch", {{"kind", std::string(to_string(c.arch.kind))}, {"n", c.arch.n}, {"r", c.arch.r}}},
      {"backbone", {{"d", c.d}, {"layers", c.layers}, {"decay", c.decay}}},
      {"adapter", {{"k", c.adapter_k}, {"rank", c.adapter_rank}}},
      {"data", {{"sequences", c.sequences}, {"length", c.length}, {"prompt_length", c.prompt_length},
                {"seed", c.data_seed}}},
      {"target_training", opt_json(c.target_opt)},
      {"draft_training", [&] {
         json t = opt_json(c.draft_opt);
         t["gamma"] = c.loss.gamma;
         t["loss"] = c.loss.mode == LossMode::kConditional ? "conditional" : "marginal";
         t["warmstart_steps"] = c.warmstart_steps;
         return t;
       }()},
      {"init", {{"beta", c.beta}, {"head_std", c.head_init_std}}},
      {"seed", c.seed},
      {"bench", {{"prompts", c.bench.prompts}, {"prompt_length", c.bench.prompt_length},
                 {"repetitions", c.bench.repetitions}, {"generation_length", c.bench.generation_length},
                 {"mode", std::string(to_string(c.bench.mode))}, {"seed", c.bench.seed},
                 {"parallel", c.bench.parallel}}},
      {"sweep", {{"archs", archs}, {"r", c.grid.r}, {"n", c.grid.n}, {"k", c.grid.k}}},
      {"checkpoint", c.checkpoint},
      {"baseline_store", c.baseline_store},
  };
}

TrainingBatch make_dataset(const PipelineConfig& cfg, const Teacher& teacher) {
  return distill_dataset(teacher, cfg.sequences, cfg.length, cfg.data_seed, cfg.prompt_length);
}

Trunk train_trunk(const PipelineConfig& cfg, const TrainingBatch& data, const TraceSink& sink) {
  Rng rng(cfg.seed);
  Model m;
  m.backbone = ToyBackbone::random(cfg.teacher.v, cfg.d, cfg.layers, cfg.decay, rng);
  m.target = TargetSTP::zeros(cfg.teacher.v, cfg.d);
  m.circuit = build_ff(1, cfg.teacher.v);
  m.head = ParamHead::zeros(m.circuit, cfg.d);
  Trainable trainable;
  trainable.backbone = true;
  trainable.target = true;
  trainable.adapter = false;
  trainable.head = false;
  train(m, data, cfg.loss, cfg.target_opt, trainable, Objective::kTarget,
        [&](const TraceEntry& e) { if (sink) sink("target", e); });
  return {std::move(m.backbone), std::move(m.target)};
}

Model init_draft_model(const PipelineConfig& cfg, const Trunk& trunk, const ArchitectureSpec& arch,
                       int k, const TrainingBatch& data, const TraceSink& sink) {
  if (arch.v != trunk.backbone.v) throw ContractError("draft vocabulary differs from the trunk's");
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Model m;
  m.backbone = trunk.backbone;
  m.target = trunk.target;
  m.adapter = DraftAdapter::create(k, cfg.adapter_rank, cfg.d, rng);
  m.circuit = build_ff(arch.n, arch.v);
  m.head = ParamHead::random(m.circuit, cfg.d, cfg.head_init_std, rng);
  if (cfg.warmstart_steps > 0) {
    OptimizerConfig warm = cfg.draft_opt;
    warm.steps = cfg.warmstart_steps;
    Trainable trainable;
    train(m, data, cfg.loss, warm, trainable, Objective::kDraft,
          [&](const TraceEntry& e) { if (sink) sink("warmstart", e); });
  }
  switch (arch.kind) {
    case ArchKind::kFF:
      break;
    case ArchKind::kCP:
      m.head = init_cp_from_ff(m.head, arch.r, rng);
      break;
    case ArchKind::kHMM:
      m.head = init_hmm_identity(init_cp_from_ff(m.head, arch.r, rng), cfg.beta);
      break;
    case ArchKind::kBTree:
      m.head = init_btree_from_ff(m.head, arch.r, cfg.beta, rng);
      break;
  }
  m.circuit = build_circuit(arch);
  return m;
}

TrainResult train_draft(Model& model, const PipelineConfig& cfg, const TrainingBatch& data,
                        const TraceSink& sink) {
  Trainable trainable;
  return train(model, data, cfg.loss, cfg.draft_opt, trainable, Objective::kDraft,
               [&](const TraceEntry& e) { if (sink) sink("draft", e); });
}

Model run_pipeline(const PipelineConfig& cfg, const TraceSink& sink) {
  const auto teacher = make_teacher(cfg.teacher);
  const TrainingBatch data = make_dataset(cfg, *teacher);
  const Trunk trunk = train_trunk(cfg, data, sink);
  Model m = init_draft_model(cfg, trunk, cfg.arch, cfg.adapter_k, data, sink);
  train_draft(m, cfg, data, sink);
  return m;
}

Model random_model(const ArchitectureSpec& arch, int d, int layers, int k, double head_std, Rng& rng) {
  Model m;
  m.circuit = build_circuit(arch);
  m.backbone = ToyBackbone::random(arch.v, d, layers, 0.7, rng);
  m.target.U = Tensor::randn({static_cast<std::size_t>(arch.v), static_cast<std::size_t>(d)}, 1.0, rng);
  m.adapter = DraftAdapter::create(k, 2, d, rng);
  for (auto& t : m.adapter.up) t = Tensor::randn(t.shape, 0.5, rng);
  for (auto& t : m.adapter.bias) t = Tensor::randn(t.shape, 0.5, rng);
  m.head = ParamHead::random(m.circuit, d, head_std, rng);
  return m;
}

std::vector<std::vector<int>> make_prompts(const Teacher& teacher, int count, int length,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < count; ++i) prompts.push_back(teacher.sample(length, rng));
  return prompts;
}

}  // namespace mtpc
