#include "mtpc/checkpoint.hpp"

#include <fstream>

#include "mtpc/error.hpp"

namespace mtpc {

namespace {
constexpr const char* kFormat = "mtpc-ckpt-1";
}

nlohmann::json model_to_json(Model& m) {
  nlohmann::json spec = to_json(m.head.spec);
  spec["d"] = m.backbone.d;
  spec["layers"] = m.backbone.layers;
  spec["decay"] = m.backbone.decay;
  spec["adapter_k"] = m.adapter.k;
  spec["adapter_rank"] = m.adapter.rank;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& nt : named_tensors(m)) {
    tensors[nt.name] = {{"shape", nt.tensor->shape}, {"data", nt.tensor->data}};
  }
  return {{"format", kFormat}, {"spec", std::move(spec)}, {"tensors", std::move(tensors)}};
}

Model model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", std::string()) != kFormat) {
      throw ConfigError("checkpoint: unsupported format tag");
    }
    const auto& spec = doc.at("spec");
    Model m;
    const ArchitectureSpec arch = spec_from_json(spec);
    m.circuit = build_circuit(arch);
    const int d = spec.at("d").get<int>();
    const int layers = spec.at("layers").get<int>();
    Rng unused(0);
    m.backbone = ToyBackbone::random(arch.v, d, layers, spec.value("decay", 1.0), unused);
    m.target = TargetSTP::zeros(arch.v, d);
    m.adapter = DraftAdapter::zeros(spec.value("adapter_k", 0), spec.value("adapter_rank", 4), d);
    m.head = ParamHead::zeros(m.circuit, d);
    const auto& tensors = doc.at("tensors");
    for (const auto& nt : named_tensors(m)) {
      if (!tensors.contains(nt.name)) throw ConfigError("checkpoint: missing tensor " + nt.name);
      const auto& item = tensors.at(nt.name);
      const auto shape = item.at("shape").get<std::vector<std::size_t>>();
      auto data = item.at("data").get<std::vector<double>>();
      if (shape != nt.tensor->shape || data.size() != nt.tensor->numel()) {
        throw ConfigError("checkpoint: shape mismatch for " + nt.name);
      }
      nt.tensor->data = std::move(data);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  } catch (const SpecError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  out << model_to_json(m).dump() << "\n";
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint parse error: ") + e.what());
  }
  return model_from_json(doc);
}

}  // namespace mtpc
