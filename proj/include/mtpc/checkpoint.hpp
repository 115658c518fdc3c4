#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mtpc/neural.hpp"

namespace mtpc {

// {"format":"mtpc-ckpt-1","spec":{...},"tensors":{name:{"shape":[...],"data":[...]}}}
// The spec block carries the architecture and backbone/adapter sizes; the
// circuit is rebuilt from it on load.
nlohmann::json model_to_json(Model& model);
Model model_from_json(const nlohmann::json& doc);

void save_checkpoint(Model& model, const std::string& path);
// ConfigError on unreadable files, wrong format tags or shape mismatches.
Model load_checkpoint(const std::string& path);

}  // namespace mtpc
