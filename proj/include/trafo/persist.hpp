#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "trafo/model.hpp"
#include "trafo/train.hpp"

namespace trafo {

class PersistError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kModelFormat = 1;

[[nodiscard]] nlohmann::json blueprint_to_json(const ModelBlueprint& bp);
[[nodiscard]] ModelBlueprint blueprint_from_json(const nlohmann::json& j);

/// {"format": 1, "kind": "model", "blueprint": ..., "parameters": [...]}.
/// Doubles are written in shortest round-trip form, so a reload is exact.
[[nodiscard]] nlohmann::json model_to_json(const CompiledModel& model);
[[nodiscard]] CompiledModel model_from_json(const nlohmann::json& j);

void save_model(const std::string& path, const CompiledModel& model);
[[nodiscard]] CompiledModel load_model(const std::string& path);

[[nodiscard]] nlohmann::json ensemble_to_json(const EnsembleModel& ens);
[[nodiscard]] EnsembleModel ensemble_from_json(const nlohmann::json& j);
void save_ensemble(const std::string& path, const EnsembleModel& ens);
[[nodiscard]] EnsembleModel load_ensemble(const std::string& path);

/// Parsed file contents with format checks.
[[nodiscard]] nlohmann::json read_model_file(const std::string& path);

}  // namespace trafo
