#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafo/dataset.hpp"
#include "trafo/formula.hpp"
#include "trafo/loss.hpp"
#include "trafo/model.hpp"
#include "trafo/train.hpp"

namespace trafo {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// JSON run configuration. Either `formula` or the three-part
/// `response`/`intercept`/`shift` form; either `model` (alias) or an explicit
/// `basis`/`latent`. Unknown keys are rejected.
struct RunConfig {
    std::optional<std::string> formula;
    std::optional<std::string> response;
    std::optional<std::string> intercept;
    std::optional<std::string> shift;

    ModelOptions model;
    CsvOptions csv;
    FitConfig fit;
    WeightControl weights;

    int lags = 0;
    int members = 5;
    int folds = 5;
    std::vector<std::vector<std::size_t>> cv_indices;  // 0-based here, 1-based in the file
    EnsembleMode ensemble_mode = EnsembleMode::Density;
    bool vary_seeds = true;
    std::size_t grid_k = 100;
    ConvertFun convert = ConvertFun::Mean;

    [[nodiscard]] ModelSpec spec() const;
};

[[nodiscard]] RunConfig parse_run_config(const nlohmann::json& j);
[[nodiscard]] RunConfig load_run_config(const std::string& path);

}  // namespace trafo
