#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafo/dataset.hpp"

namespace trafo {

class SimulateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimulateOptions {
    std::size_t n = 1000;
    std::uint64_t seed = 1;
    int levels = 100;        // large-factor
    double phi = 0.7;        // ar1
    int burn_in = 100;       // ar1
    int classes = 3;         // ordinal-logit
    double beta = 1.0;       // ordinal-logit slope
    double scale = 1.0;      // heteroscedastic: sd = exp(scale * x / 2)
};

struct Simulation {
    Dataset data;
    nlohmann::json truth;
};

/// Generators: gaussian-linear, large-factor, ar1, ordinal-logit, heteroscedastic.
[[nodiscard]] std::vector<std::string> simulation_generators();
[[nodiscard]] Simulation simulate(const std::string& generator, const SimulateOptions& opts);

}  // namespace trafo
