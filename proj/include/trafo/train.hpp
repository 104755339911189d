#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/loss.hpp"
#include "trafo/model.hpp"

namespace trafo {

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EarlyStopping {
    std::string monitor = "val_loss";
    int patience = 10;
    bool restore_best = true;
    double min_delta = 0.0;
};

struct ReduceLROnPlateau {
    std::string monitor = "val_loss";
    double factor = 0.1;
    int patience = 10;
    double min_delta = 1e-8;
    double min_lr = 0.0;
};

struct FitConfig {
    int epochs = 100;
    std::size_t batch_size = 32;
    double validation_split = 0.1;
    double learning_rate = 1e-3;
    /// Inverse-time decay per update: lr / (1 + decay * t).
    double decay = 0.0;
    std::uint64_t seed = 1;
    bool shuffle = true;
    std::optional<EarlyStopping> early_stopping;
    std::optional<ReduceLROnPlateau> plateau;
};

struct FitHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;  // empty without validation data
    std::vector<double> lr;
    int best_epoch = 0;            // 1-based epoch with the lowest monitored loss
    bool stopped_early = false;
    std::size_t floored = 0;

    [[nodiscard]] std::size_t epochs() const { return train_loss.size(); }
};

/// Per-slice training controls. Keys name a parameter slice; warmstart keys
/// may address one element as "name[k]" (1-based). A trailing '*' matches
/// every slice with that prefix (frozen and lr_multiplier only).
struct WeightControl {
    std::map<std::string, double> warmstart;
    std::set<std::string> frozen;
    std::map<std::string, double> lr_multiplier;

    [[nodiscard]] bool empty() const {
        return warmstart.empty() && frozen.empty() && lr_multiplier.empty();
    }
};

void apply_weight_control(CompiledModel& model, const WeightControl& wc);

/// Fit in place. Without `validation`, the last `validation_split` fraction
/// of a seeded shuffle is held out.
FitHistory fit(CompiledModel& model, const Dataset& data, const FitConfig& config,
               const WeightControl& wc = {}, const Dataset* validation = nullptr);

struct EnsembleModel {
    std::vector<CompiledModel> members;
    std::vector<FitHistory> histories;
};

/// Member m is initialised with blueprint seed + m and trained with
/// config seed + m, unless `vary_seeds` is false.
[[nodiscard]] EnsembleModel ensemble(const ModelBlueprint& bp, const Dataset& data, int n_members,
                                     const FitConfig& config, const WeightControl& wc = {},
                                     bool vary_seeds = true);

enum class EnsembleMode { Density, Transformation };

[[nodiscard]] Prediction ensemble_predict(const EnsembleModel& ens, const Dataset& newdata,
                                          PredictType type, EnsembleMode mode = EnsembleMode::Density,
                                          std::size_t grid_k = 100,
                                          const std::vector<double>& q = {});

struct EnsembleLogLik {
    ConvertFun convert = ConvertFun::Mean;
    std::vector<double> members;   // per-member value
    double mean = 0.0;             // average of member values
    double ensemble = 0.0;         // density-averaged ensemble
    double transformation = 0.0;   // transformation-averaged ensemble
    std::vector<double> contributions;  // per-observation density-ensemble NLL
};

[[nodiscard]] EnsembleLogLik ensemble_log_lik(const EnsembleModel& ens, const Dataset& data,
                                              ConvertFun convert = ConvertFun::Mean);

struct CvFold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Seeded permutation split into k contiguous folds whose sizes differ by at most one.
[[nodiscard]] std::vector<CvFold> make_folds(std::size_t n, int k, std::uint64_t seed);

struct CvResult {
    std::vector<FitHistory> folds;
    std::vector<double> mean_train;
    std::vector<double> mean_val;
    int best_epoch = 0;  // 1-based argmin of mean_val
};

[[nodiscard]] CvResult cross_validate(const ModelBlueprint& bp, const Dataset& data,
                                      const std::vector<CvFold>& folds, const FitConfig& config,
                                      const WeightControl& wc = {});

/// Worker count: TRAFOFIT_THREADS if set, else hardware concurrency.
[[nodiscard]] unsigned worker_threads();

}  // namespace trafo
