#pragma once

#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/grad.hpp"
#include "trafo/model.hpp"
#include "trafo/response.hpp"

namespace trafo {

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Probability floor applied before taking logs.
inline constexpr double kProbabilityFloor = 1e-16;

/// NLL of one observation from its transformation values. `h_lo` is used by
/// Interval/Right, `h_hi` by Exact/Interval/Left, `h_prime` by Exact.
[[nodiscard]] double nll_from_h(Latent d, Censoring status, double h_lo, double h_hi,
                                double h_prime);

/// NLL of row `i` of a design built with its response.
[[nodiscard]] double nll_contribution(const CompiledModel& model, const Design& d, std::size_t i,
                                      std::span<const double> theta);

/// NLL of an arbitrary response value at the covariates of row `i`.
[[nodiscard]] double nll_contribution(const CompiledModel& model, const ResponseValue& rv,
                                      const Design& d, std::size_t i);

[[nodiscard]] std::vector<double> nll_vector(const CompiledModel& model, const Design& d);

/// Mean NLL over `rows` plus smooth penalty / |rows| plus lasso penalty.
[[nodiscard]] double total_loss(const CompiledModel& model, const Design& d,
                                std::span<const std::size_t> rows);
[[nodiscard]] double total_loss(const CompiledModel& model, const Design& d);

enum class ConvertFun { LogLik, Identity, Mean };
[[nodiscard]] ConvertFun convert_fun_from_string(const std::string& s);

struct LogLikResult {
    ConvertFun convert = ConvertFun::LogLik;
    double value = 0.0;                 // LogLik: -sum, Mean: average NLL
    std::vector<double> contributions;  // per-observation NLL
};

[[nodiscard]] LogLikResult log_lik(const CompiledModel& model, const Dataset& data,
                                   ConvertFun convert = ConvertFun::LogLik);

/// Mini-batch objective and gradient through the loss graph.
class BatchObjective {
public:
    explicit BatchObjective(const CompiledModel& model);

    /// Loss on `rows` (mean NLL + penalties); `gradient` (flat parameter
    /// layout) is overwritten. Dropout is active iff `dropout_rng` is set.
    double evaluate(const Design& d, std::span<const std::size_t> rows, std::span<double> gradient,
                    std::mt19937_64* dropout_rng = nullptr);

    /// Observations whose probability or h' hit the floor since construction.
    [[nodiscard]] std::size_t floored() const { return exec_.floored(); }
    [[nodiscard]] const LossGraph& graph() const { return lg_; }

private:
    const CompiledModel& model_;
    LossGraph lg_;
    grad::Executor exec_;
    std::vector<const double*> inputs_;
    std::vector<std::vector<double>> masks_;
};

}  // namespace trafo
