#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/bases.hpp"
#include "trafo/dataset.hpp"
#include "trafo/formula.hpp"
#include "trafo/grad.hpp"
#include "trafo/latent.hpp"
#include "trafo/response.hpp"
#include "trafo/terms.hpp"

namespace trafo {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Data does not match what the model needs (missing or mistyped columns).
class SchemaError : public ModelError {
public:
    using ModelError::ModelError;
};

/// Basis and latent defaults bound by a named model constructor.
struct ModelAlias {
    BasisKind basis;
    Latent latent;
    ResponseType response;
};

/// BoxCox, Colr, cotram, Coxph, Lehmann, Lm, Polr, Survreg; an "NN" suffix
/// is accepted. Returns nullopt for unknown names.
[[nodiscard]] std::optional<ModelAlias> model_alias(const std::string& name);

struct TrafoOptions {
    std::optional<int> order_bsp;
    std::optional<Support> support;
    std::optional<BasisKind> basis;
    std::optional<Latent> latent;
    std::string custom_basis;
};

struct ModelOptions {
    std::optional<std::string> alias;
    std::optional<ResponseType> response_type;
    TrafoOptions trafo;
    NetworkMap networks;
    std::string event_column;  // survival
    std::string upper_column;  // interval: response column holds the lower bound
    std::uint64_t seed = 1;
};

/// Everything structural about a model; no parameter values.
struct ModelBlueprint {
    ModelSpec spec;
    ResponseType response_type = ResponseType::Continuous;
    BasisSpec basis;
    Latent latent = Latent::StdNormal;
    std::vector<std::string> response_levels;
    std::string event_column;
    std::string upper_column;
    InteractingDesign interacting;
    ShiftDesign shifting;
    std::vector<TermFeature> atplags;
    NetworkMap networks;
    std::uint64_t seed = 1;
};

[[nodiscard]] ModelBlueprint compile_blueprint(const ModelSpec& spec, const Dataset& data,
                                               const ModelOptions& opts = {});

/// Throws SchemaError naming every column the model reads that `data` lacks.
void check_columns(const ModelBlueprint& bp, const Dataset& data, bool with_response);

/// Per-row input slots for one dataset.
struct Design {
    std::size_t rows = 0;
    std::vector<std::size_t> widths;
    std::vector<std::vector<double>> slots;  // rows x width, row-major
    bool has_response = false;
    std::vector<ResponseValue> response;

    [[nodiscard]] const double* row(std::size_t slot, std::size_t i) const {
        return slots[slot].data() + i * widths[slot];
    }
};

/// Loss graph with one root per censoring type plus static penalty roots.
struct LossGraph {
    std::shared_ptr<grad::Graph> graph;
    std::vector<grad::NodeId> roots;  // Exact, Interval, Left, Right
    grad::NodeId smooth_penalty = -1;
    grad::NodeId lasso_penalty = -1;
    grad::NodeId h_hi = -1;
    grad::NodeId h_prime = -1;
    std::size_t data_slots = 0;
    std::vector<DropoutSlot> dropout;
};

/// Covariate-dependent pieces of h for one row.
struct RowState {
    std::vector<double> b;            // L interacting multipliers
    std::vector<double> shift_terms;  // one per shift term
    double shift = 0.0;               // intercept + sum of shift_terms
    double ar = 0.0;                  // atplag contribution
};

enum class CoefType { Shifting, Interacting, Autoregressive };
[[nodiscard]] CoefType coef_type_from_string(const std::string& s);

struct Coefficient {
    std::string name;
    std::vector<std::string> labels;
    std::vector<double> values;
};

/// TrafoDeriv is h'(y|x).
enum class PredictType { Trafo, Pdf, Cdf, Interaction, Shift, Terms, TrafoDeriv };
[[nodiscard]] PredictType predict_type_from_string(const std::string& s);
[[nodiscard]] std::string to_string(PredictType t);

struct PredictRow {
    std::size_t row = 0;
    double y = 0.0;       // grid value (level index for ordinal); NaN when unused
    std::string label;    // level name, interacting column, or term label
    double value = 0.0;
};

struct Prediction {
    PredictType type = PredictType::Trafo;
    std::vector<PredictRow> rows;
};

class CompiledModel {
public:
    explicit CompiledModel(ModelBlueprint bp);

    [[nodiscard]] const ModelBlueprint& blueprint() const { return bp_; }
    [[nodiscard]] grad::ParameterStore& params() { return params_; }
    [[nodiscard]] const grad::ParameterStore& params() const { return params_; }

    /// Reset every parameter from `seed`.
    void initialize(std::uint64_t seed);

    [[nodiscard]] std::size_t n_columns() const { return bp_.interacting.columns; }
    [[nodiscard]] std::size_t basis_dim() const { return m_; }
    [[nodiscard]] std::vector<std::string> column_labels() const;

    /// Slot data for `data`; the response is encoded when `with_response`.
    [[nodiscard]] Design design(const Dataset& data, bool with_response) const;
    [[nodiscard]] std::vector<ResponseValue> encode(const Dataset& data) const;

    /// Constrained theta, L x M row-major (row l = interacting column l).
    [[nodiscard]] std::vector<double> theta() const;
    [[nodiscard]] RowState row_state(const Design& d, std::size_t i,
                                     std::span<const double> theta) const;
    /// h at a basis evaluation; +inf for the upper ordinal sentinel.
    [[nodiscard]] double h_at(const BasisEval& a, const RowState& st,
                              std::span<const double> theta) const;
    [[nodiscard]] double h_prime_at(const BasisEval& a, const RowState& st,
                                    std::span<const double> theta) const;

    [[nodiscard]] double eval_h(double y, const Design& d, std::size_t i) const;
    [[nodiscard]] double eval_h_prime(double y, const Design& d, std::size_t i) const;

    /// Smooth penalty sum lambda |D beta|^2 (to be divided by the batch size)
    /// and the lasso penalty.
    [[nodiscard]] double smooth_penalty() const;
    [[nodiscard]] double lasso_penalty() const;

    [[nodiscard]] std::vector<Coefficient> coef(CoefType which) const;

    /// Response grid used when newdata carries no response.
    [[nodiscard]] std::vector<double> grid(std::size_t k) const;
    [[nodiscard]] std::string grid_label(double y) const;
    [[nodiscard]] Prediction predict(const Dataset& newdata, PredictType type,
                                     std::size_t grid_k = 100,
                                     const std::vector<double>& q = {}) const;

    [[nodiscard]] LossGraph build_loss_graph() const;

    [[nodiscard]] bool discrete_response() const {
        return bp_.response_type == ResponseType::Ordinal ||
               bp_.response_type == ResponseType::Count;
    }

    // slot layout
    static constexpr std::size_t kLoSlot = 0;
    static constexpr std::size_t kHiSlot = 1;
    static constexpr std::size_t kPrimeSlot = 2;
    [[nodiscard]] std::size_t data_slots() const { return n_slots_; }

private:
    void layout();
    std::string shift_prefix(const TermFeature& t) const;
    std::string interacting_prefix(const TermFeature& t) const;
    [[nodiscard]] std::vector<double> constrain_column(std::span<const double> raw) const;

    ModelBlueprint bp_;
    grad::ParameterStore params_;
    std::size_t m_ = 0;
    std::size_t theta_slice_ = 0;
    std::optional<std::size_t> intercept_slice_;
    std::vector<std::optional<std::size_t>> inter_slot_;
    std::vector<std::optional<std::size_t>> inter_slice_;  // scale coefficients
    std::vector<std::size_t> shift_slot_;
    std::vector<std::size_t> shift_slice_;  // unused for deep terms
    std::vector<std::size_t> ar_slot_;
    std::vector<std::size_t> ar_slice_;
    std::size_t n_slots_ = 0;
};

/// Cumulative monotone map for one column: w1, w1 + softplus(w2), ...
[[nodiscard]] std::vector<double> constrain_cumulative(std::span<const double> raw);
/// (w1, softplus(w2)).
[[nodiscard]] std::vector<double> constrain_positive_slope(std::span<const double> raw);
/// Column-wise constraint on an L x M raw matrix.
[[nodiscard]] std::vector<double> constrain_theta(std::span<const double> raw, std::size_t L,
                                                  const BasisSpec& basis);

[[nodiscard]] double softplus_inverse(double y);

}  // namespace trafo
