#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/dataset.hpp"
#include "trafo/formula.hpp"
#include "trafo/grad.hpp"

namespace trafo {

class TermError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Activation { Linear, Relu, Tanh, Sigmoid, Softplus };

[[nodiscard]] Activation activation_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Activation a);

/// One dense layer; dropout acts on the layer input during training.
struct LayerSpec {
    std::size_t units = 1;
    Activation activation = Activation::Linear;
    double dropout = 0.0;
};

using NetworkConfig = std::vector<LayerSpec>;
using NetworkMap = std::map<std::string, NetworkConfig>;

/// Cubic B-spline basis on equally spaced knots with a second-order
/// difference penalty and a sum-to-zero reparameterisation.
struct SmoothBasis {
    double lower = 0.0;
    double upper = 1.0;
    int n_basis = 10;
    int degree = 3;
    std::vector<double> knots;
    /// n_basis x n_coef, row-major; maps constrained to raw coefficients.
    std::vector<double> constraint;
    /// n_coef x n_coef penalty in the constrained parameterisation.
    std::vector<double> penalty;
    double lambda = 0.0;
    double df = 0.0;

    [[nodiscard]] std::size_t n_coef() const {
        return constraint.empty() ? static_cast<std::size_t>(n_basis)
                                  : constraint.size() / static_cast<std::size_t>(n_basis);
    }
    /// Raw B-spline values at x (clamped into [lower, upper]).
    [[nodiscard]] std::vector<double> raw_row(double x) const;
    /// Constrained design row at x.
    [[nodiscard]] std::vector<double> row(double x) const;
};

/// Build the basis over the observed covariate and calibrate lambda so the
/// effective degrees of freedom match `df`.
[[nodiscard]] SmoothBasis make_smooth(std::span<const double> x, double df, int n_basis);

/// trace((B'B + lambda S)^{-1} B'B) for a constrained design.
[[nodiscard]] double effective_df(const SmoothBasis& sm, std::span<const double> x, double lambda);

enum class FeatureKind { Intercept, Linear, Smooth, Factor, Lasso, Deep, AtpLag };

[[nodiscard]] std::string to_string(FeatureKind k);
[[nodiscard]] FeatureKind feature_kind_from_string(const std::string& s);

/// A compiled model term: everything needed to produce its design rows
/// for new data without the training set.
struct TermFeature {
    FeatureKind kind = FeatureKind::Intercept;
    std::string label;
    std::vector<std::string> vars;
    std::vector<std::string> levels;  // Factor: training levels, first is the reference
    SmoothBasis smooth;
    double lambda = 0.0;              // Lasso
    std::string net_name;             // Deep
    NetworkConfig net;

    /// Width of this term's per-row input slot.
    [[nodiscard]] std::size_t slot_width(bool interacting) const;
    /// Number of shift coefficients (or interacting columns).
    [[nodiscard]] std::size_t n_coef() const;
    /// Output width of a network term.
    [[nodiscard]] std::size_t net_outputs() const { return net.empty() ? 0 : net.back().units; }
};

/// Rows of a term's input slot for `data`, row-major n x slot_width.
/// Shift factors encode the level index minus one (reference = -1);
/// interacting factors encode treatment dummies.
[[nodiscard]] std::vector<double> term_slot_data(const TermFeature& t, const Dataset& data,
                                                 bool interacting);

struct ShiftDesign {
    std::vector<TermFeature> terms;
    bool intercept = false;
};

struct InteractingDesign {
    std::vector<TermFeature> terms;  // first is always the intercept
    /// Number of interacting columns L (1 in scale mode).
    std::size_t columns = 1;
    bool scale = false;
};

[[nodiscard]] ShiftDesign build_shift_features(const ModelSpec& spec, const Dataset& data,
                                               const NetworkMap& nets);
[[nodiscard]] InteractingDesign build_interacting_features(const ModelSpec& spec,
                                                           const Dataset& data,
                                                           const NetworkMap& nets);
/// Interacting terms become a log-scale predictor gamma(x); the single
/// interacting column is sqrt(exp(gamma(x))).
[[nodiscard]] InteractingDesign build_scale_term(const ModelSpec& spec, const Dataset& data,
                                                 const NetworkMap& nets);

// ---------------------------------------------------------------------------
// Small dense networks

/// Parameter slice names for layer k (1-based): "<prefix>W<k>", "<prefix>b<k>".
void add_network_slices(grad::ParameterStore& store, const std::string& prefix,
                        std::size_t input_dim, const NetworkConfig& net);
void glorot_init(grad::ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                 const NetworkConfig& net, std::mt19937_64& rng);

/// Forward pass without dropout.
[[nodiscard]] std::vector<double> network_forward(const grad::ParameterStore& store,
                                                  const std::string& prefix,
                                                  const NetworkConfig& net,
                                                  std::span<const double> x);

struct DropoutSlot {
    std::size_t slot = 0;
    std::size_t width = 0;
    double rate = 0.0;
};

/// Graph version; allocates one input slot per dropout layer starting at
/// `next_slot` and records it in `dropout`.
[[nodiscard]] grad::NodeId network_graph(grad::Graph& g, const grad::ParameterStore& store,
                                         const std::string& prefix, const NetworkConfig& net,
                                         grad::NodeId x, std::size_t& next_slot,
                                         std::vector<DropoutSlot>& dropout);

[[nodiscard]] double apply_activation(Activation a, double x);

}  // namespace trafo
