#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/latent.hpp"

namespace trafo::grad {

using NodeId = int;

class GradError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat parameter vector partitioned into named, disjoint slices.
class ParameterStore {
public:
    struct Slice {
        std::string name;
        std::size_t offset = 0;
        std::size_t rows = 0;
        std::size_t cols = 0;
        bool trainable = true;
        double lr_multiplier = 1.0;

        [[nodiscard]] std::size_t size() const { return rows * cols; }
    };

    /// Appends a zero-initialised rows x cols slice (row-major) and returns its index.
    std::size_t add_slice(std::string name, std::size_t rows, std::size_t cols);

    [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const;
    [[nodiscard]] std::size_t index_of(const std::string& name) const;

    [[nodiscard]] const Slice& slice(std::size_t i) const { return slices_.at(i); }
    [[nodiscard]] Slice& slice(std::size_t i) { return slices_.at(i); }
    [[nodiscard]] const std::vector<Slice>& slices() const { return slices_; }

    [[nodiscard]] std::span<double> values(std::size_t i);
    [[nodiscard]] std::span<const double> values(std::size_t i) const;

    [[nodiscard]] std::vector<double>& flat() { return flat_; }
    [[nodiscard]] const std::vector<double>& flat() const { return flat_; }
    [[nodiscard]] std::size_t size() const { return flat_.size(); }

    /// 1 where the coordinate belongs to a trainable slice.
    [[nodiscard]] std::vector<char> trainable_mask() const;

private:
    std::vector<Slice> slices_;
    std::vector<double> flat_;
};

enum class Op {
    Const, Param, Input,
    Add, Sub, Mul, Neg,
    Exp, Log, Sqrt, Softplus, Sigmoid, Tanh, Relu,
    Dot, MatVec, CumSum, Sum, Slice, Concat, Gather,
    ClampMin, CdfZ, SurvZ, LogPdfZ,
};

[[nodiscard]] const char* op_name(Op op);

struct Node {
    Op op = Op::Const;
    std::vector<NodeId> children;
    std::size_t size = 1;
    bool dynamic = false;
    // op-specific: slot/slice index, slice offset, matvec rows
    std::size_t index = 0;
    std::size_t aux = 0;
    double real = 0.0;
    Latent dist = Latent::StdNormal;
    std::vector<double> constant;
    std::string label;
};

/// Expression graph over small real vectors. Node ids are created in
/// topological order. Nodes depending on an Input are dynamic (evaluated per
/// row); all others are static (evaluated once per parameter state).
class Graph {
public:
    NodeId constant(std::vector<double> v);
    NodeId constant(double v) { return constant(std::vector<double>{v}); }
    NodeId param(std::size_t slice, std::size_t size);
    NodeId input(std::size_t slot, std::size_t size);

    // elementwise; a size-1 operand broadcasts
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId softplus(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    NodeId relu(NodeId a);

    NodeId dot(NodeId a, NodeId b);
    /// `w` is rows x cols row-major, `x` has cols entries.
    NodeId matvec(NodeId w, NodeId x, std::size_t rows);
    NodeId cumsum(NodeId a);
    NodeId sum(NodeId a);
    NodeId slice(NodeId a, std::size_t offset, std::size_t length);
    NodeId concat(const std::vector<NodeId>& parts);
    /// table[k] for k = (int)index; a negative index selects an implicit 0.
    NodeId gather(NodeId table, NodeId index);
    NodeId clamp_min(NodeId a, double floor);

    NodeId cdf(Latent d, NodeId z);
    NodeId survival(Latent d, NodeId z);
    NodeId log_pdf(Latent d, NodeId z);

    void set_label(NodeId id, std::string label) { nodes_.at(id).label = std::move(label); }

    [[nodiscard]] const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] std::size_t size(NodeId id) const { return node(id).size; }
    [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }
    [[nodiscard]] std::size_t input_slots() const { return input_slots_; }

private:
    NodeId push(Node n);
    NodeId unary(Op op, NodeId a);
    NodeId binary(Op op, NodeId a, NodeId b);

    std::vector<Node> nodes_;
    std::size_t input_slots_ = 0;
};

/// Per-row inputs: `inputs[slot]` points at that slot's values.
using Inputs = std::span<const double* const>;

/// Reusable evaluation buffers for one graph and a fixed set of roots.
class Executor {
public:
    Executor(const Graph& graph, std::vector<NodeId> roots);

    /// Evaluate every static node from the parameter store and clear all adjoints.
    void forward_static(const ParameterStore& params);

    /// Evaluate root `r` (index into the roots list) for one row.
    double forward(std::size_t r, Inputs inputs);

    /// Reverse sweep over the dynamic part of root `r`; static adjoints accumulate.
    void backward(std::size_t r, double seed);

    /// Add `seed` to the adjoint of a static node (e.g. a penalty root).
    void seed_static(NodeId id, double seed);

    /// Reverse sweep over static nodes, adding parameter adjoints into `gradient`
    /// (flat layout). Frozen slices receive nothing.
    void backward_static(const ParameterStore& params, std::span<double> gradient);

    /// Sum another executor's static adjoints into this one (same graph).
    void merge_static_adjoints(const Executor& other);

    [[nodiscard]] std::span<const double> value(NodeId id) const;
    [[nodiscard]] double scalar(NodeId id) const { return value(id)[0]; }
    [[nodiscard]] NodeId root(std::size_t r) const { return roots_.at(r); }

    /// Number of ClampMin evaluations that hit their floor since the last reset.
    [[nodiscard]] std::size_t floored() const { return floored_; }
    void reset_floored() { floored_ = 0; }

private:
    void eval_node(NodeId id);
    void propagate(NodeId id);
    [[noreturn]] void report_nan(std::size_t r) const;

    const Graph& graph_;
    std::vector<NodeId> roots_;
    std::vector<std::vector<NodeId>> dynamic_order_;
    std::vector<NodeId> static_nodes_;
    std::vector<std::size_t> offset_;
    std::vector<double> values_;
    std::vector<double> adjoints_;
    Inputs inputs_;
    std::size_t floored_ = 0;
};

/// One-shot helpers for a single row.
[[nodiscard]] double forward(const Graph& g, NodeId root, const ParameterStore& params,
                             Inputs inputs = {});
[[nodiscard]] std::vector<double> backward(const Graph& g, NodeId root,
                                           const ParameterStore& params, Inputs inputs = {},
                                           double seed = 1.0);

/// Numerically stable softplus and its derivative.
[[nodiscard]] double softplus(double x);
[[nodiscard]] double sigmoid(double x);

}  // namespace trafo::grad
