#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace trafo {

namespace grad {
class Graph;
using NodeId = int;
}  // namespace grad

class BasisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Support {
    double lower = 0.0;
    double upper = 1.0;

    [[nodiscard]] bool contains(double y) const { return y >= lower && y <= upper; }
    bool operator==(const Support&) const = default;
};

/// Basis row a(y) and its derivative a'(y). For the largest ordinal level
/// the basis is undefined and `upper_infinite` marks h = +inf.
struct BasisEval {
    std::vector<double> value;
    std::vector<double> derivative;
    bool upper_infinite = false;
};

// Individual basis families.
[[nodiscard]] BasisEval bernstein(double y, int order, const Support& support);
[[nodiscard]] BasisEval count_basis(double y, int order, const Support& support);
[[nodiscard]] BasisEval discrete_basis(int level, int n_levels);
[[nodiscard]] BasisEval linear_basis(double y);
[[nodiscard]] BasisEval log_linear_basis(double y);

/// Raw-to-constrained weight map for one interacting column, expressed as a
/// graph builder so that gradients flow through it.
using ConstraintBuilder = std::function<grad::NodeId(grad::Graph&, grad::NodeId raw)>;

struct CustomBasis {
    std::function<std::vector<double>(double)> eval;
    std::function<std::vector<double>(double)> deriv;
    ConstraintBuilder constraint;
};

/// Register a user basis under `name`. The derivative is checked against
/// central differences at five random points of `check_domain`.
void register_custom_basis(const std::string& name, CustomBasis basis,
                           const Support& check_domain = {0.0, 1.0});
[[nodiscard]] bool has_custom_basis(const std::string& name);
[[nodiscard]] std::shared_ptr<const CustomBasis> find_custom_basis(const std::string& name);
void unregister_custom_basis(const std::string& name);

enum class BasisKind { Bernstein, Count, Linear, LogLinear, Discrete, Shiftscale, Custom };

[[nodiscard]] std::string to_string(BasisKind kind);
[[nodiscard]] BasisKind basis_kind_from_string(const std::string& name);

/// Response basis: family, order, support, and (for Discrete) the level count.
struct BasisSpec {
    BasisKind kind = BasisKind::Bernstein;
    int order = 10;
    Support support;
    int n_levels = 0;
    std::string custom_name;

    /// Number of basis functions M.
    [[nodiscard]] std::size_t dim() const;

    /// Evaluate at a response value; for Discrete `y` is the 1-based level.
    [[nodiscard]] BasisEval evaluate(double y) const;

    /// Whether parameters use the cumulative monotone map (vs positive slope).
    [[nodiscard]] bool cumulative_constraint() const {
        return kind == BasisKind::Bernstein || kind == BasisKind::Count ||
               kind == BasisKind::Discrete;
    }
};

}  // namespace trafo
