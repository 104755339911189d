#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace trafo {

/// Half-open character range [begin, end) into the parsed source text.
struct SourceSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

class FormulaError : public std::runtime_error {
public:
    FormulaError(const std::string& msg, std::size_t position)
        : std::runtime_error(msg), position_(position) {}

    [[nodiscard]] std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

namespace term {

struct Intercept {
    bool operator==(const Intercept&) const = default;
};
struct Linear {
    std::string var;
    bool operator==(const Linear&) const = default;
};
struct Smooth {
    std::string var;
    double df = 4.0;
    int n_basis = 10;
    bool operator==(const Smooth&) const = default;
};
struct Factor {
    std::string var;
    bool operator==(const Factor&) const = default;
};
struct Lasso {
    std::string var;
    double lambda = 0.01;
    bool operator==(const Lasso&) const = default;
};
struct Deep {
    std::string net;
    std::vector<std::string> vars;
    bool operator==(const Deep&) const = default;
};
struct AtpLag {
    std::string var;
    bool operator==(const AtpLag&) const = default;
};

}  // namespace term

using TermKind = std::variant<term::Intercept, term::Linear, term::Smooth, term::Factor,
                              term::Lasso, term::Deep, term::AtpLag>;

struct TermExpr {
    TermKind kind;
    SourceSpan span;

    /// Spans are positional metadata and do not take part in AST equality.
    bool operator==(const TermExpr& other) const { return kind == other.kind; }
};

struct ModelSpec {
    std::string response;
    std::vector<TermExpr> interacting;
    std::vector<TermExpr> shifting;
    bool suppress_shift_intercept = false;

    bool operator==(const ModelSpec&) const = default;
};

struct ParseOptions {
    /// Function names, besides `deep` and `nn`, that denote a network term.
    std::set<std::string> network_names;
};

/// Parse `response | interacting ~ shifting`. The interacting side always
/// starts with an implicit intercept; `0 +` on the right suppresses the
/// global shift intercept.
[[nodiscard]] ModelSpec parse_formula(std::string_view text, const ParseOptions& opts = {});

/// Alternative three-part interface: one-sided `~ Y`, `~ X`, `~ 0 + s(Z)`.
[[nodiscard]] ModelSpec parse_ontram(std::string_view response, std::string_view intercept,
                                     std::string_view shift, const ParseOptions& opts = {});

/// Canonical text form; reparsing yields an identical AST.
[[nodiscard]] std::string to_string(const ModelSpec& spec);
[[nodiscard]] std::string to_string(const TermExpr& term);

/// Human-readable label used for coefficient names ("popularity", "s(budget)").
[[nodiscard]] std::string term_label(const TermExpr& term);

/// Variables a term reads from the data.
[[nodiscard]] std::vector<std::string> term_variables(const TermExpr& term);

/// Bare variables parse as Linear; those naming categorical columns become
/// Factor here. `is_categorical` is queried per variable name.
template <typename Pred>
ModelSpec resolve_factors(ModelSpec spec, Pred&& is_categorical) {
    auto fix = [&](std::vector<TermExpr>& terms) {
        for (auto& t : terms) {
            if (auto* lin = std::get_if<term::Linear>(&t.kind); lin && is_categorical(lin->var)) {
                t.kind = term::Factor{lin->var};
            }
        }
    };
    fix(spec.interacting);
    fix(spec.shifting);
    return spec;
}

}  // namespace trafo
