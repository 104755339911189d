#include "trafo/formula.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <sstream>

namespace trafo {

namespace {

struct Token {
    enum Type { Ident, Number, Pipe, Tilde, Plus, LParen, RParen, Comma, Equals, End };
    Type type = End;
    std::string text;
    double number = 0.0;
    std::size_t pos = 0;
};

const char* token_name(Token::Type t) {
    switch (t) {
        case Token::Ident: return "identifier";
        case Token::Number: return "number";
        case Token::Pipe: return "'|'";
        case Token::Tilde: return "'~'";
        case Token::Plus: return "'+'";
        case Token::LParen: return "'('";
        case Token::RParen: return "')'";
        case Token::Comma: return "','";
        case Token::Equals: return "'='";
        case Token::End: return "end of input";
    }
    return "?";
}

std::vector<Token> tokenize(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    auto ident_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    };
    while (i < src.size()) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        Token tok;
        tok.pos = i;
        switch (c) {
            case '|': tok.type = Token::Pipe; ++i; break;
            case '~': tok.type = Token::Tilde; ++i; break;
            case '+': tok.type = Token::Plus; ++i; break;
            case '(': tok.type = Token::LParen; ++i; break;
            case ')': tok.type = Token::RParen; ++i; break;
            case ',': tok.type = Token::Comma; ++i; break;
            case '=': tok.type = Token::Equals; ++i; break;
            default:
                if (std::isdigit(static_cast<unsigned char>(c)) ||
                    (c == '.' && i + 1 < src.size() &&
                     std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
                    const char* first = src.data() + i;
                    const char* last = src.data() + src.size();
                    double v = 0.0;
                    auto [ptr, ec] = std::from_chars(first, last, v);
                    if (ec != std::errc()) {
                        throw FormulaError("malformed number at position " + std::to_string(i), i);
                    }
                    tok.type = Token::Number;
                    tok.number = v;
                    tok.text.assign(first, ptr);
                    i += static_cast<std::size_t>(ptr - first);
                } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                    std::size_t j = i;
                    while (j < src.size() && ident_char(src[j])) ++j;
                    tok.type = Token::Ident;
                    tok.text = std::string(src.substr(i, j - i));
                    i = j;
                } else {
                    throw FormulaError(std::string("unexpected character '") + c +
                                           "' at position " + std::to_string(i),
                                       i);
                }
        }
        out.push_back(std::move(tok));
    }
    Token end;
    end.type = Token::End;
    end.pos = src.size();
    out.push_back(end);
    return out;
}

struct Arg {
    std::optional<std::string> name;
    std::optional<double> number;
    std::optional<std::string> ident;
    std::size_t pos = 0;
};

enum class Side { Interacting, Shifting };

class Parser {
public:
    Parser(std::string_view src, const ParseOptions& opts) : toks_(tokenize(src)), opts_(opts) {}

    ModelSpec parse_two_sided() {
        ModelSpec spec;
        spec.response = expect_ident("response variable").text;
        spec.interacting.push_back(TermExpr{term::Intercept{}, {0, 0}});
        if (accept(Token::Pipe)) {
            parse_terms(spec.interacting, Side::Interacting, nullptr);
        }
        expect(Token::Tilde);
        parse_shift_side(spec);
        expect(Token::End);
        validate(spec);
        return spec;
    }

    // "~ Y"
    std::string parse_one_sided_response() {
        expect(Token::Tilde);
        auto name = expect_ident("response variable").text;
        expect(Token::End);
        return name;
    }

    // "~ X + Z" or "~ 1"
    std::vector<TermExpr> parse_one_sided_interacting() {
        expect(Token::Tilde);
        std::vector<TermExpr> terms{TermExpr{term::Intercept{}, {0, 0}}};
        parse_terms(terms, Side::Interacting, nullptr);
        expect(Token::End);
        return terms;
    }

    void parse_one_sided_shift(ModelSpec& spec) {
        expect(Token::Tilde);
        parse_shift_side(spec);
        expect(Token::End);
    }

private:
    std::vector<Token> toks_;
    std::size_t at_ = 0;
    const ParseOptions& opts_;

    const Token& peek() const { return toks_[at_]; }
    const Token& next() { return toks_[at_++]; }

    bool accept(Token::Type t) {
        if (peek().type == t) {
            ++at_;
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& msg, std::size_t pos) const {
        throw FormulaError("syntax error at position " + std::to_string(pos) + ": " + msg, pos);
    }

    const Token& expect(Token::Type t) {
        if (peek().type != t) {
            fail(std::string("expected ") + token_name(t) + ", found " + token_name(peek().type),
                 peek().pos);
        }
        return next();
    }

    const Token& expect_ident(const char* what) {
        if (peek().type != Token::Ident) {
            fail(std::string("expected ") + what + ", found " + token_name(peek().type), peek().pos);
        }
        return next();
    }

    void parse_shift_side(ModelSpec& spec) {
        bool saw_zero = false;
        parse_terms(spec.shifting, Side::Shifting, &saw_zero);
        spec.suppress_shift_intercept = saw_zero;
    }

    // term ('+' term)*; `0` and `1` are markers, not terms.
    void parse_terms(std::vector<TermExpr>& out, Side side, bool* saw_zero) {
        do {
            const Token& tok = peek();
            if (tok.type == Token::Number) {
                next();
                if (tok.number == 0.0 && side == Side::Shifting) {
                    *saw_zero = true;
                } else if (tok.number == 1.0) {
                    // explicit intercept: already implied on both sides
                } else {
                    fail("numeric term '" + tok.text + "' is not allowed here", tok.pos);
                }
                continue;
            }
            if (tok.type == Token::Pipe) {
                fail("'|' is only allowed on the left-hand side", tok.pos);
            }
            out.push_back(parse_term(side));
        } while (accept(Token::Plus));
        if (peek().type == Token::Pipe) {
            fail("'|' is only allowed on the left-hand side", peek().pos);
        }
    }

    std::vector<Arg> parse_args() {
        std::vector<Arg> args;
        expect(Token::LParen);
        if (accept(Token::RParen)) return args;
        do {
            Arg a;
            a.pos = peek().pos;
            if (peek().type == Token::Ident && toks_[at_ + 1].type == Token::Equals) {
                a.name = next().text;
                next();
                const Token& v = expect(Token::Number);
                a.number = v.number;
            } else if (peek().type == Token::Ident) {
                a.ident = next().text;
            } else if (peek().type == Token::Number) {
                a.number = next().number;
            } else {
                fail(std::string("expected argument, found ") + token_name(peek().type),
                     peek().pos);
            }
            args.push_back(std::move(a));
        } while (accept(Token::Comma));
        expect(Token::RParen);
        return args;
    }

    // Collect positional identifiers first, then numeric options by name or position.
    struct CallArgs {
        std::vector<std::string> vars;
        std::vector<std::pair<std::string, double>> named;
        std::vector<double> positional;
    };

    CallArgs split_args(const std::vector<Arg>& args, const std::string& fn) {
        CallArgs out;
        for (const auto& a : args) {
            if (a.ident) {
                if (!out.positional.empty() || !out.named.empty()) {
                    fail("variable argument after options in " + fn + "()", a.pos);
                }
                out.vars.push_back(*a.ident);
            } else if (a.name) {
                out.named.emplace_back(*a.name, *a.number);
            } else {
                if (!out.named.empty()) fail("positional argument after named argument", a.pos);
                out.positional.push_back(*a.number);
            }
        }
        return out;
    }

    TermExpr parse_term(Side side) {
        const Token& head = expect_ident("term");
        const std::size_t begin = head.pos;
        const std::string name = head.text;
        if (peek().type != Token::LParen) {
            return TermExpr{term::Linear{name}, {begin, begin + name.size()}};
        }
        const auto args = parse_args();
        const std::size_t end = toks_[at_ - 1].pos + 1;
        const SourceSpan span{begin, end};
        const auto ca = split_args(args, name);

        auto single_var = [&]() -> const std::string& {
            if (ca.vars.size() != 1) fail(name + "() takes exactly one variable", begin);
            return ca.vars.front();
        };
        auto option = [&](const std::string& key, std::size_t position,
                          double fallback) -> double {
            for (const auto& [k, v] : ca.named) {
                if (k == key) return v;
            }
            if (position < ca.positional.size()) return ca.positional[position];
            return fallback;
        };
        auto reject_unknown = [&](std::initializer_list<const char*> keys, std::size_t max_pos) {
            for (const auto& [k, v] : ca.named) {
                bool ok = false;
                for (const char* key : keys) ok = ok || k == key;
                if (!ok) fail("unknown argument '" + k + "' to " + name + "()", begin);
            }
            if (ca.positional.size() > max_pos) fail("too many arguments to " + name + "()", begin);
        };

        if (name == "s") {
            reject_unknown({"df", "k"}, 2);
            term::Smooth sm{single_var(), option("df", 0, 4.0),
                            static_cast<int>(option("k", 1, 10.0))};
            if (!(sm.df > 1.0)) fail("s(): df must be greater than 1", begin);
            if (sm.n_basis < 4) fail("s(): k must be at least 4", begin);
            if (sm.df > sm.n_basis) fail("s(): df exceeds the number of basis functions", begin);
            return TermExpr{sm, span};
        }
        if (name == "fac") {
            reject_unknown({}, 0);
            return TermExpr{term::Factor{single_var()}, span};
        }
        if (name == "lasso") {
            reject_unknown({"lambda", "la"}, 1);
            double lambda = option("lambda", 0, option("la", 99, 0.01));
            if (lambda < 0.0) fail("lasso(): lambda must be nonnegative", begin);
            return TermExpr{term::Lasso{single_var(), lambda}, span};
        }
        if (name == "atplag") {
            reject_unknown({}, 0);
            if (side == Side::Interacting) {
                fail("atplag() terms are only allowed on the right-hand side", begin);
            }
            return TermExpr{term::AtpLag{single_var()}, span};
        }
        if (name == "deep" || name == "nn" || opts_.network_names.count(name) > 0) {
            reject_unknown({}, 0);
            if (ca.vars.empty()) fail(name + "() needs at least one variable", begin);
            return TermExpr{term::Deep{name, ca.vars}, span};
        }
        fail("unknown term function '" + name + "'", begin);
    }

    void validate(const ModelSpec& spec) const {
        auto check_side = [&](const std::vector<TermExpr>& terms) {
            std::set<std::string> nets;
            for (const auto& t : terms) {
                if (const auto* d = std::get_if<term::Deep>(&t.kind)) {
                    if (!nets.insert(d->net).second) {
                        fail("network '" + d->net + "' used more than once on one side",
                             t.span.begin);
                    }
                }
            }
        };
        check_side(spec.interacting);
        check_side(spec.shifting);
    }

    friend ModelSpec trafo::parse_ontram(std::string_view, std::string_view, std::string_view,
                                         const ParseOptions&);
};

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

ModelSpec parse_formula(std::string_view text, const ParseOptions& opts) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        throw FormulaError("empty formula", 0);
    }
    return Parser(text, opts).parse_two_sided();
}

ModelSpec parse_ontram(std::string_view response, std::string_view intercept,
                       std::string_view shift, const ParseOptions& opts) {
    ModelSpec spec;
    spec.response = Parser(response, opts).parse_one_sided_response();
    spec.interacting = Parser(intercept, opts).parse_one_sided_interacting();
    Parser(shift, opts).parse_one_sided_shift(spec);
    // reuse the two-sided validation rules
    Parser check("x ~ 1", opts);
    check.validate(spec);
    return spec;
}

std::string to_string(const TermExpr& t) {
    return std::visit(
        [](const auto& k) -> std::string {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, term::Intercept>) {
                return "1";
            } else if constexpr (std::is_same_v<K, term::Linear>) {
                return k.var;
            } else if constexpr (std::is_same_v<K, term::Smooth>) {
                std::string s = "s(" + k.var + ", df = " + format_number(k.df);
                if (k.n_basis != 10) s += ", k = " + std::to_string(k.n_basis);
                return s + ")";
            } else if constexpr (std::is_same_v<K, term::Factor>) {
                return "fac(" + k.var + ")";
            } else if constexpr (std::is_same_v<K, term::Lasso>) {
                return "lasso(" + k.var + ", lambda = " + format_number(k.lambda) + ")";
            } else if constexpr (std::is_same_v<K, term::Deep>) {
                std::string s = k.net + "(";
                for (std::size_t i = 0; i < k.vars.size(); ++i) {
                    if (i) s += ", ";
                    s += k.vars[i];
                }
                return s + ")";
            } else {
                return "atplag(" + k.var + ")";
            }
        },
        t.kind);
}

std::string term_label(const TermExpr& t) {
    if (std::holds_alternative<term::Smooth>(t.kind)) {
        return "s(" + std::get<term::Smooth>(t.kind).var + ")";
    }
    if (std::holds_alternative<term::Lasso>(t.kind)) {
        return "lasso(" + std::get<term::Lasso>(t.kind).var + ")";
    }
    if (std::holds_alternative<term::Intercept>(t.kind)) return "(Intercept)";
    return to_string(t);
}

std::vector<std::string> term_variables(const TermExpr& t) {
    return std::visit(
        [](const auto& k) -> std::vector<std::string> {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, term::Intercept>) {
                return {};
            } else if constexpr (std::is_same_v<K, term::Deep>) {
                return k.vars;
            } else {
                return {k.var};
            }
        },
        t.kind);
}

std::string to_string(const ModelSpec& spec) {
    std::ostringstream os;
    os << spec.response;
    bool first = true;
    for (const auto& t : spec.interacting) {
        if (std::holds_alternative<term::Intercept>(t.kind)) continue;
        os << (first ? " | " : " + ") << to_string(t);
        first = false;
    }
    os << " ~ ";
    std::vector<std::string> parts;
    if (spec.suppress_shift_intercept) parts.push_back("0");
    for (const auto& t : spec.shifting) parts.push_back(to_string(t));
    if (parts.empty()) parts.push_back("1");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) os << " + ";
        os << parts[i];
    }
    return os.str();
}

}  // namespace trafo
