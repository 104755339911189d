#include <doctest.h>

#include <random>

#include "formula_corpus.hpp"
#include "trafo/formula.hpp"

using namespace trafo;
using namespace corpus;

TEST_CASE("case-study formula with interacting factor and smooth shift") {
    auto spec = parse_formula("vote_count | genreAction ~ 0 + s(budget, df = 3) + popularity");
    spec = resolve_factors(spec, [](const std::string& v) { return v == "genreAction"; });
    CHECK(spec.response == "vote_count");
    REQUIRE(spec.interacting.size() == 2);
    CHECK(spec.interacting[0] == I());
    CHECK(spec.interacting[1] == F("genreAction"));
    REQUIRE(spec.shifting.size() == 2);
    CHECK(spec.shifting[0] == S("budget", 3));
    CHECK(spec.shifting[1] == L("popularity"));
    CHECK(spec.suppress_shift_intercept);
}

TEST_CASE("intercept-only formula keeps the shift constant") {
    auto spec = parse_formula("y ~ 1");
    CHECK(spec.response == "y");
    CHECK(spec.interacting == std::vector<TermExpr>{I()});
    CHECK(spec.shifting.empty());
    CHECK_FALSE(spec.suppress_shift_intercept);
}

TEST_CASE("factor and atplag shift terms") {
    auto spec = parse_formula("y ~ 0 + month + atplag(y_lag_1)");
    spec = resolve_factors(spec, [](const std::string& v) { return v == "month"; });
    CHECK(spec.shifting == std::vector<TermExpr>{F("month"), A("y_lag_1")});
}

TEST_CASE("worked-example corpus parses to the documented ASTs") {
    const auto all = entries();
    CHECK(all.size() >= 10);
    for (const auto& e : all) {
        CAPTURE(e.text);
        CHECK(parse_formula(e.text) == e.ast);
    }
}

TEST_CASE("three-part interface matches the pipe form") {
    CHECK(parse_ontram("~ Y", "~ X", "~ 0 + s(Z, df = 3)") == parse_formula("Y | X ~ 0 + s(Z, df = 3)"));
    CHECK(parse_ontram("~ Y", "~ X1 + X2", "~ X3") == parse_formula("Y | X1 + X2 ~ X3"));
    const auto m = parse_ontram("~ Y", "~ 1", "~ 0");
    CHECK(m.interacting == std::vector<TermExpr>{I()});
    CHECK(m.shifting.empty());
    CHECK(m.suppress_shift_intercept);
}

TEST_CASE("round trip through the canonical text form") {
    for (const auto& e : entries()) {
        CAPTURE(e.text);
        const auto once = parse_formula(e.text);
        CHECK(parse_formula(to_string(once)) == once);
    }
    const auto odd = parse_formula("y ~ s(x, df = 2.5, k = 8) + lasso(z, lambda = 0.5)");
    CHECK(parse_formula(to_string(odd)) == odd);
}

TEST_CASE("whitespace does not matter") {
    CHECK(parse_formula("  y|x  ~0+s( z ,df=3 )+ w ") == parse_formula("y | x ~ 0 + s(z, df = 3) + w"));
    CHECK(parse_formula("y\t~\n x") == parse_formula("y ~ x"));
}

TEST_CASE("positional and named smooth arguments agree") {
    CHECK(parse_formula("y ~ s(x, 3)") == parse_formula("y ~ s(x, df = 3)"));
}

TEST_CASE("random term sets: three-part and pipe forms agree") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> vars = {"a", "b", "c", "d", "e"};
    auto pick_term = [&](bool left) -> std::string {
        const std::string v = vars[rng() % vars.size()];
        switch (rng() % (left ? 3 : 5)) {
            case 0: return v;
            case 1: return "fac(" + v + ")";
            case 2: return "nn(" + v + ")";
            case 3: return "s(" + v + ", df = " + std::to_string(2 + rng() % 5) + ")";
            default: return "lasso(" + v + ")";
        }
    };
    for (int rep = 0; rep < 200; ++rep) {
        std::string inter, shift;
        const int ni = static_cast<int>(rng() % 3), ns = static_cast<int>(rng() % 4);
        bool nn_left = false, nn_right = false;
        for (int k = 0; k < ni; ++k) {
            auto t = pick_term(true);
            if (t.rfind("nn(", 0) == 0) {
                if (nn_left) continue;
                nn_left = true;
            }
            inter += (inter.empty() ? "" : " + ") + t;
        }
        for (int k = 0; k < ns; ++k) {
            auto t = pick_term(false);
            if (t.rfind("nn(", 0) == 0) {
                if (nn_right) continue;
                nn_right = true;
            }
            shift += (shift.empty() ? "" : " + ") + t;
        }
        const bool zero = rng() % 2;
        std::string rhs = zero ? "0" : "";
        if (!shift.empty()) rhs += (rhs.empty() ? "" : " + ") + shift;
        if (rhs.empty()) rhs = "1";
        const std::string pipe = "Y" + (inter.empty() ? std::string() : " | " + inter) + " ~ " + rhs;
        CAPTURE(pipe);
        CHECK(parse_ontram("~ Y", inter.empty() ? "~ 1" : "~ " + inter, "~ " + rhs) == parse_formula(pipe));
    }
}

TEST_CASE("syntax errors carry a position") {
    try {
        (void)parse_formula("y ~ x + + z");
        FAIL("expected an error");
    } catch (const FormulaError& e) {
        CHECK(e.position() == 8);
    }
    CHECK_THROWS_AS((void)parse_formula(""), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ s(x"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y x"), FormulaError);
}

TEST_CASE("semantic errors") {
    CHECK_THROWS_AS((void)parse_formula("y ~ poly(x)"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y | atplag(y_lag_1) ~ 1"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ a | b"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ s(x, df = 1)"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ s(x, df = 11)"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ lasso(x, lambda = -1)"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ deep()"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ deep(a) + deep(b)"), FormulaError);
    CHECK_THROWS_AS((void)parse_formula("y ~ s(x, foo = 2)"), FormulaError);
}

TEST_CASE("named networks are recognised only when declared") {
    ParseOptions po;
    po.network_names = {"embd"};
    const auto spec = parse_formula("y ~ embd(a, b)", po);
    CHECK(spec.shifting == std::vector<TermExpr>{D("embd", {"a", "b"})});
    CHECK_THROWS_AS((void)parse_formula("y ~ embd(a, b)"), FormulaError);
}

TEST_CASE("labels and variables") {
    const auto spec = parse_formula("y ~ s(x) + lasso(z) + fac(g) + w + nn(a, b)");
    CHECK(term_label(spec.shifting[0]) == "s(x)");
    CHECK(term_label(spec.shifting[1]) == "lasso(z)");
    CHECK(term_label(spec.shifting[2]) == "fac(g)");
    CHECK(term_label(spec.shifting[3]) == "w");
    CHECK(term_variables(spec.shifting[4]) == std::vector<std::string>{"a", "b"});
}
