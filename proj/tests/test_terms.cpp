#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "trafo/formula.hpp"
#include "trafo/terms.hpp"

using namespace trafo;
using doctest::Approx;

namespace {

std::vector<double> uniform_sample(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 10.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

// Independent trace computation from the constrained rows and penalty.
double trace_df(const SmoothBasis& sm, const std::vector<double>& x, double lambda) {
    const auto p = static_cast<Eigen::Index>(sm.n_coef());
    Eigen::MatrixXd B(static_cast<Eigen::Index>(x.size()), p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto r = sm.row(x[i]);
        for (Eigen::Index j = 0; j < p; ++j) B(static_cast<Eigen::Index>(i), j) = r[static_cast<std::size_t>(j)];
    }
    const Eigen::MatrixXd G = B.transpose() * B;
    const Eigen::MatrixXd S = Eigen::Map<const Eigen::MatrixXd>(sm.penalty.data(), p, p);
    const Eigen::MatrixXd A = G + lambda * S;
    return A.ldlt().solve(G).trace();
}

Dataset small_frame() {
    Dataset d;
    d.add_real("y", {0.1, 0.5, 0.9, 1.3, 1.7, 2.2});
    d.add_real("x", {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    d.add_real("neg", {-1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    d.add_categorical("g", {0, 1, 2, 0, 1, 2}, {"a", "b", "c"});
    d.add_categorical("bin", {0, 1, 0, 1, 0, 1}, {"no", "yes"});
    return d;
}

}  // namespace

TEST_CASE("smooth df calibration") {
    const auto x = uniform_sample(500, 1);
    for (double df : {2.0, 3.0, 4.5, 6.0, 8.0}) {
        const auto sm = make_smooth(x, df, 10);
        CAPTURE(df);
        CHECK(std::abs(trace_df(sm, x, sm.lambda) - df) < 0.1);
        CHECK(sm.df == Approx(df).epsilon(0.02));
        CHECK(effective_df(sm, x, sm.lambda) == Approx(trace_df(sm, x, sm.lambda)).epsilon(1e-8));
    }
}

TEST_CASE("smooth df at the maximum switches the penalty off") {
    const auto x = uniform_sample(300, 2);
    const auto sm = make_smooth(x, 9.0, 10);
    CHECK(sm.lambda == 0.0);
    CHECK(sm.df == Approx(9.0).epsilon(1e-6));
    CHECK_THROWS_AS((void)make_smooth(x, 1.0, 10), TermError);
    const std::vector<double> flat(10, 3.0);
    CHECK_THROWS_AS((void)make_smooth(flat, 3.0, 10), TermError);
}

TEST_CASE("smooth rows: partition of unity, sum-to-zero, clamping") {
    const auto x = uniform_sample(400, 3, -2.0, 5.0);
    const auto sm = make_smooth(x, 4.0, 10);
    CHECK(sm.n_coef() == 9);
    for (double v : {-2.0, 0.0, 1.234, 4.9}) {
        const auto r = sm.raw_row(v);
        double s = 0;
        for (double e : r) s += e;
        CHECK(s == Approx(1.0).epsilon(1e-12));
    }
    std::vector<double> colsum(sm.n_coef(), 0.0);
    for (double v : x) {
        const auto r = sm.row(v);
        for (std::size_t j = 0; j < r.size(); ++j) colsum[j] += r[j];
    }
    for (double c : colsum) CHECK(std::abs(c) < 1e-8);
    CHECK(sm.raw_row(100.0) == sm.raw_row(sm.upper));
    CHECK(sm.raw_row(-100.0) == sm.raw_row(sm.lower));
}

TEST_CASE("smooth penalty is positive semidefinite and symmetric") {
    const auto x = uniform_sample(200, 4);
    const auto sm = make_smooth(x, 3.0, 10);
    const auto p = static_cast<Eigen::Index>(sm.n_coef());
    const Eigen::MatrixXd S = Eigen::Map<const Eigen::MatrixXd>(sm.penalty.data(), p, p);
    CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("shift features") {
    const auto d = small_frame();
    const auto spec = resolve_factors(parse_formula("y ~ x + g + s(x, df = 3) + lasso(x, lambda = 0.5)"),
                                      [&](const std::string& v) { return d.column(v).categorical(); });
    const auto sd = build_shift_features(spec, d, {});
    CHECK(sd.intercept);
    REQUIRE(sd.terms.size() == 4);
    CHECK(sd.terms[0].kind == FeatureKind::Linear);
    CHECK(sd.terms[1].kind == FeatureKind::Factor);
    CHECK(sd.terms[1].levels == std::vector<std::string>{"a", "b", "c"});
    CHECK(sd.terms[1].n_coef() == 2);
    CHECK(sd.terms[2].kind == FeatureKind::Smooth);
    CHECK(sd.terms[3].lambda == 0.5);
    CHECK(term_slot_data(sd.terms[0], d, false) == d.column("x").real);
    CHECK(term_slot_data(sd.terms[1], d, false) == std::vector<double>{-1, 0, 1, -1, 0, 1});

    const auto none = build_shift_features(parse_formula("y ~ 0"), d, {});
    CHECK(none.terms.empty());
    CHECK_FALSE(none.intercept);
}

TEST_CASE("shift features reject mistyped columns") {
    const auto d = small_frame();
    // a categorical column forced into a numeric slot
    CHECK_THROWS_AS((void)build_shift_features(parse_formula("y ~ g"), d, {}), TermError);
    CHECK_THROWS_AS((void)build_shift_features(parse_formula("y ~ s(g)"), d, {}), TermError);
}

TEST_CASE("interacting features") {
    const auto d = small_frame();
    const auto spec = resolve_factors(parse_formula("y | bin ~ 1"),
                                      [&](const std::string& v) { return d.column(v).categorical(); });
    const auto inter = build_interacting_features(spec, d, {});
    CHECK(inter.columns == 2);
    const auto rows = term_slot_data(inter.terms[1], d, true);
    CHECK(rows == std::vector<double>{0, 1, 0, 1, 0, 1});

    const auto only = build_interacting_features(parse_formula("y ~ 1"), d, {});
    CHECK(only.columns == 1);

    CHECK_THROWS_AS((void)build_interacting_features(parse_formula("y | neg ~ 1"), d, {}), TermError);
    const auto three = resolve_factors(parse_formula("y | g ~ 1"),
                                       [&](const std::string& v) { return d.column(v).categorical(); });
    CHECK(build_interacting_features(three, d, {}).columns == 3);
}

TEST_CASE("unsupported interacting terms") {
    const auto d = small_frame();
    ModelSpec spec = parse_formula("y ~ 1");
    spec.interacting.push_back({term::Smooth{"x", 3.0, 10}, {}});
    CHECK_THROWS_AS((void)build_interacting_features(spec, d, {}), TermError);
    spec = parse_formula("y ~ 1");
    spec.interacting.push_back({term::Lasso{"x", 0.1}, {}});
    CHECK_THROWS_AS((void)build_interacting_features(spec, d, {}), TermError);
}

TEST_CASE("unseen factor levels are an error") {
    const auto d = small_frame();
    const auto spec = resolve_factors(parse_formula("y ~ g"),
                                      [&](const std::string& v) { return d.column(v).categorical(); });
    const auto sd = build_shift_features(spec, d, {});
    Dataset nd;
    nd.add_categorical("g", {0, 1}, {"a", "z"});
    CHECK_THROWS_AS((void)term_slot_data(sd.terms[0], nd, false), TermError);
}

TEST_CASE("large factor keeps one coefficient per level") {
    const int L = 1000;
    std::vector<std::int32_t> codes(5000);
    std::vector<std::string> levels;
    for (int k = 0; k < L; ++k) levels.push_back(std::to_string(k + 1));
    for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = static_cast<std::int32_t>(i % L);
    Dataset d;
    d.add_real("y", std::vector<double>(codes.size(), 0.5));
    d.add_categorical("f", codes, levels);
    const auto sd = build_shift_features(parse_formula("y ~ fac(f)"), d, {});
    CHECK(sd.terms[0].n_coef() == L - 1);
    CHECK(sd.terms[0].slot_width(false) == 1);
    CHECK(term_slot_data(sd.terms[0], d, false).size() == codes.size());
}

TEST_CASE("networks") {
    NetworkMap nets;
    nets["deep"] = {{8, Activation::Relu, 0.1}, {1, Activation::Linear, 0.0}};
    nets["bad"] = {{4, Activation::Relu, 0.0}};
    Dataset d = small_frame();
    const auto sd = build_shift_features(parse_formula("y ~ deep(x, neg)"), d, nets);
    REQUIRE(sd.terms.size() == 1);
    CHECK(sd.terms[0].kind == FeatureKind::Deep);
    CHECK(sd.terms[0].slot_width(false) == 2);
    ParseOptions po;
    po.network_names = {"bad"};
    CHECK_THROWS_AS((void)build_shift_features(parse_formula("y ~ bad(x)", po), d, nets), TermError);
    CHECK_THROWS_AS((void)build_shift_features(parse_formula("y ~ nn(x)"), d, nets), TermError);

    grad::ParameterStore store;
    add_network_slices(store, "deep:", 2, nets["deep"]);
    CHECK(store.find("deep:W1"));
    CHECK(store.find("deep:b2"));
    std::mt19937_64 rng(1);
    glorot_init(store, "deep:", 2, nets["deep"], rng);
    const double lim1 = std::sqrt(6.0 / (2 + 8));
    for (double w : store.values(store.index_of("deep:W1"))) CHECK(std::abs(w) <= lim1);
    for (double b : store.values(store.index_of("deep:b1"))) CHECK(b == 0.0);

    // hand-computed forward pass
    const std::vector<double> x = {0.3, -1.2};
    const auto W1 = store.values(store.index_of("deep:W1"));
    const auto W2 = store.values(store.index_of("deep:W2"));
    double out = 0.0;
    for (int u = 0; u < 8; ++u) {
        const double hu = std::max(0.0, W1[u * 2] * x[0] + W1[u * 2 + 1] * x[1]);
        out += W2[u] * hu;
    }
    CHECK(network_forward(store, "deep:", nets["deep"], x)[0] == Approx(out));
}

TEST_CASE("activations") {
    CHECK(apply_activation(Activation::Relu, -1.0) == 0.0);
    CHECK(apply_activation(Activation::Sigmoid, 0.0) == Approx(0.5));
    CHECK(apply_activation(Activation::Softplus, 0.0) == Approx(std::log(2.0)));
    CHECK(apply_activation(Activation::Tanh, 0.5) == Approx(std::tanh(0.5)));
    CHECK(activation_from_string("relu") == Activation::Relu);
    CHECK_THROWS_AS((void)activation_from_string("gelu"), TermError);
}
