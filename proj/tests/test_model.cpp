#include <doctest.h>

#include <cmath>
#include <random>

#include "trafo/formula.hpp"
#include "trafo/grad.hpp"
#include "trafo/latent.hpp"
#include "trafo/model.hpp"

using namespace trafo;
using doctest::Approx;

namespace {

Dataset continuous_frame(std::size_t n = 200, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> y(n), x(n), w(n);
    std::vector<std::int32_t> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = z(rng);
        w[i] = u(rng);
        g[i] = static_cast<std::int32_t>(rng() % 3);
        y[i] = 1.0 + 0.5 * x[i] + z(rng);
    }
    Dataset d;
    d.add_real("y", y);
    d.add_real("x", x);
    d.add_real("w", w);
    d.add_categorical("g", g, {"a", "b", "c"});
    return d;
}

Dataset ordinal_frame(std::size_t n, int K) {
    std::mt19937_64 rng(3);
    std::vector<std::int32_t> y(n);
    std::vector<double> x(n);
    std::normal_distribution<double> z;
    std::vector<std::string> levels;
    for (int k = 1; k <= K; ++k) levels.push_back(std::to_string(k));
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<std::int32_t>(i % static_cast<std::size_t>(K));
        x[i] = z(rng);
    }
    Dataset d;
    d.add_categorical("y", y, levels);
    d.add_real("x", x);
    return d;
}

CompiledModel make(const std::string& f, const Dataset& d, ModelOptions mo = {}) {
    return CompiledModel(compile_blueprint(parse_formula(f), d, mo));
}

void set(CompiledModel& m, const std::string& name, std::vector<double> v) {
    auto s = m.params().values(m.params().index_of(name));
    REQUIRE(s.size() == v.size());
    std::copy(v.begin(), v.end(), s.begin());
}

}  // namespace

TEST_CASE("cumulative constraint") {
    const std::vector<double> a = {0.5, 0.0, 0.0};
    const auto c = constrain_cumulative(a);
    CHECK(c[0] == Approx(0.5));
    CHECK(c[1] == Approx(0.5 + std::log(2.0)));
    CHECK(c[2] == Approx(0.5 + 2 * std::log(2.0)));
    const std::vector<double> b = {0.0, -30.0, -30.0};
    for (double v : constrain_cumulative(b)) CHECK(std::abs(v) < 1e-12);

    std::mt19937_64 rng(11);
    std::normal_distribution<double> z(0.0, 5.0);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> raw(1 + rng() % 12);
        for (auto& v : raw) v = z(rng);
        const auto t = constrain_cumulative(raw);
        for (std::size_t k = 1; k < t.size(); ++k) CHECK(t[k] >= t[k - 1]);
    }
    const std::vector<double> lin = {-1.0, 0.0};
    CHECK(constrain_positive_slope(lin)[1] == Approx(std::log(2.0)));
    CHECK(softplus_inverse(grad::softplus(0.37)) == Approx(0.37));
}

TEST_CASE("model aliases") {
    CHECK(model_alias("Lm")->basis == BasisKind::Linear);
    CHECK(model_alias("Colr")->latent == Latent::StdLogistic);
    CHECK(model_alias("Coxph")->latent == Latent::MinExtremeValue);
    CHECK(model_alias("Lehmann")->latent == Latent::MaxExtremeValue);
    CHECK(model_alias("BoxCox")->latent == Latent::StdNormal);
    CHECK(model_alias("Polr")->response == ResponseType::Ordinal);
    CHECK(model_alias("cotram")->basis == BasisKind::Count);
    CHECK(model_alias("Survreg")->basis == BasisKind::LogLinear);
    CHECK(model_alias("ColrNN")->basis == BasisKind::Bernstein);
    CHECK(model_alias("LehmannNN")->latent == Latent::MaxExtremeValue);
    CHECK_FALSE(model_alias("Probit"));
}

TEST_CASE("blueprint defaults and errors") {
    const auto d = continuous_frame();
    const auto bp = compile_blueprint(parse_formula("y ~ x"), d);
    CHECK(bp.basis.kind == BasisKind::Bernstein);
    CHECK(bp.basis.order == 10);
    CHECK(bp.latent == Latent::StdNormal);
    double lo = 1e300, hi = -1e300;
    for (double v : d.column("y").real) lo = std::min(lo, v), hi = std::max(hi, v);
    CHECK(bp.basis.support.lower == Approx(lo - 0.1 * (hi - lo)));
    CHECK(bp.basis.support.upper == Approx(hi + 0.1 * (hi - lo)));

    try {
        (void)compile_blueprint(parse_formula("y ~ a + s(b)"), d);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        const std::string m = e.what();
        CHECK(m.find("'a'") != std::string::npos);
        CHECK(m.find("'b'") != std::string::npos);
    }
    ModelOptions mo;
    mo.alias = "Lm";
    mo.trafo.basis = BasisKind::Bernstein;
    CHECK_THROWS_AS((void)compile_blueprint(parse_formula("y ~ x"), d, mo), ModelError);
    mo = {};
    mo.alias = "Nope";
    CHECK_THROWS_AS((void)compile_blueprint(parse_formula("y ~ x"), d, mo), ModelError);

    Dataset c;
    c.add_real("y", {0, 3, 1, 7, 2});
    mo = {};
    mo.alias = "cotram";
    const auto cb = compile_blueprint(parse_formula("y ~ 1"), c, mo);
    CHECK(cb.basis.support.lower == 0.0);
    CHECK(cb.basis.support.upper == 8.0);
    CHECK(cb.response_type == ResponseType::Count);
}

TEST_CASE("near-zero raw theta gives h near zero") {
    const auto d = continuous_frame();
    auto m = make("y ~ 0", d);
    std::vector<double> raw(m.basis_dim(), -40.0);
    raw[0] = 0.0;
    set(m, "theta", raw);
    const auto des = m.design(d, true);
    for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(m.eval_h(d.column("y").real[i], des, i)) < 1e-15);
}

TEST_CASE("linear model density matches the gaussian") {
    const auto d = continuous_frame(50);
    ModelOptions mo;
    mo.alias = "Lm";
    auto m = make("y ~ x", d, mo);
    const double mu = 1.0, sigma = 2.0, beta = -0.828;
    set(m, "theta", {-mu / sigma, softplus_inverse(1.0 / sigma)});
    set(m, "1", {0.0});
    set(m, "x", {beta});
    const auto pdf = m.predict(d, PredictType::Pdf);
    const auto cdfp = m.predict(d, PredictType::Cdf);
    const auto sh = m.predict(d, PredictType::Shift);
    REQUIRE(pdf.rows.size() == d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const double y = d.column("y").real[i], x = d.column("x").real[i];
        const double z = (y - mu) / sigma + beta * x;
        CHECK(pdf.rows[i].value == Approx(std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) / sigma).epsilon(1e-12));
        CHECK(cdfp.rows[i].value == Approx(0.5 * std::erfc(-z / std::sqrt(2.0))).epsilon(1e-12));
        CHECK(sh.rows[i].value == Approx(beta * x));
    }
}

TEST_CASE("transformation is monotone with a consistent derivative") {
    const auto d = continuous_frame(200);
    auto m = make("y | w ~ x + g", d);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    for (auto& v : m.params().flat()) v = z(rng);
    const auto des = m.design(d, false);
    const auto grid = m.grid(500);
    CHECK(grid.size() == 500);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        double prev = -INFINITY;
        for (double y : grid) {
            const double h = m.eval_h(y, des, i);
            CHECK(h >= prev);
            prev = h;
        }
    }
    const auto& s = m.blueprint().basis.support;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < 20; ++i) {
        for (double t : {0.1, 0.4, 0.8}) {
            const double y = s.lower + t * (s.upper - s.lower);
            const double hp = m.eval_h_prime(y, des, i);
            CHECK(hp > 0.0);
            const double fd = (m.eval_h(y + eps, des, i) - m.eval_h(y - eps, des, i)) / (2 * eps);
            CHECK(std::abs(fd - hp) <= 1e-5 * std::abs(hp));
        }
    }
}

TEST_CASE("h is the bilinear form of basis and interacting columns") {
    const auto d = continuous_frame(30);
    auto m = make("y | w ~ x", d);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z;
    for (auto& v : m.params().flat()) v = z(rng);
    const auto th = m.theta();
    const auto des = m.design(d, false);
    const auto M = m.basis_dim();
    REQUIRE(m.n_columns() == 2);
    const double beta = m.params().values(m.params().index_of("x"))[0];
    const double icpt = m.params().values(m.params().index_of("1"))[0];
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const double y = d.column("y").real[i];
        const auto a = m.blueprint().basis.evaluate(y);
        const double b[2] = {1.0, d.column("w").real[i]};
        double h = icpt + beta * d.column("x").real[i];
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t k = 0; k < M; ++k) h += b[l] * a.value[k] * th[l * M + k];
        CHECK(m.eval_h(y, des, i) == Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("positive shift moves probability mass down") {
    Dataset d;
    d.add_real("y", {0.0, 1.0, 2.0, 3.0});
    d.add_real("x", {0.0, 1.0, 0.0, 1.0});
    auto m = make("y ~ x", d);
    set(m, "x", {0.7});
    Dataset a, b;
    a.add_real("x", {0.0});
    b.add_real("x", {1.0});
    const auto ca = m.predict(a, PredictType::Cdf, 20);
    const auto cb = m.predict(b, PredictType::Cdf, 20);
    for (std::size_t j = 1; j + 1 < ca.rows.size(); ++j) CHECK(cb.rows[j].value > ca.rows[j].value);
}

TEST_CASE("coefficients") {
    const auto d = continuous_frame(50);
    auto m = make("y | w ~ x + g", d);
    const auto sh = m.coef(CoefType::Shifting);
    REQUIRE(sh.size() == 3);
    CHECK(sh[0].name == "1");
    CHECK(sh[1].name == "x");
    CHECK(sh[2].values.size() == 3);
    CHECK(sh[2].values[0] == 0.0);
    for (const auto& c : sh)
        for (double v : c.values) CHECK(std::isfinite(v));
    CHECK(m.coef(CoefType::Interacting).size() == 2);
    CHECK_THROWS_AS((void)m.coef(CoefType::Autoregressive), ModelError);
    CHECK_THROWS_AS((void)coef_type_from_string("random"), ModelError);
}

TEST_CASE("prediction shapes") {
    const auto d = continuous_frame(10);
    auto m = make("y ~ x", d);
    Dataset nd;
    nd.add_real("x", {0.0, 1.0, -1.0});
    CHECK(m.predict(nd, PredictType::Pdf).rows.size() == 300);
    CHECK(m.predict(nd, PredictType::Cdf, 7).rows.size() == 21);
    const auto s = m.blueprint().basis.support;
    const auto qp = m.predict(nd, PredictType::Trafo, 100, {s.lower, s.upper});
    CHECK(qp.rows.size() == 6);
    CHECK(qp.rows[1].y == s.upper);
    CHECK_THROWS_AS((void)m.predict(nd, PredictType::Trafo, 100, {s.upper + 1.0}), ModelError);
    CHECK_THROWS_AS((void)predict_type_from_string("hazard"), ModelError);
    const auto terms = m.predict(nd, PredictType::Terms);
    CHECK(terms.rows.size() == 6);
    CHECK(terms.rows[0].label == "1");
    CHECK(terms.rows[1].label == "x");
    for (auto t : {PredictType::Trafo, PredictType::Pdf, PredictType::Cdf, PredictType::Interaction,
                   PredictType::Shift, PredictType::Terms, PredictType::TrafoDeriv}) {
        CHECK(predict_type_from_string(to_string(t)) == t);
    }
}

TEST_CASE("ordinal level probabilities sum to one") {
    const int K = 5;
    const auto d = ordinal_frame(100, K);
    auto m = make("y ~ x", d);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    for (auto& v : m.params().flat()) v = z(rng);
    Dataset nd;
    nd.add_real("x", {-2.0, 0.0, 3.0});
    const auto p = m.predict(nd, PredictType::Pdf);
    REQUIRE(p.rows.size() == 3 * K);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            const double v = p.rows[i * K + static_cast<std::size_t>(k)].value;
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
    CHECK(p.rows[0].label == "1");
    CHECK_THROWS_AS((void)m.predict(nd, PredictType::Pdf, 100, {0.0}), ModelError);
    CHECK_THROWS_AS((void)m.predict(nd, PredictType::Pdf, 100, {1.5}), ModelError);
}

TEST_CASE("count probabilities sum to one") {
    Dataset d;
    d.add_real("y", {0, 1, 4, 2, 9, 3, 1, 0});
    d.add_real("x", {0.1, 0.2, -0.3, 0.5, 1.0, -1.0, 0.0, 0.3});
    ModelOptions mo;
    mo.alias = "cotram";
    auto m = make("y ~ x", d, mo);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z;
    for (auto& v : m.params().flat()) v = z(rng);
    Dataset nd;
    nd.add_real("x", d.column("x").real);
    const auto p = m.predict(nd, PredictType::Pdf, 100, m.grid(0));
    const std::size_t levels = m.grid(0).size();
    CHECK(levels == 11);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < levels; ++k) {
            CHECK(p.rows[i * levels + k].value >= 0.0);
            s += p.rows[i * levels + k].value;
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("deep interacting multipliers are positive") {
    const auto d = continuous_frame(40);
    ModelOptions mo;
    mo.networks["deep"] = {{4, Activation::Tanh, 0.0}, {1, Activation::Linear, 0.0}};
    auto m = make("y | deep(x, w) ~ 1", d, mo);
    const auto des = m.design(d, false);
    const auto th = m.theta();
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const auto st = m.row_state(des, i, th);
        for (double b : st.b) CHECK(b > 0.0);
    }
}

TEST_CASE("shift-scale multiplier") {
    Dataset d;
    d.add_real("y", {0.0, 1.0, 2.0, 3.0});
    d.add_real("x", {1.0, 0.0, 1.0, 0.0});
    ModelOptions mo;
    mo.trafo.basis = BasisKind::Shiftscale;
    auto m = make("y | x ~ x", d, mo);
    REQUIRE(m.params().find("scale:x"));
    set(m, "scale:x", {2.0});
    const auto des = m.design(d, false);
    const auto th = m.theta();
    CHECK(m.row_state(des, 0, th).b[0] == Approx(std::exp(1.0)));
    CHECK(m.row_state(des, 1, th).b[0] == Approx(1.0));
}

TEST_CASE("binary model transformation is the intercept") {
    const auto d = ordinal_frame(40, 2);
    auto m = make("y ~ 1", d);
    set(m, "theta", {0.0});
    set(m, "1", {-0.6});
    Dataset nd;
    nd.add_real("x", {0.0});
    const auto t = m.predict(nd, PredictType::Trafo);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].value == Approx(-0.6));
    CHECK(std::isinf(t.rows[1].value));
}
