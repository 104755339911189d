#include <doctest.h>

#include <cmath>
#include <random>

#include "trafo/loss.hpp"
#include "trafo/timeseries.hpp"
#include "trafo/train.hpp"

using namespace trafo;
using doctest::Approx;

TEST_CASE("lag construction") {
    const std::vector<double> s = {1, 2, 3, 4};
    const auto d = build_lags(s, 1);
    CHECK(d.rows() == 3);
    CHECK(d.column("y").real == std::vector<double>{2, 3, 4});
    CHECK(d.column("y_lag_1").real == std::vector<double>{1, 2, 3});

    std::vector<double> long_series(240);
    for (std::size_t t = 0; t < long_series.size(); ++t) long_series[t] = std::sin(0.1 * static_cast<double>(t));
    Dataset exog;
    std::vector<double> month(240);
    for (std::size_t t = 0; t < month.size(); ++t) month[t] = static_cast<double>(t % 12);
    exog.add_real("month", month);
    const auto l3 = build_lags(long_series, 3, exog);
    CHECK(l3.rows() == 237);
    CHECK(l3.column("month").real[0] == 3.0);
    CHECK(l3.column("y_lag_3").real[0] == long_series[0]);
    CHECK(l3.column("y_lag_1").real[236] == long_series[238]);

    CHECK_THROWS_AS((void)build_lags(s, 4), TimeSeriesError);
    CHECK_THROWS_AS((void)build_lags(s, 0), TimeSeriesError);
    CHECK_THROWS_AS((void)build_lags(d, "y", 1), TimeSeriesError);  // y_lag_1 already present
    Dataset short_exog;
    short_exog.add_real("m", {1, 2});
    CHECK_THROWS_AS((void)build_lags(s, 1, short_exog), TimeSeriesError);
    CHECK(lag_name("y", 2) == "y_lag_2");
}

TEST_CASE("atplag contribution") {
    std::vector<double> s(50);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z;
    for (auto& v : s) v = z(rng);
    const auto d = build_lags(s, 2);
    CompiledModel m(compile_blueprint(parse_formula("y ~ 0 + atplag(y_lag_1) + atplag(y_lag_2)"), d));
    CompiledModel plain(compile_blueprint(parse_formula("y ~ 0"), d));
    CHECK(m.params().size() == plain.params().size() + 2);

    const std::vector<double> lags = {d.column("y_lag_1").real[0], d.column("y_lag_2").real[0]};
    const std::vector<double> zero = {0.0, 0.0};
    CHECK(atplag_contribution(m, lags, zero) == 0.0);

    m.params().values(m.params().index_of("atplag(y_lag_1)"))[0] = 0.4;
    m.params().values(m.params().index_of("atplag(y_lag_2)"))[0] = -0.2;
    const std::vector<double> phi = {0.4, -0.2};
    const auto des = m.design(d, false);
    const auto th = m.theta();
    CHECK(m.row_state(des, 0, th).ar == Approx(atplag_contribution(m, lags, phi)).epsilon(1e-12));
    const auto sh = m.predict(d, PredictType::Shift);
    CHECK(sh.rows[0].value == Approx(atplag_contribution(m, lags, phi)));
    CHECK(m.coef(CoefType::Autoregressive).size() == 2);

    const std::vector<double> far = {1e6, 0.0};
    CHECK_THROWS_AS((void)atplag_contribution(m, far, phi), TimeSeriesError);
}

TEST_CASE("linear transformation with one lag recovers an AR(1) coefficient") {
    const double true_phi = 0.6;
    std::vector<double> s(600);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    double prev = 0.0;
    for (auto& v : s) v = prev = true_phi * prev + z(rng);
    const auto d = build_lags(s, 1);
    ModelOptions mo;
    mo.trafo.basis = BasisKind::Linear;
    CompiledModel m(compile_blueprint(parse_formula("y ~ 0 + atplag(y_lag_1)"), d, mo));
    FitConfig fc;
    fc.epochs = 400;
    fc.batch_size = d.rows();
    fc.validation_split = 0.0;
    fc.learning_rate = 0.05;
    (void)fit(m, d, fc);
    const double phi = m.params().values(m.params().index_of("atplag(y_lag_1)"))[0];
    // h = h0(y_t) + phi h0(y_{t-1}) makes the implied AR coefficient -phi
    CHECK(-phi == Approx(true_phi).epsilon(0.15));
}
