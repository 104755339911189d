#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "trafo/loss.hpp"
#include "trafo/persist.hpp"
#include "trafo/train.hpp"

using namespace trafo;
namespace fs = std::filesystem;

namespace {

Dataset frame(std::size_t n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z;
    std::vector<double> y(n), x(n), w(n);
    std::vector<std::int32_t> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = z(rng);
        w[i] = std::abs(z(rng));
        g[i] = static_cast<std::int32_t>(i % 3);
        y[i] = x[i] + z(rng);
    }
    Dataset d;
    d.add_real("y", y);
    d.add_real("x", x);
    d.add_real("w", w);
    d.add_categorical("g", g, {"a", "b", "c"});
    return d;
}

void check_same(const CompiledModel& a, const CompiledModel& b, const Dataset& d) {
    CHECK(a.params().flat() == b.params().flat());
    for (auto t : {PredictType::Trafo, PredictType::Pdf, PredictType::Cdf, PredictType::Terms}) {
        const auto pa = a.predict(d, t), pb = b.predict(d, t);
        REQUIRE(pa.rows.size() == pb.rows.size());
        for (std::size_t i = 0; i < pa.rows.size(); ++i) CHECK(pa.rows[i].value == pb.rows[i].value);
    }
    CHECK(log_lik(a, d).value == log_lik(b, d).value);
}

}  // namespace

TEST_CASE("model round trip is bitwise exact") {
    const auto d = frame(80);
    ModelOptions mo;
    mo.networks["deep"] = {{3, Activation::Relu, 0.0}, {1, Activation::Linear, 0.0}};
    const auto bp = compile_blueprint(
        parse_formula("y | w ~ x + fac(g) + s(x, df = 3) + lasso(w, lambda = 0.1) + deep(x, w)"), d, mo);
    CompiledModel m(bp);
    FitConfig fc;
    fc.epochs = 3;
    (void)fit(m, d, fc);
    const auto path = (fs::temp_directory_path() / "trafo_persist_model.json").string();
    save_model(path, m);
    const auto back = load_model(path);
    check_same(m, back, d);
    CHECK(back.blueprint().basis.support.lower == bp.basis.support.lower);
    CHECK(back.blueprint().shifting.terms.size() == bp.shifting.terms.size());
    fs::remove(path);
}

TEST_CASE("ordinal and shift-scale round trips") {
    Dataset d = frame(30);
    std::vector<std::int32_t> yo(30);
    for (std::size_t i = 0; i < yo.size(); ++i) yo[i] = static_cast<std::int32_t>(i % 4);
    d.add_categorical("o", yo, {"lo", "mid", "high", "top"});
    const CompiledModel a(compile_blueprint(parse_formula("o ~ x"), d));
    check_same(a, model_from_json(model_to_json(a)), d);
    CHECK(model_from_json(model_to_json(a)).blueprint().response_levels == a.blueprint().response_levels);

    ModelOptions mo;
    mo.trafo.basis = BasisKind::Shiftscale;
    const CompiledModel b(compile_blueprint(parse_formula("y | x ~ x"), d, mo));
    check_same(b, model_from_json(model_to_json(b)), d);
}

TEST_CASE("ensemble round trip") {
    const auto d = frame(50);
    FitConfig fc;
    fc.epochs = 2;
    const auto ens = ensemble(compile_blueprint(parse_formula("y ~ x"), d), d, 2, fc);
    const auto back = ensemble_from_json(ensemble_to_json(ens));
    REQUIRE(back.members.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) check_same(ens.members[k], back.members[k], d);
}

TEST_CASE("malformed model files") {
    const auto d = frame(20);
    const CompiledModel m(compile_blueprint(parse_formula("y ~ x"), d));
    auto j = model_to_json(m);
    j["format"] = 99;
    CHECK_THROWS_AS((void)model_from_json(j), PersistError);
    j = model_to_json(m);
    j["parameters"][0]["values"].push_back(1.0);
    CHECK_THROWS_AS((void)model_from_json(j), PersistError);
    j = model_to_json(m);
    j["kind"] = "ensemble";
    CHECK_THROWS_AS((void)model_from_json(j), PersistError);
    const auto path = (fs::temp_directory_path() / "trafo_persist_bad.json").string();
    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS((void)load_model(path), PersistError);
    fs::remove(path);
    CHECK_THROWS_AS((void)load_model("/nonexistent/dir/model.json"), PersistError);
}
