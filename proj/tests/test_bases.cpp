#include <doctest.h>

#include <cmath>
#include <random>

#include "trafo/bases.hpp"
#include "trafo/grad.hpp"

using namespace trafo;
using doctest::Approx;

namespace {

double binom(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

TEST_CASE("bernstein examples") {
    auto a = bernstein(0.5, 1, {0.0, 1.0});
    CHECK(a.value[0] == Approx(0.5));
    CHECK(a.value[1] == Approx(0.5));
    CHECK(a.derivative[0] == Approx(-1.0));
    CHECK(a.derivative[1] == Approx(1.0));

    auto b = bernstein(0.0, 3, {0.0, 1.0});
    CHECK(b.value == std::vector<double>{1.0, 0.0, 0.0, 0.0});

    auto c = bernstein(0.25, 2, {0.0, 1.0});
    CHECK(c.value[0] == Approx(0.5625));
    CHECK(c.value[1] == Approx(0.375));
    CHECK(c.value[2] == Approx(0.0625));
}

TEST_CASE("bernstein matches the binomial formula on a shifted support") {
    const Support s{-2.0, 3.0};
    for (double y : {-2.0, -1.3, 0.0, 0.7, 2.9, 3.0}) {
        const auto a = bernstein(y, 6, s);
        const double t = (y - s.lower) / (s.upper - s.lower);
        for (int k = 0; k <= 6; ++k) {
            CHECK(a.value[k] == Approx(binom(6, k) * std::pow(t, k) * std::pow(1 - t, 6 - k)).epsilon(1e-12));
        }
    }
}

TEST_CASE("bernstein rejects values outside the support") {
    CHECK_THROWS_AS((void)bernstein(1.5, 3, {0.0, 1.0}), BasisError);
    CHECK_THROWS_AS((void)bernstein(-0.01, 3, {0.0, 1.0}), BasisError);
    CHECK_THROWS_AS((void)bernstein(0.5, 0, {0.0, 1.0}), BasisError);
}

TEST_CASE("count basis") {
    const Support s{0.0, 10.0};
    CHECK(count_basis(3.0, 4, s).value == bernstein(3.0, 4, s).value);
    const auto z = count_basis(0.0, 1, s);
    CHECK(z.value[0] == Approx(1.0));
    CHECK(z.value[1] == Approx(0.0));
    CHECK_THROWS_AS((void)count_basis(-1.0, 1, s), BasisError);
}

TEST_CASE("discrete basis") {
    CHECK(discrete_basis(1, 3).value == std::vector<double>{1.0, 0.0});
    CHECK(discrete_basis(3, 3).upper_infinite);
    CHECK(discrete_basis(2, 6).value == std::vector<double>{0, 1, 0, 0, 0});
    for (double d : discrete_basis(2, 6).derivative) CHECK(d == 0.0);
    CHECK_THROWS_AS((void)discrete_basis(0, 3), BasisError);
    CHECK_THROWS_AS((void)discrete_basis(4, 3), BasisError);
}

TEST_CASE("linear and log-linear bases") {
    const auto a = linear_basis(2.0);
    CHECK(a.value == std::vector<double>{1.0, 2.0});
    CHECK(a.derivative == std::vector<double>{0.0, 1.0});
    const auto b = log_linear_basis(1.0);
    CHECK(b.value == std::vector<double>{1.0, 0.0});
    CHECK(b.derivative == std::vector<double>{0.0, 1.0});
    CHECK(log_linear_basis(std::exp(1.0)).value[1] == Approx(1.0));
    CHECK_THROWS_AS((void)log_linear_basis(0.0), BasisError);
    CHECK_THROWS_AS((void)log_linear_basis(-1.0), BasisError);
}

TEST_CASE("partition of unity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 7.0);
    for (int i = 0; i < 200; ++i) {
        const auto a = bernstein(u(rng), 1 + static_cast<int>(rng() % 15), {-4.0, 7.0});
        double s = 0;
        for (double v : a.value) s += v;
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("derivatives agree with central differences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const double h = 1e-6;
    for (int i = 0; i < 100; ++i) {
        const double y = u(rng) * 3.0 + 1.0;  // interior of [1, 4]
        std::vector<BasisSpec> specs(3);
        specs[0].kind = BasisKind::Bernstein;
        specs[0].order = 7;
        specs[0].support = {1.0, 4.0};
        specs[1].kind = BasisKind::Linear;
        specs[2].kind = BasisKind::LogLinear;
        for (const auto& s : specs) {
            const auto a = s.evaluate(y);
            const auto up = s.evaluate(y + h), dn = s.evaluate(y - h);
            for (std::size_t k = 0; k < a.value.size(); ++k) {
                const double fd = (up.value[k] - dn.value[k]) / (2 * h);
                CHECK(std::abs(fd - a.derivative[k]) <= 1e-6 * std::max(1.0, std::abs(a.derivative[k])));
            }
        }
    }
}

TEST_CASE("monotone coefficients give a monotone bernstein expansion") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> step(0.0, 1.0);
    std::vector<double> theta(9);
    theta[0] = -3.0;
    for (std::size_t k = 1; k < theta.size(); ++k) theta[k] = theta[k - 1] + step(rng);
    double prev = -1e300;
    for (int i = 0; i < 1000; ++i) {
        const auto a = bernstein(i / 999.0, 8, {0.0, 1.0});
        double v = 0;
        for (std::size_t k = 0; k < theta.size(); ++k) v += a.value[k] * theta[k];
        CHECK(v >= prev - 1e-12);
        prev = v;
    }
}

TEST_CASE("custom basis registry") {
    CustomBasis lin;
    lin.eval = [](double y) { return std::vector<double>{1.0, y}; };
    lin.deriv = [](double) { return std::vector<double>{0.0, 1.0}; };
    lin.constraint = [](grad::Graph& g, grad::NodeId raw) {
        return g.concat({g.slice(raw, 0, 1), g.softplus(g.slice(raw, 1, 1))});
    };
    register_custom_basis("test_linear", lin);
    CHECK(has_custom_basis("test_linear"));
    CHECK_THROWS_AS(register_custom_basis("test_linear", lin), BasisError);

    BasisSpec s;
    s.kind = BasisKind::Custom;
    s.custom_name = "test_linear";
    CHECK(s.dim() == 2);
    CHECK(s.evaluate(3.0).value == linear_basis(3.0).value);

    CustomBasis wrong = lin;
    wrong.deriv = [](double) { return std::vector<double>{0.0, 2.0}; };
    CHECK_THROWS_AS(register_custom_basis("test_wrong", wrong), BasisError);
    CHECK_FALSE(has_custom_basis("test_wrong"));

    CustomBasis ragged = lin;
    ragged.deriv = [](double) { return std::vector<double>{1.0}; };
    CHECK_THROWS_AS(register_custom_basis("test_ragged", ragged), BasisError);

    unregister_custom_basis("test_linear");
    CHECK_FALSE(has_custom_basis("test_linear"));
}

TEST_CASE("basis names round trip") {
    for (auto k : {BasisKind::Bernstein, BasisKind::Count, BasisKind::Linear, BasisKind::LogLinear,
                   BasisKind::Discrete, BasisKind::Shiftscale, BasisKind::Custom}) {
        CHECK(basis_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS((void)basis_kind_from_string("spline"), BasisError);
}
