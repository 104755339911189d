#include "trafo/simulate.hpp"

#include <cmath>
#include <random>

#include "trafo/latent.hpp"

namespace trafo {

namespace {

using Rng = std::mt19937_64;

// y = 1 + e, x independent of y.
Simulation gaussian_linear(const SimulateOptions& o, Rng& rng) {
    std::normal_distribution<double> z;
    std::vector<double> x(o.n), y(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        x[i] = z(rng);
        y[i] = 1.0 + z(rng);
    }
    Simulation s;
    s.data.add_real("y", std::move(y));
    s.data.add_real("x", std::move(x));
    s.truth = {{"mean", 1.0}, {"sd", 1.0}, {"beta_x", 0.0}};
    return s;
}

// y = (x == 2) - (x == 3) + e with x uniform over levels 1..L.
Simulation large_factor(const SimulateOptions& o, Rng& rng) {
    if (o.levels < 3) throw SimulateError("large-factor needs at least 3 levels");
    std::normal_distribution<double> z;
    std::uniform_int_distribution<std::int32_t> lev(0, o.levels - 1);
    std::vector<double> y(o.n);
    std::vector<std::int32_t> codes(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        codes[i] = lev(rng);
        y[i] = (codes[i] == 1 ? 1.0 : 0.0) - (codes[i] == 2 ? 1.0 : 0.0) + z(rng);
    }
    std::vector<std::string> levels;
    std::vector<double> effects(static_cast<std::size_t>(o.levels), 0.0);
    for (int k = 1; k <= o.levels; ++k) levels.push_back(std::to_string(k));
    effects[1] = 1.0;
    effects[2] = -1.0;
    Simulation s;
    s.data.add_real("y", std::move(y));
    s.data.add_categorical("x", std::move(codes), levels);
    s.truth = {{"levels", o.levels}, {"effects", effects}, {"sd", 1.0}};
    return s;
}

// y_t = phi y_{t-1} + e_t after a burn-in from 0.
Simulation ar1(const SimulateOptions& o, Rng& rng) {
    if (std::abs(o.phi) >= 1.0) throw SimulateError("ar1 needs |phi| < 1");
    std::normal_distribution<double> z;
    double prev = 0.0;
    for (int b = 0; b < o.burn_in; ++b) prev = o.phi * prev + z(rng);
    std::vector<double> t(o.n), y(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        prev = o.phi * prev + z(rng);
        t[i] = static_cast<double>(i + 1);
        y[i] = prev;
    }
    Simulation s;
    s.data.add_real("time", std::move(t));
    s.data.add_real("y", std::move(y));
    s.truth = {{"phi", o.phi}, {"sd", 1.0}, {"burn_in", o.burn_in}};
    return s;
}

// P(Y <= k | x) = F_logistic(theta_k + beta x), cutpoints evenly spaced in [-1.5, 1.5].
Simulation ordinal_logit(const SimulateOptions& o, Rng& rng) {
    if (o.classes < 2) throw SimulateError("ordinal-logit needs at least 2 classes");
    const int K = o.classes;
    std::vector<double> theta(static_cast<std::size_t>(K - 1));
    for (int k = 0; k < K - 1; ++k) {
        theta[k] = K == 2 ? 0.0 : -1.5 + 3.0 * k / (K - 2);
    }
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u01;
    std::vector<double> x(o.n);
    std::vector<std::int32_t> codes(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        x[i] = z(rng);
        const double u = u01(rng);
        std::int32_t k = 0;
        while (k < K - 1 && u > cdf(Latent::StdLogistic, theta[k] + o.beta * x[i])) ++k;
        codes[i] = k;
    }
    std::vector<std::string> levels;
    for (int k = 1; k <= K; ++k) levels.push_back(std::to_string(k));
    Simulation s;
    s.data.add_categorical("y", std::move(codes), levels);
    s.data.add_real("x", std::move(x));
    s.truth = {{"classes", K}, {"theta", theta}, {"beta", o.beta}, {"latent", "logistic"}};
    return s;
}

// y = 1 + x + exp(scale x / 2) e with x ~ U(-1, 1).
Simulation heteroscedastic(const SimulateOptions& o, Rng& rng) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> ux(-1.0, 1.0);
    std::vector<double> x(o.n), y(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        x[i] = ux(rng);
        y[i] = 1.0 + x[i] + std::exp(0.5 * o.scale * x[i]) * z(rng);
    }
    Simulation s;
    s.data.add_real("y", std::move(y));
    s.data.add_real("x", std::move(x));
    // h = exp(gamma x / 2) (y - 1 - x) with gamma = -scale
    s.truth = {{"mean_intercept", 1.0}, {"mean_slope", 1.0}, {"log_variance_slope", o.scale},
               {"gamma", -o.scale}};
    return s;
}

}  // namespace

std::vector<std::string> simulation_generators() {
    return {"gaussian-linear", "large-factor", "ar1", "ordinal-logit", "heteroscedastic"};
}

Simulation simulate(const std::string& generator, const SimulateOptions& opts) {
    if (opts.n == 0) throw SimulateError("n must be positive");
    Rng rng(opts.seed);
    Simulation s;
    if (generator == "gaussian-linear") {
        s = gaussian_linear(opts, rng);
    } else if (generator == "large-factor") {
        s = large_factor(opts, rng);
    } else if (generator == "ar1") {
        s = ar1(opts, rng);
    } else if (generator == "ordinal-logit") {
        s = ordinal_logit(opts, rng);
    } else if (generator == "heteroscedastic") {
        s = heteroscedastic(opts, rng);
    } else {
        std::string known;
        for (const auto& g : simulation_generators()) known += (known.empty() ? "" : ", ") + g;
        throw SimulateError("unknown generator '" + generator + "' (known: " + known + ")");
    }
    s.truth["generator"] = generator;
    s.truth["n"] = opts.n;
    s.truth["seed"] = opts.seed;
    return s;
}

}  // namespace trafo
