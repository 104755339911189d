#include "trafo/bases.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

namespace trafo {

namespace {

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return r;
}

// B_{k,n}(t), zero outside 0..n
double bernstein_poly(int k, int n, double t) {
    if (k < 0 || k > n) return 0.0;
    return binomial(n, k) * std::pow(t, k) * std::pow(1.0 - t, n - k);
}

struct Registry {
    std::mutex mutex;
    std::map<std::string, std::shared_ptr<const CustomBasis>> bases;
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

BasisEval bernstein(double y, int order, const Support& support) {
    if (order < 1) throw BasisError("Bernstein order must be at least 1");
    if (!(support.lower < support.upper)) throw BasisError("empty Bernstein support");
    if (!support.contains(y)) {
        std::ostringstream os;
        os << "response value " << y << " outside basis support [" << support.lower << ", "
           << support.upper << "]";
        throw BasisError(os.str());
    }
    const double width = support.upper - support.lower;
    const double t = (y - support.lower) / width;
    BasisEval out;
    out.value.resize(static_cast<std::size_t>(order) + 1);
    out.derivative.resize(out.value.size());
    for (int k = 0; k <= order; ++k) {
        out.value[k] = bernstein_poly(k, order, t);
        out.derivative[k] =
            order * (bernstein_poly(k - 1, order - 1, t) - bernstein_poly(k, order - 1, t)) / width;
    }
    return out;
}

BasisEval count_basis(double y, int order, const Support& support) {
    if (y < 0.0) throw BasisError("count response must be nonnegative");
    return bernstein(std::floor(y), order, support);
}

BasisEval discrete_basis(int level, int n_levels) {
    if (n_levels < 2) throw BasisError("ordinal response needs at least two levels");
    if (level < 1 || level > n_levels) {
        throw BasisError("level " + std::to_string(level) + " out of range 1.." +
                         std::to_string(n_levels));
    }
    BasisEval out;
    out.value.assign(static_cast<std::size_t>(n_levels - 1), 0.0);
    out.derivative.assign(out.value.size(), 0.0);
    if (level == n_levels) {
        out.upper_infinite = true;
    } else {
        out.value[static_cast<std::size_t>(level - 1)] = 1.0;
    }
    return out;
}

BasisEval linear_basis(double y) {
    if (!std::isfinite(y)) throw BasisError("linear basis needs a finite response");
    return BasisEval{{1.0, y}, {0.0, 1.0}, false};
}

BasisEval log_linear_basis(double y) {
    if (!(y > 0.0) || !std::isfinite(y)) {
        throw BasisError("log-linear basis needs a positive finite response");
    }
    return BasisEval{{1.0, std::log(y)}, {0.0, 1.0 / y}, false};
}

void register_custom_basis(const std::string& name, CustomBasis basis,
                           const Support& check_domain) {
    if (!basis.eval || !basis.deriv || !basis.constraint) {
        throw BasisError("custom basis '" + name + "' needs eval, deriv and constraint");
    }
    // 5 random interior points, relative error 1e-4
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    const double width = check_domain.upper - check_domain.lower;
    for (int i = 0; i < 5; ++i) {
        const double y = check_domain.lower + unif(rng) * width;
        const double h = 1e-5 * std::max(1.0, std::abs(y));
        const auto d = basis.deriv(y);
        const auto up = basis.eval(y + h);
        const auto dn = basis.eval(y - h);
        if (d.size() != up.size()) {
            throw BasisError("custom basis '" + name + "': eval and deriv lengths differ");
        }
        for (std::size_t k = 0; k < d.size(); ++k) {
            const double fd = (up[k] - dn[k]) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(d[k]), 1e-8});
            if (std::abs(fd - d[k]) / scale > 1e-4) {
                std::ostringstream os;
                os << "custom basis '" << name << "': derivative " << k << " at y=" << y
                   << " is " << d[k] << " but finite differences give " << fd;
                throw BasisError(os.str());
            }
        }
    }
    auto& reg = registry();
    std::lock_guard lock(reg.mutex);
    if (reg.bases.count(name)) throw BasisError("basis '" + name + "' is already registered");
    reg.bases.emplace(name, std::make_shared<const CustomBasis>(std::move(basis)));
}

bool has_custom_basis(const std::string& name) {
    auto& reg = registry();
    std::lock_guard lock(reg.mutex);
    return reg.bases.count(name) > 0;
}

std::shared_ptr<const CustomBasis> find_custom_basis(const std::string& name) {
    auto& reg = registry();
    std::lock_guard lock(reg.mutex);
    auto it = reg.bases.find(name);
    if (it == reg.bases.end()) throw BasisError("unknown custom basis '" + name + "'");
    return it->second;
}

void unregister_custom_basis(const std::string& name) {
    auto& reg = registry();
    std::lock_guard lock(reg.mutex);
    reg.bases.erase(name);
}

std::string to_string(BasisKind kind) {
    switch (kind) {
        case BasisKind::Bernstein: return "bernstein";
        case BasisKind::Count: return "count";
        case BasisKind::Linear: return "linear";
        case BasisKind::LogLinear: return "loglinear";
        case BasisKind::Discrete: return "ordered";
        case BasisKind::Shiftscale: return "shiftscale";
        case BasisKind::Custom: return "custom";
    }
    return "?";
}

BasisKind basis_kind_from_string(const std::string& name) {
    if (name == "bernstein") return BasisKind::Bernstein;
    if (name == "count") return BasisKind::Count;
    if (name == "linear") return BasisKind::Linear;
    if (name == "loglinear" || name == "log-linear") return BasisKind::LogLinear;
    if (name == "ordered" || name == "discrete") return BasisKind::Discrete;
    if (name == "shiftscale") return BasisKind::Shiftscale;
    if (name == "custom") return BasisKind::Custom;
    throw BasisError("unknown basis '" + name + "'");
}

std::size_t BasisSpec::dim() const {
    switch (kind) {
        case BasisKind::Bernstein:
        case BasisKind::Count: return static_cast<std::size_t>(order) + 1;
        case BasisKind::Linear:
        case BasisKind::LogLinear:
        case BasisKind::Shiftscale: return 2;
        case BasisKind::Discrete: return static_cast<std::size_t>(n_levels - 1);
        case BasisKind::Custom: {
            auto b = find_custom_basis(custom_name);
            return b->eval(support.lower).size();
        }
    }
    return 0;
}

BasisEval BasisSpec::evaluate(double y) const {
    switch (kind) {
        case BasisKind::Bernstein: return bernstein(y, order, support);
        case BasisKind::Count: return count_basis(y, order, support);
        case BasisKind::Linear:
        case BasisKind::Shiftscale: return linear_basis(y);
        case BasisKind::LogLinear: return log_linear_basis(y);
        case BasisKind::Discrete: {
            const double r = std::round(y);
            if (r != y) throw BasisError("ordinal level must be an integer index");
            return discrete_basis(static_cast<int>(r), n_levels);
        }
        case BasisKind::Custom: {
            auto b = find_custom_basis(custom_name);
            BasisEval out{b->eval(y), b->deriv(y), false};
            if (out.value.size() != out.derivative.size()) {
                throw BasisError("custom basis '" + custom_name +
                                 "': eval and deriv lengths differ");
            }
            return out;
        }
    }
    throw BasisError("unhandled basis kind");
}

}  // namespace trafo
