#include "trafo/terms.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace trafo {

namespace {

using Mat = Eigen::MatrixXd;

Mat constrained_design(const SmoothBasis& sm, std::span<const double> x) {
    const auto p = static_cast<Eigen::Index>(sm.n_coef());
    Mat B(static_cast<Eigen::Index>(x.size()), p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto r = sm.row(x[i]);
        for (Eigen::Index j = 0; j < p; ++j) B(static_cast<Eigen::Index>(i), j) = r[static_cast<std::size_t>(j)];
    }
    return B;
}

Mat penalty_matrix(const SmoothBasis& sm) {
    const auto p = static_cast<Eigen::Index>(sm.n_coef());
    Mat S(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) S(i, j) = sm.penalty[static_cast<std::size_t>(i * p + j)];
    return S;
}

double trace_df(const Mat& G, const Mat& S, double lambda) {
    const double ridge = 1e-10 * std::max(G.trace(), 1.0) / static_cast<double>(G.rows());
    Mat A = G + lambda * S + ridge * Mat::Identity(G.rows(), G.cols());
    return A.ldlt().solve(G).trace();
}

const Column& real_column(const Dataset& data, const std::string& var, const std::string& label) {
    const Column& c = data.column(var);
    if (c.categorical()) {
        throw TermError("term '" + label + "' needs a numeric column but '" + var +
                        "' is categorical");
    }
    return c;
}

const NetworkConfig& lookup_net(const NetworkMap& nets, const std::string& name) {
    auto it = nets.find(name);
    if (it == nets.end()) throw TermError("no network configuration named '" + name + "'");
    if (it->second.empty()) throw TermError("network '" + name + "' has no layers");
    for (const auto& l : it->second) {
        if (l.units == 0) throw TermError("network '" + name + "' has a layer with 0 units");
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) {
            throw TermError("network '" + name + "' dropout must lie in [0, 1)");
        }
    }
    if (it->second.back().activation != Activation::Linear) {
        throw TermError("network '" + name + "' must end in a linear layer");
    }
    return it->second;
}

TermFeature make_feature(const TermExpr& expr, const Dataset& data, const NetworkMap& nets) {
    TermFeature f;
    f.label = term_label(expr);
    f.vars = term_variables(expr);
    for (const auto& v : f.vars) (void)data.column(v);
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, term::Intercept>) {
                f.kind = FeatureKind::Intercept;
                f.label = "(Intercept)";
            } else if constexpr (std::is_same_v<T, term::Linear>) {
                f.kind = FeatureKind::Linear;
                (void)real_column(data, t.var, f.label);
            } else if constexpr (std::is_same_v<T, term::Smooth>) {
                f.kind = FeatureKind::Smooth;
                const auto& c = real_column(data, t.var, f.label);
                f.smooth = make_smooth(c.real, t.df, t.n_basis);
            } else if constexpr (std::is_same_v<T, term::Factor>) {
                f.kind = FeatureKind::Factor;
                const Column& c = data.column(t.var);
                f.levels = c.categorical() ? c.levels : to_categorical(c).levels;
                if (f.levels.size() < 2) {
                    throw TermError("factor '" + t.var + "' needs at least two levels");
                }
            } else if constexpr (std::is_same_v<T, term::Lasso>) {
                f.kind = FeatureKind::Lasso;
                f.lambda = t.lambda;
                (void)real_column(data, t.var, f.label);
            } else if constexpr (std::is_same_v<T, term::Deep>) {
                f.kind = FeatureKind::Deep;
                f.net_name = t.net;
                f.net = lookup_net(nets, t.net);
                for (const auto& v : t.vars) (void)real_column(data, v, f.label);
            } else {
                f.kind = FeatureKind::AtpLag;
                (void)real_column(data, t.var, f.label);
            }
        },
        expr.kind);
    return f;
}

void check_interacting_linear(const TermFeature& f, const Dataset& data) {
    for (double v : data.column(f.vars.front()).real) {
        if (!(v >= 0.0)) {
            throw TermError("interacting term '" + f.label +
                            "' requires a nonnegative column (found " + format_double(v) + ")");
        }
    }
}

}  // namespace

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "softplus") return Activation::Softplus;
    throw TermError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softplus: return "softplus";
    }
    return "linear";
}

double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::Linear: return x;
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Tanh: return std::tanh(x);
        case Activation::Sigmoid: return grad::sigmoid(x);
        case Activation::Softplus: return grad::softplus(x);
    }
    return x;
}

std::vector<double> SmoothBasis::raw_row(double x) const {
    const int p = degree;
    const double h = (upper - lower) / static_cast<double>(n_basis - p);
    x = std::clamp(x, lower, upper);
    int span = p + static_cast<int>(std::floor((x - lower) / h));
    span = std::clamp(span, p, n_basis - 1);

    std::vector<double> N(static_cast<std::size_t>(p + 1), 0.0);
    std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = x - knots[static_cast<std::size_t>(span + 1 - j)];
        right[j] = knots[static_cast<std::size_t>(span + j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double tmp = N[r] / (right[r + 1] + left[j - r]);
            N[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        N[j] = saved;
    }
    std::vector<double> out(static_cast<std::size_t>(n_basis), 0.0);
    for (int r = 0; r <= p; ++r) out[static_cast<std::size_t>(span - p + r)] = N[r];
    return out;
}

std::vector<double> SmoothBasis::row(double x) const {
    auto raw = raw_row(x);
    if (constraint.empty()) return raw;
    const std::size_t q = n_coef();
    std::vector<double> out(q, 0.0);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == 0.0) continue;
        for (std::size_t j = 0; j < q; ++j) out[j] += raw[i] * constraint[i * q + j];
    }
    return out;
}

SmoothBasis make_smooth(std::span<const double> x, double df, int n_basis) {
    if (x.empty()) throw TermError("smooth term on an empty column");
    if (n_basis < 4) throw TermError("smooth term needs at least 4 basis functions");
    auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    if (!std::isfinite(*mn) || !std::isfinite(*mx)) throw TermError("smooth term on non-finite values");
    if (!(*mx > *mn)) throw TermError("smooth term needs at least two distinct covariate values");

    SmoothBasis sm;
    sm.lower = *mn;
    sm.upper = *mx;
    sm.n_basis = n_basis;
    const double h = (sm.upper - sm.lower) / static_cast<double>(n_basis - sm.degree);
    for (int j = 0; j <= n_basis + sm.degree; ++j) {
        sm.knots.push_back(sm.lower + static_cast<double>(j - sm.degree) * h);
    }

    // sum-to-zero over the training rows
    const auto k = static_cast<Eigen::Index>(n_basis);
    Eigen::VectorXd colsum = Eigen::VectorXd::Zero(k);
    for (double v : x) {
        auto r = sm.raw_row(v);
        for (Eigen::Index j = 0; j < k; ++j) colsum(j) += r[static_cast<std::size_t>(j)];
    }
    const Mat C = colsum;
    Eigen::HouseholderQR<Mat> qr(C);
    Mat Q = qr.householderQ();
    Mat Z = Q.rightCols(k - 1);
    sm.constraint.resize(static_cast<std::size_t>(k * (k - 1)));
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k - 1; ++j)
            sm.constraint[static_cast<std::size_t>(i * (k - 1) + j)] = Z(i, j);

    Mat D = Mat::Zero(k - 2, k);
    for (Eigen::Index i = 0; i < k - 2; ++i) {
        D(i, i) = 1.0;
        D(i, i + 1) = -2.0;
        D(i, i + 2) = 1.0;
    }
    Mat S = Z.transpose() * D.transpose() * D * Z;
    const auto q = k - 1;
    sm.penalty.resize(static_cast<std::size_t>(q * q));
    for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j < q; ++j) sm.penalty[static_cast<std::size_t>(i * q + j)] = S(i, j);

    const Mat B = constrained_design(sm, x);
    const Mat G = B.transpose() * B;
    const double df_max = trace_df(G, S, 0.0);
    if (!(df > 1.0)) throw TermError("smooth df must exceed 1");
    if (df >= df_max) {
        sm.lambda = 0.0;
        sm.df = df_max;
        return sm;
    }
    double lo = -10.0, hi = 14.0;  // log10 lambda
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (trace_df(G, S, std::pow(10.0, mid)) > df) lo = mid;
        else hi = mid;
    }
    sm.lambda = std::pow(10.0, 0.5 * (lo + hi));
    sm.df = trace_df(G, S, sm.lambda);
    return sm;
}

double effective_df(const SmoothBasis& sm, std::span<const double> x, double lambda) {
    const Mat B = constrained_design(sm, x);
    return trace_df(B.transpose() * B, penalty_matrix(sm), lambda);
}

std::string to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::Intercept: return "intercept";
        case FeatureKind::Linear: return "linear";
        case FeatureKind::Smooth: return "smooth";
        case FeatureKind::Factor: return "factor";
        case FeatureKind::Lasso: return "lasso";
        case FeatureKind::Deep: return "deep";
        case FeatureKind::AtpLag: return "atplag";
    }
    return "intercept";
}

FeatureKind feature_kind_from_string(const std::string& s) {
    for (auto k : {FeatureKind::Intercept, FeatureKind::Linear, FeatureKind::Smooth,
                   FeatureKind::Factor, FeatureKind::Lasso, FeatureKind::Deep, FeatureKind::AtpLag}) {
        if (to_string(k) == s) return k;
    }
    throw TermError("unknown term kind '" + s + "'");
}

std::size_t TermFeature::slot_width(bool interacting) const {
    switch (kind) {
        case FeatureKind::Intercept: return 0;
        case FeatureKind::Linear:
        case FeatureKind::Lasso: return 1;
        case FeatureKind::Smooth: return smooth.n_coef();
        case FeatureKind::Factor: return interacting ? levels.size() - 1 : 1;
        case FeatureKind::Deep: return vars.size();
        case FeatureKind::AtpLag: return 0;
    }
    return 0;
}

std::size_t TermFeature::n_coef() const {
    switch (kind) {
        case FeatureKind::Smooth: return smooth.n_coef();
        case FeatureKind::Factor: return levels.size() - 1;
        case FeatureKind::Deep: return net_outputs();
        default: return 1;
    }
}

std::vector<double> term_slot_data(const TermFeature& t, const Dataset& data, bool interacting) {
    const std::size_t n = data.rows();
    const std::size_t w = t.slot_width(interacting);
    std::vector<double> out(n * w, 0.0);
    switch (t.kind) {
        case FeatureKind::Intercept:
        case FeatureKind::AtpLag: break;
        case FeatureKind::Linear:
        case FeatureKind::Lasso: {
            const auto& c = real_column(data, t.vars.front(), t.label);
            std::copy(c.real.begin(), c.real.end(), out.begin());
            if (interacting) {
                for (double v : c.real) {
                    if (!(v >= 0.0)) {
                        throw TermError("interacting term '" + t.label +
                                        "' requires a nonnegative column (found " +
                                        format_double(v) + ")");
                    }
                }
            }
            break;
        }
        case FeatureKind::Smooth: {
            const auto& c = real_column(data, t.vars.front(), t.label);
            for (std::size_t i = 0; i < n; ++i) {
                auto r = t.smooth.row(c.real[i]);
                std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(i * w));
            }
            break;
        }
        case FeatureKind::Factor: {
            const Column& c = data.column(t.vars.front());
            std::unordered_map<std::string, int> index;
            for (std::size_t k = 0; k < t.levels.size(); ++k) index.emplace(t.levels[k], static_cast<int>(k));
            auto resolve = [&](const std::string& label, std::size_t row) {
                auto it = index.find(label);
                if (it == index.end()) {
                    throw TermError("unseen level '" + label + "' of factor '" + t.vars.front() +
                                    "' in row " + std::to_string(row + 1));
                }
                return it->second;
            };
            std::vector<int> code_map;
            if (c.categorical()) {
                code_map.assign(c.levels.size(), -2);
            }
            for (std::size_t i = 0; i < n; ++i) {
                int k;
                if (c.categorical()) {
                    auto code = static_cast<std::size_t>(c.codes[i]);
                    if (code_map[code] == -2) code_map[code] = resolve(c.levels[code], i);
                    k = code_map[code];
                } else {
                    k = resolve(format_double(c.real[i]), i);
                }
                if (interacting) {
                    if (k > 0) out[i * w + static_cast<std::size_t>(k - 1)] = 1.0;
                } else {
                    out[i] = static_cast<double>(k - 1);
                }
            }
            break;
        }
        case FeatureKind::Deep: {
            for (std::size_t j = 0; j < w; ++j) {
                const auto& c = real_column(data, t.vars[j], t.label);
                for (std::size_t i = 0; i < n; ++i) out[i * w + j] = c.real[i];
            }
            break;
        }
    }
    return out;
}

ShiftDesign build_shift_features(const ModelSpec& spec, const Dataset& data, const NetworkMap& nets) {
    ShiftDesign d;
    d.intercept = !spec.suppress_shift_intercept;
    for (const auto& e : spec.shifting) {
        auto f = make_feature(e, data, nets);
        if (f.kind == FeatureKind::Intercept) continue;
        if (f.kind == FeatureKind::Deep && f.net_outputs() != 1) {
            throw TermError("shift network '" + f.net_name + "' must have 1 output unit");
        }
        d.terms.push_back(std::move(f));
    }
    return d;
}

InteractingDesign build_interacting_features(const ModelSpec& spec, const Dataset& data,
                                             const NetworkMap& nets) {
    InteractingDesign d;
    d.columns = 0;
    for (const auto& e : spec.interacting) {
        auto f = make_feature(e, data, nets);
        if (f.kind == FeatureKind::Smooth || f.kind == FeatureKind::Lasso ||
            f.kind == FeatureKind::AtpLag) {
            throw TermError("term '" + f.label + "' is not supported as an interacting term");
        }
        if (f.kind == FeatureKind::Linear) check_interacting_linear(f, data);
        d.columns += f.n_coef();
        d.terms.push_back(std::move(f));
    }
    if (d.terms.empty() || d.terms.front().kind != FeatureKind::Intercept) {
        throw TermError("interacting design must start with the intercept");
    }
    return d;
}

InteractingDesign build_scale_term(const ModelSpec& spec, const Dataset& data, const NetworkMap& nets) {
    InteractingDesign d;
    d.scale = true;
    d.columns = 1;
    for (const auto& e : spec.interacting) {
        auto f = make_feature(e, data, nets);
        if (f.kind == FeatureKind::Smooth || f.kind == FeatureKind::Lasso ||
            f.kind == FeatureKind::AtpLag) {
            throw TermError("term '" + f.label + "' is not supported in a scale predictor");
        }
        if (f.kind == FeatureKind::Deep && f.net_outputs() != 1) {
            throw TermError("scale network '" + f.net_name + "' must have 1 output unit");
        }
        d.terms.push_back(std::move(f));
    }
    if (d.terms.empty() || d.terms.front().kind != FeatureKind::Intercept) {
        throw TermError("interacting design must start with the intercept");
    }
    return d;
}

void add_network_slices(grad::ParameterStore& store, const std::string& prefix,
                        std::size_t input_dim, const NetworkConfig& net) {
    std::size_t in = input_dim;
    for (std::size_t k = 0; k < net.size(); ++k) {
        const auto id = std::to_string(k + 1);
        store.add_slice(prefix + "W" + id, net[k].units, in);
        store.add_slice(prefix + "b" + id, net[k].units, 1);
        in = net[k].units;
    }
}

void glorot_init(grad::ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                 const NetworkConfig& net, std::mt19937_64& rng) {
    std::size_t in = input_dim;
    for (std::size_t k = 0; k < net.size(); ++k) {
        const auto id = std::to_string(k + 1);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + net[k].units));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& w : store.values(store.index_of(prefix + "W" + id))) w = u(rng);
        for (double& b : store.values(store.index_of(prefix + "b" + id))) b = 0.0;
        in = net[k].units;
    }
}

std::vector<double> network_forward(const grad::ParameterStore& store, const std::string& prefix,
                                    const NetworkConfig& net, std::span<const double> x) {
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t k = 0; k < net.size(); ++k) {
        const auto id = std::to_string(k + 1);
        auto W = store.values(store.index_of(prefix + "W" + id));
        auto b = store.values(store.index_of(prefix + "b" + id));
        const std::size_t in = cur.size();
        std::vector<double> next(net[k].units);
        for (std::size_t u = 0; u < net[k].units; ++u) {
            double z = b[u];
            for (std::size_t j = 0; j < in; ++j) z += W[u * in + j] * cur[j];
            next[u] = apply_activation(net[k].activation, z);
        }
        cur = std::move(next);
    }
    return cur;
}

grad::NodeId network_graph(grad::Graph& g, const grad::ParameterStore& store,
                           const std::string& prefix, const NetworkConfig& net, grad::NodeId x,
                           std::size_t& next_slot, std::vector<DropoutSlot>& dropout) {
    for (std::size_t k = 0; k < net.size(); ++k) {
        const auto id = std::to_string(k + 1);
        const std::size_t in = g.size(x);
        if (net[k].dropout > 0.0) {
            const std::size_t slot = next_slot++;
            x = g.mul(x, g.input(slot, in));
            dropout.push_back({slot, in, net[k].dropout});
        }
        const auto wi = store.index_of(prefix + "W" + id);
        const auto bi = store.index_of(prefix + "b" + id);
        auto z = g.add(g.matvec(g.param(wi, store.slice(wi).size()), x, net[k].units),
                       g.param(bi, net[k].units));
        switch (net[k].activation) {
            case Activation::Linear: x = z; break;
            case Activation::Relu: x = g.relu(z); break;
            case Activation::Tanh: x = g.tanh(z); break;
            case Activation::Sigmoid: x = g.sigmoid(z); break;
            case Activation::Softplus: x = g.softplus(z); break;
        }
        g.set_label(x, prefix + "layer" + id);
    }
    return x;
}

}  // namespace trafo
