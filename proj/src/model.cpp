#include "trafo/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

namespace trafo {

namespace {

constexpr double kProbFloor = 1e-16;

std::string lower_case(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void collect_finite(const Dataset& data, const std::string& name, std::vector<double>& out) {
    if (name.empty() || !data.has(name)) return;
    const Column& c = data.column(name);
    if (c.categorical()) return;
    for (double v : c.real) {
        if (std::isfinite(v)) out.push_back(v);
    }
}

Support observed_support(const std::vector<double>& v, BasisKind kind) {
    if (v.empty()) throw ModelError("response has no finite values to derive a support from");
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    double lo = *mn, hi = *mx;
    if (kind == BasisKind::Count) {
        if (lo < 0.0) throw ModelError("count response has negative values");
        return {0.0, std::floor(hi) + 1.0};
    }
    double range = hi - lo;
    if (range <= 0.0) range = std::max(std::abs(lo), 1.0);
    Support s{lo - 0.1 * range, hi + 0.1 * range};
    if (kind == BasisKind::LogLinear) {
        if (lo <= 0.0) throw ModelError("log-linear basis needs a positive response");
        s.lower = std::max(s.lower, 0.5 * lo);
    }
    return s;
}

std::vector<double> apply_custom_constraint(const BasisSpec& basis, std::span<const double> raw) {
    auto cb = find_custom_basis(basis.custom_name);
    if (!cb->constraint) return {raw.begin(), raw.end()};
    grad::Graph g;
    auto in = g.constant(std::vector<double>(raw.begin(), raw.end()));
    auto out = cb->constraint(g, in);
    grad::Executor ex(g, {});
    grad::ParameterStore empty;
    ex.forward_static(empty);
    auto v = ex.value(out);
    return {v.begin(), v.end()};
}

std::string with_row(const std::string& msg, std::size_t i) {
    return msg + " (row " + std::to_string(i + 1) + ")";
}

}  // namespace

double softplus_inverse(double y) {
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

std::vector<double> constrain_cumulative(std::span<const double> raw) {
    std::vector<double> out(raw.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        acc += k == 0 ? raw[0] : grad::softplus(raw[k]);
        out[k] = acc;
    }
    return out;
}

std::vector<double> constrain_positive_slope(std::span<const double> raw) {
    std::vector<double> out(raw.begin(), raw.end());
    if (out.size() >= 2) out[1] = grad::softplus(raw[1]);
    return out;
}

std::vector<double> constrain_theta(std::span<const double> raw, std::size_t L, const BasisSpec& basis) {
    const std::size_t M = L ? raw.size() / L : 0;
    std::vector<double> out;
    out.reserve(raw.size());
    for (std::size_t l = 0; l < L; ++l) {
        auto col = raw.subspan(l * M, M);
        std::vector<double> c;
        if (basis.cumulative_constraint()) c = constrain_cumulative(col);
        else if (basis.kind == BasisKind::Custom) c = apply_custom_constraint(basis, col);
        else c = constrain_positive_slope(col);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

namespace {

std::optional<ModelAlias> base_alias(const std::string& n) {
    if (n == "boxcox") return ModelAlias{BasisKind::Bernstein, Latent::StdNormal, ResponseType::Continuous};
    if (n == "colr") return ModelAlias{BasisKind::Bernstein, Latent::StdLogistic, ResponseType::Continuous};
    if (n == "cotram") return ModelAlias{BasisKind::Count, Latent::StdLogistic, ResponseType::Count};
    if (n == "coxph") return ModelAlias{BasisKind::Bernstein, Latent::MinExtremeValue, ResponseType::Continuous};
    if (n == "lehmann") return ModelAlias{BasisKind::Bernstein, Latent::MaxExtremeValue, ResponseType::Continuous};
    if (n == "lm") return ModelAlias{BasisKind::Linear, Latent::StdNormal, ResponseType::Continuous};
    if (n == "polr") return ModelAlias{BasisKind::Discrete, Latent::StdLogistic, ResponseType::Ordinal};
    if (n == "survreg") return ModelAlias{BasisKind::LogLinear, Latent::MinExtremeValue, ResponseType::Continuous};
    return std::nullopt;
}

}  // namespace

std::optional<ModelAlias> model_alias(const std::string& name) {
    const std::string n = lower_case(name);
    if (auto a = base_alias(n)) return a;
    // "lehmann" itself ends in "nn", so the suffix is only tried second
    if (n.size() > 2 && n.ends_with("nn")) return base_alias(n.substr(0, n.size() - 2));
    return std::nullopt;
}

CoefType coef_type_from_string(const std::string& s) {
    if (s == "shifting") return CoefType::Shifting;
    if (s == "interacting") return CoefType::Interacting;
    if (s == "autoregressive") return CoefType::Autoregressive;
    throw ModelError("unknown coefficient type '" + s + "'");
}

PredictType predict_type_from_string(const std::string& s) {
    if (s == "trafo") return PredictType::Trafo;
    if (s == "pdf") return PredictType::Pdf;
    if (s == "cdf") return PredictType::Cdf;
    if (s == "interaction") return PredictType::Interaction;
    if (s == "shift") return PredictType::Shift;
    if (s == "terms") return PredictType::Terms;
    if (s == "trafo_deriv") return PredictType::TrafoDeriv;
    throw ModelError("unknown prediction type '" + s + "'");
}

std::string to_string(PredictType t) {
    switch (t) {
        case PredictType::Trafo: return "trafo";
        case PredictType::Pdf: return "pdf";
        case PredictType::Cdf: return "cdf";
        case PredictType::Interaction: return "interaction";
        case PredictType::Shift: return "shift";
        case PredictType::Terms: return "terms";
        case PredictType::TrafoDeriv: return "trafo_deriv";
    }
    return "trafo";
}

ModelBlueprint compile_blueprint(const ModelSpec& spec_in, const Dataset& data, const ModelOptions& opts) {
    // report every missing column at once
    {
        std::set<std::string> missing;
        auto need = [&](const std::string& v) {
            if (!v.empty() && !data.has(v)) missing.insert(v);
        };
        need(spec_in.response);
        need(opts.event_column);
        need(opts.upper_column);
        for (const auto* side : {&spec_in.interacting, &spec_in.shifting})
            for (const auto& t : *side)
                for (const auto& v : term_variables(t)) need(v);
        if (!missing.empty()) {
            std::string msg = "missing column";
            msg += missing.size() > 1 ? "s " : " ";
            bool first = true;
            for (const auto& m : missing) {
                msg += (first ? "'" : ", '") + m + "'";
                first = false;
            }
            throw SchemaError(msg);
        }
    }

    ModelBlueprint bp;
    bp.spec = resolve_factors(spec_in, [&](const std::string& v) {
        return data.has(v) && data.column(v).categorical();
    });
    bp.event_column = opts.event_column;
    bp.upper_column = opts.upper_column;
    bp.networks = opts.networks;
    bp.seed = opts.seed;

    std::optional<ModelAlias> alias;
    if (opts.alias) {
        alias = model_alias(*opts.alias);
        if (!alias) throw ModelError("unknown model '" + *opts.alias + "'");
        if (opts.trafo.basis || opts.trafo.latent) {
            throw ModelError("a model alias and an explicit basis/latent are mutually exclusive");
        }
    }

    const Column& resp = data.column(bp.spec.response);
    ResponseType rt;
    if (opts.response_type) rt = *opts.response_type;
    else if (alias && alias->response != ResponseType::Continuous) rt = alias->response;
    else if (opts.trafo.basis == BasisKind::Discrete) rt = ResponseType::Ordinal;
    else if (opts.trafo.basis == BasisKind::Count) rt = ResponseType::Count;
    else if (resp.categorical()) rt = ResponseType::Ordinal;
    else if (!opts.event_column.empty()) rt = ResponseType::Survival;
    else if (!opts.upper_column.empty()) rt = ResponseType::Interval;
    else rt = ResponseType::Continuous;
    bp.response_type = rt;
    if (rt == ResponseType::Survival && opts.event_column.empty()) {
        throw ModelError("survival response needs an event column");
    }
    if (rt == ResponseType::Interval && opts.upper_column.empty()) {
        throw ModelError("interval response needs an upper-bound column");
    }
    if (resp.categorical() && rt != ResponseType::Ordinal) {
        throw ModelError("response '" + resp.name + "' is categorical but the model is " + to_string(rt));
    }

    BasisKind kind;
    if (alias) kind = alias->basis;
    else if (opts.trafo.basis) kind = *opts.trafo.basis;
    else if (rt == ResponseType::Ordinal) kind = BasisKind::Discrete;
    else if (rt == ResponseType::Count) kind = BasisKind::Count;
    else kind = BasisKind::Bernstein;
    if (rt == ResponseType::Count && kind == BasisKind::Bernstein) kind = BasisKind::Count;
    if ((rt == ResponseType::Ordinal) != (kind == BasisKind::Discrete)) {
        throw ModelError("ordinal responses require the ordered basis and vice versa");
    }
    if (kind == BasisKind::Count && rt != ResponseType::Count) {
        throw ModelError("the count basis requires a count response");
    }
    if (rt == ResponseType::Count && kind != BasisKind::Count) {
        throw ModelError("count responses require the count basis");
    }

    bp.latent = alias ? alias->latent
                      : opts.trafo.latent.value_or(rt == ResponseType::Ordinal || rt == ResponseType::Count
                                                       ? Latent::StdLogistic
                                                       : Latent::StdNormal);

    bp.basis.kind = kind;
    bp.basis.order = opts.trafo.order_bsp.value_or(10);
    if (bp.basis.order < 1) throw ModelError("order_bsp must be at least 1");
    if (kind == BasisKind::Custom) {
        if (opts.trafo.custom_basis.empty() || !has_custom_basis(opts.trafo.custom_basis)) {
            throw ModelError("custom basis '" + opts.trafo.custom_basis + "' is not registered");
        }
        bp.basis.custom_name = opts.trafo.custom_basis;
    }

    std::vector<TermExpr> atplag_exprs;
    for (const auto& t : bp.spec.shifting) {
        if (std::holds_alternative<term::AtpLag>(t.kind)) atplag_exprs.push_back(t);
    }

    if (kind == BasisKind::Discrete) {
        const Column levels_col = resp.categorical() ? resp : to_categorical(resp);
        bp.response_levels = levels_col.levels;
        if (bp.response_levels.size() < 2) throw ModelError("ordinal response needs at least two levels");
        bp.basis.n_levels = static_cast<int>(bp.response_levels.size());
        if (!atplag_exprs.empty()) throw ModelError("atplag terms need a continuous response basis");
    } else {
        if (resp.categorical()) throw ModelError("response '" + resp.name + "' must be numeric");
        if (opts.trafo.support) {
            if (!(opts.trafo.support->lower < opts.trafo.support->upper)) {
                throw ModelError("support lower bound must be below the upper bound");
            }
            bp.basis.support = *opts.trafo.support;
        } else {
            std::vector<double> vals;
            collect_finite(data, bp.spec.response, vals);
            collect_finite(data, opts.upper_column, vals);
            for (const auto& t : atplag_exprs) collect_finite(data, std::get<term::AtpLag>(t.kind).var, vals);
            bp.basis.support = observed_support(vals, kind);
        }
    }

    const bool scale = kind == BasisKind::Shiftscale;
    bp.interacting = scale ? build_scale_term(bp.spec, data, bp.networks)
                           : build_interacting_features(bp.spec, data, bp.networks);
    bp.shifting = build_shift_features(bp.spec, data, bp.networks);
    auto& terms = bp.shifting.terms;
    for (auto it = terms.begin(); it != terms.end();) {
        if (it->kind == FeatureKind::AtpLag) {
            bp.atplags.push_back(std::move(*it));
            it = terms.erase(it);
        } else {
            ++it;
        }
    }
    return bp;
}

// ---------------------------------------------------------------------------

CompiledModel::CompiledModel(ModelBlueprint bp) : bp_(std::move(bp)) {
    m_ = bp_.basis.dim();
    if (m_ == 0) throw ModelError("response basis has dimension 0");
    layout();
    initialize(bp_.seed);
}

std::string CompiledModel::shift_prefix(const TermFeature& t) const { return t.net_name + ":"; }

std::string CompiledModel::interacting_prefix(const TermFeature& t) const {
    return (bp_.interacting.scale ? "scale:" : "interacting:") + t.net_name + ":";
}

void CompiledModel::layout() {
    const std::size_t L = bp_.interacting.columns;
    theta_slice_ = params_.add_slice("theta", L, m_);
    std::size_t slot = 3;
    for (const auto& t : bp_.interacting.terms) {
        std::optional<std::size_t> s, sl;
        if (t.slot_width(true) > 0) s = slot++;
        if (t.kind == FeatureKind::Deep) {
            add_network_slices(params_, interacting_prefix(t), t.vars.size(), t.net);
        } else if (bp_.interacting.scale && t.kind != FeatureKind::Intercept) {
            sl = params_.add_slice("scale:" + t.label, t.n_coef(), 1);
        }
        inter_slot_.push_back(s);
        inter_slice_.push_back(sl);
    }
    if (bp_.shifting.intercept) intercept_slice_ = params_.add_slice("1", 1, 1);
    for (const auto& t : bp_.shifting.terms) {
        shift_slot_.push_back(slot++);
        if (t.kind == FeatureKind::Deep) {
            add_network_slices(params_, shift_prefix(t), t.vars.size(), t.net);
            shift_slice_.push_back(0);
        } else {
            shift_slice_.push_back(params_.add_slice(t.label, t.n_coef(), 1));
        }
    }
    for (const auto& t : bp_.atplags) {
        ar_slot_.push_back(slot++);
        ar_slice_.push_back(params_.add_slice(t.label, 1, 1));
    }
    n_slots_ = slot;
}

void CompiledModel::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    const std::size_t L = bp_.interacting.columns;
    auto raw = params_.values(theta_slice_);
    const auto& basis = bp_.basis;
    for (std::size_t l = 0; l < L; ++l) {
        double* w = raw.data() + l * m_;
        if (basis.cumulative_constraint()) {
            if (m_ == 1) {
                w[0] = noise(rng);
                continue;
            }
            // baseline spans roughly [-2, 2]; other columns start nearly flat
            const double step = l == 0 ? 4.0 / static_cast<double>(m_ - 1) : 0.1;
            w[0] = (l == 0 ? -2.0 : 0.0) + noise(rng);
            for (std::size_t k = 1; k < m_; ++k) w[k] = softplus_inverse(step) + noise(rng);
        } else if (basis.kind == BasisKind::Custom) {
            for (std::size_t k = 0; k < m_; ++k) w[k] = noise(rng);
        } else {
            double lo = basis.support.lower, hi = basis.support.upper;
            if (basis.kind == BasisKind::LogLinear) {
                lo = std::log(lo);
                hi = std::log(hi);
            }
            const double slope = l == 0 ? 4.0 / (hi - lo) : 0.1 / (hi - lo);
            w[0] = (l == 0 ? -slope * 0.5 * (lo + hi) : 0.0) + noise(rng);
            w[1] = softplus_inverse(slope) + noise(rng);
        }
    }
    for (std::size_t k = 0; k < bp_.interacting.terms.size(); ++k) {
        const auto& t = bp_.interacting.terms[k];
        if (t.kind == FeatureKind::Deep) {
            glorot_init(params_, interacting_prefix(t), t.vars.size(), t.net, rng);
        } else if (inter_slice_[k]) {
            for (double& v : params_.values(*inter_slice_[k])) v = 0.0;
        }
    }
    if (intercept_slice_) params_.values(*intercept_slice_)[0] = 0.0;
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        if (t.kind == FeatureKind::Deep) {
            glorot_init(params_, shift_prefix(t), t.vars.size(), t.net, rng);
            continue;
        }
        auto v = params_.values(shift_slice_[k]);
        const double limit = std::sqrt(6.0 / static_cast<double>(v.size() + 1));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& x : v) x = u(rng);
    }
    for (auto s : ar_slice_) params_.values(s)[0] = 0.0;
}

std::vector<std::string> CompiledModel::column_labels() const {
    std::vector<std::string> out;
    if (bp_.interacting.scale) return {"(Intercept)"};
    for (const auto& t : bp_.interacting.terms) {
        switch (t.kind) {
            case FeatureKind::Intercept: out.push_back("(Intercept)"); break;
            case FeatureKind::Linear: out.push_back(t.label); break;
            case FeatureKind::Factor:
                for (std::size_t k = 1; k < t.levels.size(); ++k) out.push_back(t.vars.front() + t.levels[k]);
                break;
            case FeatureKind::Deep:
                for (std::size_t k = 0; k < t.net_outputs(); ++k) {
                    out.push_back(t.net_name + "[" + std::to_string(k + 1) + "]");
                }
                break;
            default: break;
        }
    }
    return out;
}

void check_columns(const ModelBlueprint& bp, const Dataset& data, bool with_response) {
    std::vector<std::string> missing;
    auto need = [&](const std::string& v) {
        if (!v.empty() && !data.has(v) &&
            std::find(missing.begin(), missing.end(), v) == missing.end()) {
            missing.push_back(v);
        }
    };
    if (with_response) {
        need(bp.spec.response);
        if (bp.response_type == ResponseType::Survival) need(bp.event_column);
        if (bp.response_type == ResponseType::Interval) need(bp.upper_column);
    }
    for (const auto* side : {&bp.interacting.terms, &bp.shifting.terms, &bp.atplags})
        for (const auto& t : *side)
            for (const auto& v : t.vars) need(v);
    if (missing.empty()) return;
    std::string msg = missing.size() > 1 ? "missing columns " : "missing column ";
    for (std::size_t k = 0; k < missing.size(); ++k) msg += (k ? ", '" : "'") + missing[k] + "'";
    throw SchemaError(msg);
}

std::vector<ResponseValue> CompiledModel::encode(const Dataset& data) const {
    const std::size_t n = data.rows();
    std::vector<ResponseValue> out;
    out.reserve(n);
    const Column& resp = data.column(bp_.spec.response);
    auto numeric = [&](const Column& c) -> const std::vector<double>& {
        if (c.categorical()) throw SchemaError("column '" + c.name + "' must be numeric");
        return c.real;
    };
    try {
        switch (bp_.response_type) {
            case ResponseType::Continuous:
            case ResponseType::Count: {
                const auto& y = numeric(resp);
                for (std::size_t i = 0; i < n; ++i) {
                    try {
                        out.push_back(encode_response(y[i], bp_.response_type));
                    } catch (const ResponseError& e) {
                        throw ResponseError(with_row(e.what(), i));
                    }
                }
                break;
            }
            case ResponseType::Survival: {
                const auto& t = numeric(resp);
                const auto& ev = numeric(data.column(bp_.event_column));
                for (std::size_t i = 0; i < n; ++i) {
                    try {
                        out.push_back(encode_survival(t[i], ev[i]));
                    } catch (const ResponseError& e) {
                        throw ResponseError(with_row(e.what(), i));
                    }
                }
                break;
            }
            case ResponseType::Interval: {
                const auto& lo = numeric(resp);
                const auto& hi = numeric(data.column(bp_.upper_column));
                for (std::size_t i = 0; i < n; ++i) {
                    try {
                        out.push_back(encode_interval(lo[i], hi[i]));
                    } catch (const ResponseError& e) {
                        throw ResponseError(with_row(e.what(), i));
                    }
                }
                break;
            }
            case ResponseType::Ordinal: {
                std::unordered_map<std::string, int> index;
                for (std::size_t k = 0; k < bp_.response_levels.size(); ++k) {
                    index.emplace(bp_.response_levels[k], static_cast<int>(k) + 1);
                }
                const int K = static_cast<int>(bp_.response_levels.size());
                for (std::size_t i = 0; i < n; ++i) {
                    auto it = index.find(resp.label(i));
                    if (it == index.end()) {
                        throw ResponseError(with_row("unknown response level '" + resp.label(i) + "'", i));
                    }
                    out.push_back(encode_ordinal(it->second, K));
                }
                break;
            }
        }
    } catch (const ResponseError& e) {
        throw ModelError(e.what());
    }
    if (bp_.response_type == ResponseType::Count) {
        const double top = std::floor(bp_.basis.support.upper);
        for (auto& rv : out) {
            if (rv.status == Censoring::Interval && rv.upper >= top) {
                rv.status = Censoring::Right;
                rv.upper = std::numeric_limits<double>::infinity();
            }
        }
    }
    return out;
}

Design CompiledModel::design(const Dataset& data, bool with_response) const {
    Design d;
    d.rows = data.rows();
    const std::size_t n = d.rows;
    d.widths.assign(n_slots_, 0);
    d.slots.assign(n_slots_, {});
    d.widths[kLoSlot] = d.widths[kHiSlot] = d.widths[kPrimeSlot] = m_;

    auto eval_basis = [&](double y, std::size_t i) {
        try {
            return bp_.basis.evaluate(y);
        } catch (const BasisError& e) {
            throw ModelError(with_row(e.what(), i));
        }
    };

    if (with_response) {
        d.has_response = true;
        d.response = encode(data);
        for (std::size_t s : {kLoSlot, kHiSlot, kPrimeSlot}) d.slots[s].assign(n * m_, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rv = d.response[i];
            auto put = [&](std::size_t slot, const std::vector<double>& v) {
                std::copy(v.begin(), v.end(), d.slots[slot].begin() + static_cast<std::ptrdiff_t>(i * m_));
            };
            switch (rv.status) {
                case Censoring::Exact: {
                    auto a = eval_basis(rv.lower, i);
                    put(kHiSlot, a.value);
                    put(kPrimeSlot, a.derivative);
                    break;
                }
                case Censoring::Interval:
                    put(kLoSlot, eval_basis(rv.lower, i).value);
                    put(kHiSlot, eval_basis(rv.upper, i).value);
                    break;
                case Censoring::Left: put(kHiSlot, eval_basis(rv.upper, i).value); break;
                case Censoring::Right: put(kLoSlot, eval_basis(rv.lower, i).value); break;
                case Censoring::None: break;
            }
        }
    }

    try {
        for (std::size_t k = 0; k < bp_.interacting.terms.size(); ++k) {
            if (!inter_slot_[k]) continue;
            const auto& t = bp_.interacting.terms[k];
            // scale predictors may take any sign
            const bool nonneg = !bp_.interacting.scale;
            d.widths[*inter_slot_[k]] = t.slot_width(true);
            if (nonneg || t.kind != FeatureKind::Linear) {
                d.slots[*inter_slot_[k]] = term_slot_data(t, data, true);
            } else {
                d.slots[*inter_slot_[k]] = term_slot_data(t, data, false);
            }
        }
        for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
            const auto& t = bp_.shifting.terms[k];
            d.widths[shift_slot_[k]] = t.slot_width(false);
            d.slots[shift_slot_[k]] = term_slot_data(t, data, false);
        }
    } catch (const TermError& e) {
        throw ModelError(e.what());
    }
    for (std::size_t j = 0; j < bp_.atplags.size(); ++j) {
        const Column& c = data.column(bp_.atplags[j].vars.front());
        if (c.categorical()) throw SchemaError("lag column '" + c.name + "' must be numeric");
        const std::size_t s = ar_slot_[j];
        d.widths[s] = m_;
        d.slots[s].resize(n * m_);
        for (std::size_t i = 0; i < n; ++i) {
            auto a = eval_basis(c.real[i], i);
            std::copy(a.value.begin(), a.value.end(), d.slots[s].begin() + static_cast<std::ptrdiff_t>(i * m_));
        }
    }
    return d;
}

std::vector<double> CompiledModel::constrain_column(std::span<const double> raw) const {
    return constrain_theta(raw, 1, bp_.basis);
}

std::vector<double> CompiledModel::theta() const {
    return constrain_theta(params_.values(theta_slice_), bp_.interacting.columns, bp_.basis);
}

RowState CompiledModel::row_state(const Design& d, std::size_t i, std::span<const double> theta) const {
    RowState st;
    const auto& it = bp_.interacting;
    if (it.scale) {
        double gamma = 0.0;
        for (std::size_t k = 0; k < it.terms.size(); ++k) {
            const auto& t = it.terms[k];
            if (t.kind == FeatureKind::Intercept) continue;
            const double* x = d.row(*inter_slot_[k], i);
            const std::size_t w = d.widths[*inter_slot_[k]];
            if (t.kind == FeatureKind::Deep) {
                gamma += network_forward(params_, interacting_prefix(t), t.net, {x, w})[0];
            } else {
                gamma += dot({x, w}, params_.values(*inter_slice_[k]));
            }
        }
        st.b = {std::exp(0.5 * gamma)};
    } else {
        st.b.reserve(it.columns);
        for (std::size_t k = 0; k < it.terms.size(); ++k) {
            const auto& t = it.terms[k];
            if (t.kind == FeatureKind::Intercept) {
                st.b.push_back(1.0);
                continue;
            }
            const double* x = d.row(*inter_slot_[k], i);
            const std::size_t w = d.widths[*inter_slot_[k]];
            if (t.kind == FeatureKind::Deep) {
                for (double v : network_forward(params_, interacting_prefix(t), t.net, {x, w})) {
                    st.b.push_back(grad::softplus(v));
                }
            } else {
                st.b.insert(st.b.end(), x, x + w);
            }
        }
    }

    if (intercept_slice_) st.shift = params_.values(*intercept_slice_)[0];
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        const double* x = d.row(shift_slot_[k], i);
        const std::size_t w = d.widths[shift_slot_[k]];
        double c = 0.0;
        switch (t.kind) {
            case FeatureKind::Deep: c = network_forward(params_, shift_prefix(t), t.net, {x, w})[0]; break;
            case FeatureKind::Factor: {
                const int idx = static_cast<int>(x[0]);
                c = idx < 0 ? 0.0 : params_.values(shift_slice_[k])[static_cast<std::size_t>(idx)];
                break;
            }
            default: c = dot({x, w}, params_.values(shift_slice_[k])); break;
        }
        st.shift_terms.push_back(c);
        st.shift += c;
    }
    for (std::size_t j = 0; j < bp_.atplags.size(); ++j) {
        const double phi = params_.values(ar_slice_[j])[0];
        st.ar += phi * dot({d.row(ar_slot_[j], i), m_}, theta.subspan(0, m_));
    }
    return st;
}

double CompiledModel::h_at(const BasisEval& a, const RowState& st, std::span<const double> theta) const {
    if (a.upper_infinite) return std::numeric_limits<double>::infinity();
    double h = st.shift + st.ar;
    for (std::size_t l = 0; l < st.b.size(); ++l) h += st.b[l] * dot(a.value, theta.subspan(l * m_, m_));
    return h;
}

double CompiledModel::h_prime_at(const BasisEval& a, const RowState& st,
                                 std::span<const double> theta) const {
    if (a.upper_infinite) return 0.0;
    double hp = 0.0;
    for (std::size_t l = 0; l < st.b.size(); ++l) hp += st.b[l] * dot(a.derivative, theta.subspan(l * m_, m_));
    return hp;
}

double CompiledModel::eval_h(double y, const Design& d, std::size_t i) const {
    const auto th = theta();
    return h_at(bp_.basis.evaluate(y), row_state(d, i, th), th);
}

double CompiledModel::eval_h_prime(double y, const Design& d, std::size_t i) const {
    const auto th = theta();
    return h_prime_at(bp_.basis.evaluate(y), row_state(d, i, th), th);
}

double CompiledModel::smooth_penalty() const {
    double total = 0.0;
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        if (t.kind != FeatureKind::Smooth || t.smooth.lambda == 0.0) continue;
        auto beta = params_.values(shift_slice_[k]);
        const std::size_t p = beta.size();
        double q = 0.0;
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = 0; c < p; ++c) q += beta[r] * t.smooth.penalty[r * p + c] * beta[c];
        total += t.smooth.lambda * q;
    }
    return total;
}

double CompiledModel::lasso_penalty() const {
    double total = 0.0;
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        if (t.kind != FeatureKind::Lasso) continue;
        for (double b : params_.values(shift_slice_[k])) total += t.lambda * (std::sqrt(b * b + 1e-8) - 1e-4);
    }
    return total;
}

std::vector<Coefficient> CompiledModel::coef(CoefType which) const {
    std::vector<Coefficient> out;
    switch (which) {
        case CoefType::Shifting: {
            if (intercept_slice_) out.push_back({"1", {"1"}, {params_.values(*intercept_slice_)[0]}});
            for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
                const auto& t = bp_.shifting.terms[k];
                if (t.kind == FeatureKind::Deep) continue;
                auto v = params_.values(shift_slice_[k]);
                Coefficient c{t.label, {}, {}};
                if (t.kind == FeatureKind::Factor) {
                    c.labels = t.levels;
                    c.values.push_back(0.0);
                    c.values.insert(c.values.end(), v.begin(), v.end());
                } else if (t.kind == FeatureKind::Smooth) {
                    for (std::size_t j = 0; j < v.size(); ++j) c.labels.push_back(std::to_string(j + 1));
                    c.values.assign(v.begin(), v.end());
                } else {
                    c.labels = {t.label};
                    c.values.assign(v.begin(), v.end());
                }
                out.push_back(std::move(c));
            }
            break;
        }
        case CoefType::Interacting: {
            const auto th = theta();
            const auto labels = column_labels();
            for (std::size_t l = 0; l < labels.size(); ++l) {
                Coefficient c{labels[l], {}, {}};
                for (std::size_t k = 0; k < m_; ++k) c.labels.push_back("theta" + std::to_string(k + 1));
                c.values.assign(th.begin() + static_cast<std::ptrdiff_t>(l * m_),
                                th.begin() + static_cast<std::ptrdiff_t>((l + 1) * m_));
                out.push_back(std::move(c));
            }
            for (std::size_t k = 0; k < bp_.interacting.terms.size(); ++k) {
                if (!inter_slice_[k]) continue;
                const auto& t = bp_.interacting.terms[k];
                auto v = params_.values(*inter_slice_[k]);
                Coefficient c{"scale:" + t.label, {}, {v.begin(), v.end()}};
                if (t.kind == FeatureKind::Factor) {
                    c.labels.assign(t.levels.begin() + 1, t.levels.end());
                } else {
                    c.labels = {t.label};
                }
                out.push_back(std::move(c));
            }
            break;
        }
        case CoefType::Autoregressive: {
            if (bp_.atplags.empty()) throw ModelError("model has no autoregressive terms");
            for (std::size_t j = 0; j < bp_.atplags.size(); ++j) {
                out.push_back({bp_.atplags[j].label, {bp_.atplags[j].label}, {params_.values(ar_slice_[j])[0]}});
            }
            break;
        }
    }
    return out;
}

std::vector<double> CompiledModel::grid(std::size_t k) const {
    std::vector<double> g;
    const auto& b = bp_.basis;
    if (b.kind == BasisKind::Discrete) {
        for (int l = 1; l <= b.n_levels; ++l) g.push_back(l);
        return g;
    }
    if (b.kind == BasisKind::Count) {
        for (double y = 0.0; y <= std::floor(b.support.upper); y += 1.0) g.push_back(y);
        return g;
    }
    if (k == 0) throw ModelError("grid size must be positive");
    if (k == 1) return {b.support.lower};
    for (std::size_t j = 0; j < k; ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(k - 1);
        g.push_back(j + 1 == k ? b.support.upper : b.support.lower + t * (b.support.upper - b.support.lower));
    }
    return g;
}

std::string CompiledModel::grid_label(double y) const {
    if (bp_.basis.kind == BasisKind::Discrete) {
        const auto k = static_cast<std::size_t>(y);
        if (k >= 1 && k <= bp_.response_levels.size()) return bp_.response_levels[k - 1];
    }
    return format_double(y);
}

Prediction CompiledModel::predict(const Dataset& newdata, PredictType type, std::size_t grid_k,
                                  const std::vector<double>& q) const {
    Prediction out;
    out.type = type;
    const Design d = design(newdata, false);
    const auto th = theta();
    const auto& basis = bp_.basis;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    const bool at_response = newdata.has(bp_.spec.response) &&
                             (type == PredictType::Trafo || type == PredictType::Pdf ||
                              type == PredictType::Cdf || type == PredictType::Interaction ||
                              type == PredictType::TrafoDeriv);
    std::vector<double> response_points;
    if (at_response) {
        for (const auto& rv : encode(newdata)) response_points.push_back(rv.raw);
    }

    std::vector<double> points;
    if (!at_response) {
        if (!q.empty()) {
            for (double v : q) {
                if (basis.kind == BasisKind::Discrete) {
                    if (v != std::floor(v) || v < 1 || v > basis.n_levels) {
                        throw ModelError("q value " + format_double(v) + " is not a level index");
                    }
                } else if ((basis.kind == BasisKind::Bernstein || basis.kind == BasisKind::Count) &&
                           !basis.support.contains(v)) {
                    throw ModelError("q value " + format_double(v) + " outside the support [" +
                                     format_double(basis.support.lower) + ", " +
                                     format_double(basis.support.upper) + "]");
                }
            }
            points = q;
        } else {
            points = grid(grid_k);
        }
    }

    auto previous = [&](double y) -> std::optional<double> {
        if (basis.kind == BasisKind::Discrete) return y <= 1.0 ? std::nullopt : std::optional(y - 1.0);
        const double f = std::floor(y);
        return f <= 0.0 ? std::nullopt : std::optional(f - 1.0);
    };

    std::vector<BasisEval> evals, prev_evals;
    std::vector<char> has_prev;
    auto prepare = [&](const std::vector<double>& ys) {
        evals.clear();
        prev_evals.clear();
        has_prev.clear();
        for (double y : ys) {
            evals.push_back(basis.evaluate(y));
            // the top count of the support collects the upper tail
            if (basis.kind == BasisKind::Count && y >= std::floor(basis.support.upper)) {
                evals.back().upper_infinite = true;
            }
            auto p = discrete_response() ? previous(y) : std::nullopt;
            has_prev.push_back(p.has_value());
            prev_evals.push_back(p ? basis.evaluate(*p) : BasisEval{});
        }
    };
    if (!at_response) prepare(points);
    const auto labels = column_labels();

    for (std::size_t i = 0; i < d.rows; ++i) {
        const RowState st = row_state(d, i, th);
        if (type == PredictType::Shift) {
            out.rows.push_back({i, nan, "", st.shift + st.ar});
            continue;
        }
        if (type == PredictType::Terms) {
            if (intercept_slice_) out.rows.push_back({i, nan, "1", params_.values(*intercept_slice_)[0]});
            for (std::size_t k = 0; k < st.shift_terms.size(); ++k) {
                out.rows.push_back({i, nan, bp_.shifting.terms[k].label, st.shift_terms[k]});
            }
            if (!bp_.atplags.empty()) out.rows.push_back({i, nan, "atplag", st.ar});
            continue;
        }
        if (at_response) {
            try {
                prepare({response_points[i]});
            } catch (const BasisError& e) {
                throw ModelError(with_row(e.what(), i));
            }
        }
        const std::vector<double>& ys = at_response ? std::vector<double>{response_points[i]} : points;
        for (std::size_t j = 0; j < ys.size(); ++j) {
            const double y = ys[j];
            const std::string lab = grid_label(y);
            if (type == PredictType::Interaction) {
                if (evals[j].upper_infinite) {
                    for (const auto& cl : labels) out.rows.push_back({i, y, cl, std::numeric_limits<double>::infinity()});
                    continue;
                }
                for (std::size_t l = 0; l < st.b.size(); ++l) {
                    out.rows.push_back({i, y, labels[l], st.b[l] * dot(evals[j].value, std::span(th).subspan(l * m_, m_))});
                }
                continue;
            }
            const double h = h_at(evals[j], st, th);
            double v = 0.0;
            switch (type) {
                case PredictType::Trafo: v = h; break;
                case PredictType::TrafoDeriv: v = h_prime_at(evals[j], st, th); break;
                case PredictType::Cdf: v = cdf(bp_.latent, h); break;
                case PredictType::Pdf:
                    if (discrete_response()) {
                        const double lo = has_prev[j] ? cdf(bp_.latent, h_at(prev_evals[j], st, th)) : 0.0;
                        v = cdf(bp_.latent, h) - lo;
                    } else {
                        v = std::exp(log_pdf(bp_.latent, h)) * h_prime_at(evals[j], st, th);
                    }
                    break;
                default: break;
            }
            out.rows.push_back({i, y, lab, v});
        }
    }
    return out;
}

LossGraph CompiledModel::build_loss_graph() const {
    LossGraph lg;
    lg.graph = std::make_shared<grad::Graph>();
    grad::Graph& g = *lg.graph;
    const std::size_t L = bp_.interacting.columns;
    const std::size_t M = m_;
    const auto& basis = bp_.basis;
    std::size_t next_slot = n_slots_;

    const auto raw = g.param(theta_slice_, L * M);
    std::vector<grad::NodeId> cols;
    for (std::size_t l = 0; l < L; ++l) {
        auto r = L == 1 ? raw : g.slice(raw, l * M, M);
        grad::NodeId c;
        if (basis.cumulative_constraint()) {
            c = M == 1 ? r : g.cumsum(g.concat({g.slice(r, 0, 1), g.softplus(g.slice(r, 1, M - 1))}));
        } else if (basis.kind == BasisKind::Custom) {
            auto cb = find_custom_basis(basis.custom_name);
            c = cb->constraint ? cb->constraint(g, r) : r;
            if (g.size(c) != M) throw ModelError("custom constraint changed the coefficient count");
        } else {
            c = g.concat({g.slice(r, 0, 1), g.softplus(g.slice(r, 1, 1))});
        }
        cols.push_back(c);
    }
    const auto Theta = L == 1 ? cols[0] : g.concat(cols);
    g.set_label(Theta, "theta");

    const auto a_lo = g.input(kLoSlot, M);
    const auto a_hi = g.input(kHiSlot, M);
    const auto a_pr = g.input(kPrimeSlot, M);

    grad::NodeId b;
    const auto& it = bp_.interacting;
    if (it.scale) {
        std::vector<grad::NodeId> parts;
        for (std::size_t k = 0; k < it.terms.size(); ++k) {
            const auto& t = it.terms[k];
            if (t.kind == FeatureKind::Intercept) continue;
            const auto x = g.input(*inter_slot_[k], t.slot_width(true));
            if (t.kind == FeatureKind::Deep) {
                parts.push_back(network_graph(g, params_, interacting_prefix(t), t.net, x, next_slot, lg.dropout));
            } else {
                const auto s = *inter_slice_[k];
                parts.push_back(g.dot(x, g.param(s, params_.slice(s).size())));
            }
        }
        if (parts.empty()) {
            b = g.constant(1.0);
        } else {
            auto gamma = parts[0];
            for (std::size_t k = 1; k < parts.size(); ++k) gamma = g.add(gamma, parts[k]);
            b = g.exp(g.mul(gamma, g.constant(0.5)));
        }
    } else {
        std::vector<grad::NodeId> parts;
        for (std::size_t k = 0; k < it.terms.size(); ++k) {
            const auto& t = it.terms[k];
            if (t.kind == FeatureKind::Intercept) {
                parts.push_back(g.constant(1.0));
                continue;
            }
            const auto x = g.input(*inter_slot_[k], t.slot_width(true));
            if (t.kind == FeatureKind::Deep) {
                parts.push_back(g.softplus(
                    network_graph(g, params_, interacting_prefix(t), t.net, x, next_slot, lg.dropout)));
            } else {
                parts.push_back(x);
            }
        }
        b = parts.size() == 1 ? parts[0] : g.concat(parts);
    }
    g.set_label(b, "b(x)");

    std::vector<grad::NodeId> offset_parts;
    if (intercept_slice_) offset_parts.push_back(g.param(*intercept_slice_, 1));
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        const auto x = g.input(shift_slot_[k], t.slot_width(false));
        grad::NodeId c;
        switch (t.kind) {
            case FeatureKind::Deep:
                c = network_graph(g, params_, shift_prefix(t), t.net, x, next_slot, lg.dropout);
                break;
            case FeatureKind::Factor:
                c = g.gather(g.param(shift_slice_[k], t.n_coef()), x);
                break;
            case FeatureKind::Smooth:
                c = g.dot(x, g.param(shift_slice_[k], t.n_coef()));
                break;
            default:
                c = g.mul(x, g.param(shift_slice_[k], 1));
                break;
        }
        g.set_label(c, t.label);
        offset_parts.push_back(c);
    }
    for (std::size_t j = 0; j < bp_.atplags.size(); ++j) {
        const auto lag = g.input(ar_slot_[j], M);
        const auto h0 = g.dot(lag, cols[0]);
        auto c = g.mul(g.param(ar_slice_[j], 1), h0);
        g.set_label(c, bp_.atplags[j].label);
        offset_parts.push_back(c);
    }
    std::optional<grad::NodeId> offset;
    for (auto p : offset_parts) offset = offset ? g.add(*offset, p) : p;

    auto h_of = [&](grad::NodeId a) {
        auto h = g.dot(b, g.matvec(Theta, a, L));
        return offset ? g.add(h, *offset) : h;
    };
    const auto h_lo = h_of(a_lo);
    const auto h_hi = h_of(a_hi);
    const auto hp = g.dot(b, g.matvec(Theta, a_pr, L));
    g.set_label(h_lo, "h(lower)");
    g.set_label(h_hi, "h(upper)");
    g.set_label(hp, "h'");
    lg.h_hi = h_hi;
    lg.h_prime = hp;

    const auto lat = bp_.latent;
    auto exact = g.neg(g.add(g.log_pdf(lat, h_hi), g.log(g.clamp_min(hp, kProbFloor))));
    auto interval = g.neg(g.log(g.clamp_min(g.sub(g.cdf(lat, h_hi), g.cdf(lat, h_lo)), kProbFloor)));
    auto left = g.neg(g.log(g.clamp_min(g.cdf(lat, h_hi), kProbFloor)));
    auto right = g.neg(g.log(g.clamp_min(g.survival(lat, h_lo), kProbFloor)));
    g.set_label(exact, "nll exact");
    g.set_label(interval, "nll interval");
    g.set_label(left, "nll left");
    g.set_label(right, "nll right");
    lg.roots = {exact, interval, left, right};

    std::optional<grad::NodeId> smooth, lasso;
    for (std::size_t k = 0; k < bp_.shifting.terms.size(); ++k) {
        const auto& t = bp_.shifting.terms[k];
        if (t.kind == FeatureKind::Smooth && t.smooth.lambda > 0.0) {
            const std::size_t p = t.n_coef();
            const auto beta = g.param(shift_slice_[k], p);
            auto quad = g.dot(beta, g.matvec(g.constant(t.smooth.penalty), beta, p));
            auto term = g.mul(g.constant(t.smooth.lambda), quad);
            smooth = smooth ? g.add(*smooth, term) : term;
        } else if (t.kind == FeatureKind::Lasso) {
            const auto beta = g.param(shift_slice_[k], 1);
            auto mag = g.sub(g.sqrt(g.add(g.mul(beta, beta), g.constant(1e-8))), g.constant(1e-4));
            auto term = g.mul(g.constant(t.lambda), mag);
            lasso = lasso ? g.add(*lasso, term) : term;
        }
    }
    lg.smooth_penalty = smooth.value_or(-1);
    lg.lasso_penalty = lasso.value_or(-1);
    lg.data_slots = n_slots_;
    return lg;
}

}  // namespace trafo
