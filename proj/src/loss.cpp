#include "trafo/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trafo {

namespace {

double floored_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

BasisEval from_slot(const Design& d, std::size_t slot, std::size_t i, std::size_t m) {
    BasisEval a;
    a.value.assign(d.row(slot, i), d.row(slot, i) + m);
    return a;
}

}  // namespace

double nll_from_h(Latent d, Censoring status, double h_lo, double h_hi, double h_prime) {
    switch (status) {
        case Censoring::Exact: return -(log_pdf(d, h_hi) + floored_log(h_prime));
        case Censoring::Interval: return -floored_log(cdf(d, h_hi) - cdf(d, h_lo));
        case Censoring::Left: return -floored_log(cdf(d, h_hi));
        case Censoring::Right: return -floored_log(survival(d, h_lo));
        case Censoring::None: return 0.0;
    }
    return 0.0;
}

double nll_contribution(const CompiledModel& model, const Design& d, std::size_t i,
                        std::span<const double> theta) {
    if (!d.has_response) throw LossError("design carries no response");
    const auto& rv = d.response[i];
    if (rv.status == Censoring::None) return 0.0;
    const std::size_t m = model.basis_dim();
    const RowState st = model.row_state(d, i, theta);
    double h_lo = 0.0, h_hi = 0.0, hp = 0.0;
    if (rv.status == Censoring::Interval || rv.status == Censoring::Right) {
        h_lo = model.h_at(from_slot(d, CompiledModel::kLoSlot, i, m), st, theta);
    }
    if (rv.status != Censoring::Right) {
        h_hi = model.h_at(from_slot(d, CompiledModel::kHiSlot, i, m), st, theta);
    }
    if (rv.status == Censoring::Exact) {
        BasisEval a;
        a.derivative.assign(d.row(CompiledModel::kPrimeSlot, i), d.row(CompiledModel::kPrimeSlot, i) + m);
        hp = model.h_prime_at(a, st, theta);
    }
    const double v = nll_from_h(model.blueprint().latent, rv.status, h_lo, h_hi, hp);
    if (std::isnan(v)) throw LossError("NaN loss at observation " + std::to_string(i + 1));
    return v;
}

double nll_contribution(const CompiledModel& model, const ResponseValue& rv, const Design& d,
                        std::size_t i) {
    const auto theta = model.theta();
    const RowState st = model.row_state(d, i, theta);
    const auto& basis = model.blueprint().basis;
    double h_lo = 0.0, h_hi = 0.0, hp = 0.0;
    if (rv.status == Censoring::Interval || rv.status == Censoring::Right) {
        h_lo = model.h_at(basis.evaluate(rv.lower), st, theta);
    }
    if (rv.status == Censoring::Exact || rv.status == Censoring::Interval || rv.status == Censoring::Left) {
        const auto a = basis.evaluate(rv.upper);
        h_hi = model.h_at(a, st, theta);
        if (rv.status == Censoring::Exact) hp = model.h_prime_at(a, st, theta);
    }
    return nll_from_h(model.blueprint().latent, rv.status, h_lo, h_hi, hp);
}

std::vector<double> nll_vector(const CompiledModel& model, const Design& d) {
    const auto theta = model.theta();
    std::vector<double> out(d.rows);
    for (std::size_t i = 0; i < d.rows; ++i) out[i] = nll_contribution(model, d, i, theta);
    return out;
}

double total_loss(const CompiledModel& model, const Design& d, std::span<const std::size_t> rows) {
    if (rows.empty()) throw LossError("empty batch");
    const auto theta = model.theta();
    double s = 0.0;
    for (auto i : rows) s += nll_contribution(model, d, i, theta);
    const auto n = static_cast<double>(rows.size());
    return s / n + model.smooth_penalty() / n + model.lasso_penalty();
}

double total_loss(const CompiledModel& model, const Design& d) {
    std::vector<std::size_t> rows(d.rows);
    for (std::size_t i = 0; i < d.rows; ++i) rows[i] = i;
    return total_loss(model, d, rows);
}

ConvertFun convert_fun_from_string(const std::string& s) {
    if (s == "loglik" || s == "sum") return ConvertFun::LogLik;
    if (s == "identity") return ConvertFun::Identity;
    if (s == "mean") return ConvertFun::Mean;
    throw LossError("unknown convert function '" + s + "'");
}

LogLikResult log_lik(const CompiledModel& model, const Dataset& data, ConvertFun convert) {
    const Design d = model.design(data, true);
    LogLikResult r;
    r.convert = convert;
    r.contributions = nll_vector(model, d);
    double s = 0.0;
    for (double v : r.contributions) s += v;
    switch (convert) {
        case ConvertFun::LogLik: r.value = -s; break;
        case ConvertFun::Mean:
            if (r.contributions.empty()) throw LossError("log-likelihood of an empty dataset");
            r.value = s / static_cast<double>(r.contributions.size());
            break;
        case ConvertFun::Identity: r.value = -s; break;
    }
    return r;
}

BatchObjective::BatchObjective(const CompiledModel& model)
    : model_(model), lg_(model.build_loss_graph()), exec_(*lg_.graph, lg_.roots) {
    inputs_.assign(lg_.graph->input_slots(), nullptr);
    for (const auto& ds : lg_.dropout) masks_.emplace_back(ds.width, 1.0);
}

double BatchObjective::evaluate(const Design& d, std::span<const std::size_t> rows,
                                std::span<double> gradient, std::mt19937_64* dropout_rng) {
    if (rows.empty()) throw LossError("empty batch");
    if (!d.has_response) throw LossError("design carries no response");
    const auto& params = model_.params();
    exec_.forward_static(params);
    const auto n = static_cast<double>(rows.size());
    const double w = 1.0 / n;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    double total = 0.0;
    for (auto i : rows) {
        const auto status = d.response[i].status;
        if (status == Censoring::None) continue;
        for (std::size_t s = 0; s < lg_.data_slots && s < inputs_.size(); ++s) {
            inputs_[s] = d.widths[s] ? d.row(s, i) : nullptr;
        }
        for (std::size_t k = 0; k < lg_.dropout.size(); ++k) {
            const auto& ds = lg_.dropout[k];
            auto& mask = masks_[k];
            if (dropout_rng) {
                const double keep = 1.0 - ds.rate;
                for (auto& v : mask) v = unif(*dropout_rng) < keep ? 1.0 / keep : 0.0;
            } else {
                std::fill(mask.begin(), mask.end(), 1.0);
            }
            inputs_[ds.slot] = mask.data();
        }
        const auto r = static_cast<std::size_t>(status);
        double v;
        try {
            v = exec_.forward(r, inputs_);
        } catch (const grad::GradError& e) {
            throw LossError(std::string(e.what()) + " at observation " + std::to_string(i + 1));
        }
        total += v;
        exec_.backward(r, w);
    }
    double penalty = 0.0;
    if (lg_.smooth_penalty >= 0) {
        penalty += exec_.scalar(lg_.smooth_penalty) * w;
        exec_.seed_static(lg_.smooth_penalty, w);
    }
    if (lg_.lasso_penalty >= 0) {
        penalty += exec_.scalar(lg_.lasso_penalty);
        exec_.seed_static(lg_.lasso_penalty, 1.0);
    }
    std::fill(gradient.begin(), gradient.end(), 0.0);
    exec_.backward_static(params, gradient);
    return total * w + penalty;
}

}  // namespace trafo
