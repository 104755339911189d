#include "trafo/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace trafo {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEpsilon = 1e-7;

std::vector<std::size_t> matching_slices(const grad::ParameterStore& store, const std::string& pattern) {
    std::vector<std::size_t> out;
    const bool prefix = !pattern.empty() && pattern.back() == '*';
    const std::string stem = prefix ? pattern.substr(0, pattern.size() - 1) : pattern;
    for (std::size_t i = 0; i < store.slices().size(); ++i) {
        const auto& name = store.slice(i).name;
        if (prefix ? name.starts_with(stem) : name == stem) out.push_back(i);
    }
    if (out.empty()) throw FitError("no parameter slice matches '" + pattern + "'");
    return out;
}

// Runs fn(0..n-1) on up to worker_threads() threads; rethrows the first
// failure in index order.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(worker_threads(), n);
    std::vector<std::exception_ptr> errors(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct Monitor {
    double best = std::numeric_limits<double>::infinity();
    int wait = 0;

    // true when the value counts as an improvement
    bool update(double value, double min_delta) {
        if (value < best - min_delta) {
            best = value;
            wait = 0;
            return true;
        }
        ++wait;
        return false;
    }
};

double pick(const std::string& monitor, double train, std::optional<double> val) {
    if (monitor == "val_loss") return val.value_or(train);
    if (monitor == "loss") return train;
    throw FitError("unknown monitor '" + monitor + "' (use loss or val_loss)");
}

struct Hs {
    double lo = 0.0, hi = 0.0, prime = 0.0;
};

Hs member_h(const CompiledModel& m, const Design& d, std::size_t i, std::span<const double> theta) {
    const std::size_t M = m.basis_dim();
    const RowState st = m.row_state(d, i, theta);
    BasisEval lo, hi;
    lo.value.assign(d.row(CompiledModel::kLoSlot, i), d.row(CompiledModel::kLoSlot, i) + M);
    hi.value.assign(d.row(CompiledModel::kHiSlot, i), d.row(CompiledModel::kHiSlot, i) + M);
    hi.derivative.assign(d.row(CompiledModel::kPrimeSlot, i), d.row(CompiledModel::kPrimeSlot, i) + M);
    return {m.h_at(lo, st, theta), m.h_at(hi, st, theta), m.h_prime_at(hi, st, theta)};
}

}  // namespace

unsigned worker_threads() {
    if (const char* env = std::getenv("TRAFOFIT_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void apply_weight_control(CompiledModel& model, const WeightControl& wc) {
    auto& store = model.params();
    for (const auto& [key, value] : wc.warmstart) {
        std::string name = key;
        std::optional<std::size_t> index;
        if (const auto open = key.rfind('['); open != std::string::npos && key.back() == ']') {
            name = key.substr(0, open);
            const std::string num = key.substr(open + 1, key.size() - open - 2);
            char* end = nullptr;
            const long k = std::strtol(num.c_str(), &end, 10);
            if (num.empty() || *end != '\0' || k < 1) throw FitError("bad warmstart index in '" + key + "'");
            index = static_cast<std::size_t>(k - 1);
        }
        const auto slice = store.find(name);
        if (!slice) throw FitError("warmstart name '" + name + "' matches no coefficient");
        auto vals = store.values(*slice);
        if (index) {
            if (*index >= vals.size()) throw FitError("warmstart index out of range in '" + key + "'");
            vals[*index] = value;
        } else {
            std::fill(vals.begin(), vals.end(), value);
        }
    }
    for (const auto& pattern : wc.frozen) {
        for (auto s : matching_slices(store, pattern)) store.slice(s).trainable = false;
    }
    for (const auto& [pattern, mult] : wc.lr_multiplier) {
        if (!(mult >= 0.0) || !std::isfinite(mult)) throw FitError("learning-rate multiplier must be finite and >= 0");
        for (auto s : matching_slices(store, pattern)) store.slice(s).lr_multiplier = mult;
    }
}

FitHistory fit(CompiledModel& model, const Dataset& data, const FitConfig& config,
               const WeightControl& wc, const Dataset* validation) {
    if (config.epochs < 0) throw FitError("epochs must be nonnegative");
    if (config.batch_size < 1) throw FitError("batch_size must be at least 1");
    if (!(config.validation_split >= 0.0 && config.validation_split < 1.0)) {
        throw FitError("validation_split must lie in [0, 1)");
    }
    if (!(config.learning_rate > 0.0)) throw FitError("learning_rate must be positive");
    if (data.rows() == 0) throw FitError("no training data");
    apply_weight_control(model, wc);

    std::mt19937_64 rng(config.seed);
    std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    const Design dd = model.design(data, true);
    std::vector<std::size_t> train_rows(dd.rows);
    std::iota(train_rows.begin(), train_rows.end(), 0);
    std::vector<std::size_t> val_rows;
    std::optional<Design> vd;
    if (validation) {
        vd = model.design(*validation, true);
        val_rows.resize(vd->rows);
        std::iota(val_rows.begin(), val_rows.end(), 0);
    } else if (config.validation_split > 0.0) {
        std::shuffle(train_rows.begin(), train_rows.end(), rng);
        const auto split_at = static_cast<std::size_t>(static_cast<double>(dd.rows) * (1.0 - config.validation_split));
        if (split_at == 0) throw FitError("validation split leaves no training rows");
        val_rows.assign(train_rows.begin() + static_cast<std::ptrdiff_t>(split_at), train_rows.end());
        train_rows.resize(split_at);
    }
    const Design& val_design = vd ? *vd : dd;
    const bool has_val = !val_rows.empty();

    auto& store = model.params();
    const std::size_t P = store.size();
    std::vector<double> lr_scale(P, 0.0);
    bool any_trainable = false;
    for (const auto& s : store.slices()) {
        if (!s.trainable) continue;
        any_trainable = true;
        for (std::size_t j = 0; j < s.size(); ++j) lr_scale[s.offset + j] = s.lr_multiplier;
    }

    BatchObjective objective(model);
    const bool dropout = !objective.graph().dropout.empty();
    std::vector<double> grad(P, 0.0), m1(P, 0.0), m2(P, 0.0);
    std::uint64_t t = 0;
    double lr = config.learning_rate;

    FitHistory hist;
    Monitor es_mon, plateau_mon;
    double best_monitored = std::numeric_limits<double>::infinity();
    std::vector<double> best_params;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) std::shuffle(train_rows.begin(), train_rows.end(), rng);
        double sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < train_rows.size(); start += config.batch_size, ++batch_index) {
            const std::size_t len = std::min(config.batch_size, train_rows.size() - start);
            std::span<const std::size_t> batch(train_rows.data() + start, len);
            const double loss = objective.evaluate(dd, batch, grad, dropout ? &dropout_rng : nullptr);
            if (!std::isfinite(loss)) {
                throw FitError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index + 1));
            }
            sum += loss * static_cast<double>(len);
            if (!any_trainable) continue;
            ++t;
            const double td = static_cast<double>(t);
            const double corr = std::sqrt(1.0 - std::pow(kBeta2, td)) / (1.0 - std::pow(kBeta1, td));
            auto& w = store.flat();
            for (std::size_t j = 0; j < P; ++j) {
                if (lr_scale[j] == 0.0) continue;
                const double g = grad[j];
                m1[j] = kBeta1 * m1[j] + (1.0 - kBeta1) * g;
                m2[j] = kBeta2 * m2[j] + (1.0 - kBeta2) * g * g;
                const double step = (lr * lr_scale[j]) / (1.0 + config.decay * td) * corr;
                w[j] -= step * m1[j] / (std::sqrt(m2[j]) + kEpsilon);
            }
        }
        const double train_loss = sum / static_cast<double>(train_rows.size());
        std::optional<double> val_loss;
        if (has_val) {
            val_loss = total_loss(model, val_design, val_rows);
            if (!std::isfinite(*val_loss)) {
                throw FitError("non-finite validation loss at epoch " + std::to_string(epoch));
            }
            hist.val_loss.push_back(*val_loss);
        }
        hist.train_loss.push_back(train_loss);
        hist.lr.push_back(lr / (1.0 + config.decay * static_cast<double>(t)));

        const double monitored = val_loss.value_or(train_loss);
        if (monitored < best_monitored) {
            best_monitored = monitored;
            hist.best_epoch = epoch;
        }
        if (config.plateau) {
            const auto& p = *config.plateau;
            plateau_mon.update(pick(p.monitor, train_loss, val_loss), p.min_delta);
            if (plateau_mon.wait >= p.patience) {
                lr = std::max(lr * p.factor, p.min_lr);
                plateau_mon.wait = 0;
            }
        }
        if (config.early_stopping) {
            const auto& e = *config.early_stopping;
            if (es_mon.update(pick(e.monitor, train_loss, val_loss), e.min_delta)) {
                if (e.restore_best) best_params = store.flat();
            } else if (es_mon.wait >= e.patience) {
                hist.stopped_early = true;
                break;
            }
        }
    }
    if (config.early_stopping && config.early_stopping->restore_best && !best_params.empty()) {
        store.flat() = best_params;
    }
    hist.floored = objective.floored();
    return hist;
}

EnsembleModel ensemble(const ModelBlueprint& bp, const Dataset& data, int n_members,
                       const FitConfig& config, const WeightControl& wc, bool vary_seeds) {
    if (n_members < 2) throw FitError("an ensemble needs at least 2 members");
    const auto n = static_cast<std::size_t>(n_members);
    std::vector<std::optional<CompiledModel>> models(n);
    std::vector<FitHistory> hist(n);
    parallel_for(n, [&](std::size_t m) {
        ModelBlueprint b = bp;
        FitConfig c = config;
        if (vary_seeds) {
            b.seed += m;
            c.seed += m;
        }
        try {
            models[m].emplace(std::move(b));
            hist[m] = fit(*models[m], data, c, wc);
        } catch (const std::exception& e) {
            throw FitError("ensemble member " + std::to_string(m + 1) + ": " + e.what());
        }
    });
    EnsembleModel out;
    for (auto& m : models) out.members.push_back(std::move(*m));
    out.histories = std::move(hist);
    return out;
}

Prediction ensemble_predict(const EnsembleModel& ens, const Dataset& newdata, PredictType type,
                            EnsembleMode mode, std::size_t grid_k, const std::vector<double>& q) {
    if (ens.members.empty()) throw FitError("empty ensemble");
    const auto& first = ens.members.front();
    const double nm = static_cast<double>(ens.members.size());
    auto average = [&](PredictType t, const Dataset& nd, const std::vector<double>& qq) {
        Prediction acc = first.predict(nd, t, grid_k, qq);
        for (std::size_t m = 1; m < ens.members.size(); ++m) {
            const Prediction p = ens.members[m].predict(nd, t, grid_k, qq);
            for (std::size_t r = 0; r < acc.rows.size(); ++r) acc.rows[r].value += p.rows[r].value;
        }
        for (auto& r : acc.rows) r.value /= nm;
        return acc;
    };
    const bool curve = type == PredictType::Pdf || type == PredictType::Cdf;
    if (mode == EnsembleMode::Density || !curve) return average(type, newdata, q);

    const Latent lat = first.blueprint().latent;
    if (!first.discrete_response()) {
        Prediction h = average(PredictType::Trafo, newdata, q);
        if (type == PredictType::Cdf) {
            for (auto& r : h.rows) r.value = cdf(lat, r.value);
        } else {
            const Prediction hp = average(PredictType::TrafoDeriv, newdata, q);
            for (std::size_t r = 0; r < h.rows.size(); ++r) {
                h.rows[r].value = std::exp(log_pdf(lat, h.rows[r].value)) * hp.rows[r].value;
            }
        }
        h.type = type;
        return h;
    }

    // discrete: average h over every level, then difference the CDF
    Dataset covariates = newdata;
    const auto& resp = first.blueprint().spec.response;
    std::vector<double> at;
    const bool at_response = newdata.has(resp);
    if (at_response) {
        for (const auto& rv : first.encode(newdata)) at.push_back(rv.raw);
        covariates.remove(resp);
    }
    const std::vector<double> levels = first.grid(grid_k);
    const Prediction h = average(PredictType::Trafo, covariates, levels);
    const std::size_t nl = levels.size();
    Prediction out;
    out.type = type;
    const std::size_t rows = nl ? h.rows.size() / nl : 0;
    auto level_pos = [&](double y) -> std::optional<std::size_t> {
        auto it = std::find(levels.begin(), levels.end(), y);
        if (it == levels.end()) return std::nullopt;
        return static_cast<std::size_t>(it - levels.begin());
    };
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> ys;
        if (at_response) ys = {at[i]};
        else if (!q.empty()) ys = q;
        else ys = levels;
        for (double y : ys) {
            const auto pos = level_pos(std::floor(y));
            if (!pos) throw FitError("value " + format_double(y) + " outside the response grid");
            const double F = cdf(lat, h.rows[i * nl + *pos].value);
            double v = F;
            if (type == PredictType::Pdf) v = F - (*pos > 0 ? cdf(lat, h.rows[i * nl + *pos - 1].value) : 0.0);
            out.rows.push_back({i, y, first.grid_label(y), v});
        }
    }
    return out;
}

EnsembleLogLik ensemble_log_lik(const EnsembleModel& ens, const Dataset& data, ConvertFun convert) {
    if (ens.members.empty()) throw FitError("empty ensemble");
    const Design d = ens.members.front().design(data, true);
    const std::size_t n = d.rows;
    const std::size_t M = ens.members.size();
    if (n == 0) throw FitError("log-likelihood of an empty dataset");
    std::vector<std::vector<double>> nll(M);
    std::vector<std::vector<double>> thetas(M);
    for (std::size_t m = 0; m < M; ++m) {
        nll[m] = nll_vector(ens.members[m], d);
        thetas[m] = ens.members[m].theta();
    }
    auto reduce = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return convert == ConvertFun::Mean ? s / static_cast<double>(n) : -s;
    };

    EnsembleLogLik r;
    r.convert = convert;
    for (std::size_t m = 0; m < M; ++m) r.members.push_back(reduce(nll[m]));
    r.mean = std::accumulate(r.members.begin(), r.members.end(), 0.0) / static_cast<double>(M);

    const Latent lat = ens.members.front().blueprint().latent;
    std::vector<double> trafo(n);
    r.contributions.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < M; ++m) mx = std::max(mx, -nll[m][i]);
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += std::exp(-nll[m][i] - mx);
        r.contributions[i] = -(mx + std::log(s / static_cast<double>(M)));

        const auto status = d.response[i].status;
        if (status == Censoring::None) {
            trafo[i] = 0.0;
            continue;
        }
        Hs avg;
        for (std::size_t m = 0; m < M; ++m) {
            const Hs h = member_h(ens.members[m], d, i, thetas[m]);
            avg.lo += h.lo / static_cast<double>(M);
            avg.hi += h.hi / static_cast<double>(M);
            avg.prime += h.prime / static_cast<double>(M);
        }
        trafo[i] = nll_from_h(lat, status, avg.lo, avg.hi, avg.prime);
    }
    r.ensemble = reduce(r.contributions);
    r.transformation = reduce(trafo);
    return r;
}

std::vector<CvFold> make_folds(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2) throw FitError("cross-validation needs at least 2 folds");
    const auto K = static_cast<std::size_t>(k);
    if (K > n) throw FitError("more folds (" + std::to_string(k) + ") than rows (" + std::to_string(n) + ")");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<CvFold> folds(K);
    std::size_t start = 0;
    for (std::size_t f = 0; f < K; ++f) {
        const std::size_t size = n / K + (f < n % K ? 1 : 0);
        auto& fold = folds[f];
        fold.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                               perm.begin() + static_cast<std::ptrdiff_t>(start + size));
        for (std::size_t j = 0; j < n; ++j) {
            if (j < start || j >= start + size) fold.train.push_back(perm[j]);
        }
        std::sort(fold.validation.begin(), fold.validation.end());
        std::sort(fold.train.begin(), fold.train.end());
        start += size;
    }
    return folds;
}

CvResult cross_validate(const ModelBlueprint& bp, const Dataset& data, const std::vector<CvFold>& folds,
                        const FitConfig& config, const WeightControl& wc) {
    if (folds.empty()) throw FitError("no cross-validation folds");
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        if (fold.train.empty() || fold.validation.empty()) {
            throw FitError("fold " + std::to_string(f + 1) + " has an empty train or validation set");
        }
        for (const auto* v : {&fold.train, &fold.validation})
            for (auto i : *v)
                if (i >= data.rows()) throw FitError("fold " + std::to_string(f + 1) + " index out of range");
    }
    CvResult res;
    res.folds.resize(folds.size());
    parallel_for(folds.size(), [&](std::size_t f) {
        const Dataset train = data.subset(folds[f].train);
        const Dataset val = data.subset(folds[f].validation);
        CompiledModel model(bp);
        try {
            res.folds[f] = fit(model, train, config, wc, &val);
        } catch (const std::exception& e) {
            throw FitError("fold " + std::to_string(f + 1) + ": " + e.what());
        }
    });
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& h : res.folds) len = std::min(len, h.epochs());
    res.mean_train.assign(len, 0.0);
    res.mean_val.assign(len, 0.0);
    const double nf = static_cast<double>(res.folds.size());
    for (const auto& h : res.folds) {
        for (std::size_t e = 0; e < len; ++e) {
            res.mean_train[e] += h.train_loss[e] / nf;
            res.mean_val[e] += h.val_loss[e] / nf;
        }
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < len; ++e) {
        if (res.mean_val[e] < best) {
            best = res.mean_val[e];
            res.best_epoch = static_cast<int>(e + 1);
        }
    }
    return res;
}

}  // namespace trafo
