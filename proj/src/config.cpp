#include "trafo/config.hpp"

#include <fstream>
#include <set>

namespace trafo {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    std::string bad;
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) bad += (bad.empty() ? "" : ", ") + k;
    }
    if (!bad.empty()) throw ConfigError("unknown key(s) in " + where + ": " + bad);
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

EarlyStopping parse_early(const json& j) {
    check_keys(j, {"monitor", "patience", "restore_best", "min_delta"}, "early_stopping");
    EarlyStopping e;
    if (j.contains("monitor")) e.monitor = get<std::string>(j, "monitor", "early_stopping");
    if (j.contains("patience")) e.patience = get<int>(j, "patience", "early_stopping");
    if (j.contains("restore_best")) e.restore_best = get<bool>(j, "restore_best", "early_stopping");
    if (j.contains("min_delta")) e.min_delta = get<double>(j, "min_delta", "early_stopping");
    if (e.patience < 1) throw ConfigError("early_stopping.patience must be >= 1");
    return e;
}

ReduceLROnPlateau parse_plateau(const json& j) {
    const std::string w = "reduce_lr_on_plateau";
    check_keys(j, {"monitor", "factor", "patience", "min_delta", "min_lr"}, w);
    ReduceLROnPlateau p;
    if (j.contains("monitor")) p.monitor = get<std::string>(j, "monitor", w);
    if (j.contains("factor")) p.factor = get<double>(j, "factor", w);
    if (j.contains("patience")) p.patience = get<int>(j, "patience", w);
    if (j.contains("min_delta")) p.min_delta = get<double>(j, "min_delta", w);
    if (j.contains("min_lr")) p.min_lr = get<double>(j, "min_lr", w);
    if (!(p.factor > 0.0 && p.factor < 1.0)) throw ConfigError(w + ".factor must be in (0, 1)");
    if (p.patience < 1) throw ConfigError(w + ".patience must be >= 1");
    return p;
}

FitConfig parse_fit(const json& j) {
    check_keys(j,
               {"epochs", "batch_size", "validation_split", "learning_rate", "decay", "seed", "shuffle",
                "early_stopping", "reduce_lr_on_plateau"},
               "fit");
    FitConfig f;
    if (j.contains("epochs")) f.epochs = get<int>(j, "epochs", "fit");
    if (j.contains("batch_size")) f.batch_size = get<std::size_t>(j, "batch_size", "fit");
    if (j.contains("validation_split")) f.validation_split = get<double>(j, "validation_split", "fit");
    if (j.contains("learning_rate")) f.learning_rate = get<double>(j, "learning_rate", "fit");
    if (j.contains("decay")) f.decay = get<double>(j, "decay", "fit");
    if (j.contains("seed")) f.seed = get<std::uint64_t>(j, "seed", "fit");
    if (j.contains("shuffle")) f.shuffle = get<bool>(j, "shuffle", "fit");
    if (j.contains("early_stopping")) f.early_stopping = parse_early(j["early_stopping"]);
    if (j.contains("reduce_lr_on_plateau")) f.plateau = parse_plateau(j["reduce_lr_on_plateau"]);
    if (f.epochs < 1) throw ConfigError("fit.epochs must be >= 1");
    if (f.batch_size < 1) throw ConfigError("fit.batch_size must be >= 1");
    if (!(f.validation_split >= 0.0 && f.validation_split < 1.0)) {
        throw ConfigError("fit.validation_split must be in [0, 1)");
    }
    if (!(f.learning_rate > 0.0)) throw ConfigError("fit.learning_rate must be positive");
    if (f.decay < 0.0) throw ConfigError("fit.decay must be nonnegative");
    return f;
}

WeightControl parse_weights(const json& j) {
    check_keys(j, {"warmstart", "frozen", "lr_multiplier"}, "weights");
    WeightControl w;
    if (j.contains("warmstart")) w.warmstart = get<std::map<std::string, double>>(j, "warmstart", "weights");
    if (j.contains("frozen")) {
        for (const auto& s : get<std::vector<std::string>>(j, "frozen", "weights")) w.frozen.insert(s);
    }
    if (j.contains("lr_multiplier")) {
        w.lr_multiplier = get<std::map<std::string, double>>(j, "lr_multiplier", "weights");
    }
    return w;
}

NetworkMap parse_networks(const json& j) {
    if (!j.is_object()) throw ConfigError("networks must be an object");
    NetworkMap out;
    for (const auto& [name, layers] : j.items()) {
        if (!layers.is_array() || layers.empty()) {
            throw ConfigError("networks." + name + " must be a nonempty array of layers");
        }
        NetworkConfig net;
        for (const auto& l : layers) {
            const std::string w = "networks." + name;
            check_keys(l, {"units", "activation", "dropout"}, w);
            LayerSpec spec;
            spec.units = get<std::size_t>(l, "units", w);
            if (l.contains("activation")) {
                try {
                    spec.activation = activation_from_string(get<std::string>(l, "activation", w));
                } catch (const std::exception& e) {
                    throw ConfigError(w + ": " + e.what());
                }
            }
            if (l.contains("dropout")) spec.dropout = get<double>(l, "dropout", w);
            net.push_back(spec);
        }
        out[name] = net;
    }
    return out;
}

}  // namespace

ModelSpec RunConfig::spec() const {
    ParseOptions po;
    for (const auto& [name, net] : model.networks) {
        if (name != "deep" && name != "nn") po.network_names.insert(name);
    }
    if (formula) return parse_formula(*formula, po);
    // a bare right-hand side is read as the one-sided formula "~ rhs"
    auto one_sided = [](const std::string& s) {
        return s.find('~') == std::string::npos ? "~ " + s : s;
    };
    return parse_ontram(one_sided(*response), one_sided(intercept.value_or("1")),
                        one_sided(shift.value_or("1")), po);
}

RunConfig parse_run_config(const json& j) {
    check_keys(j,
               {"formula", "response", "intercept", "shift", "model", "basis", "latent", "response_type",
                "order_bsp", "support", "custom_basis", "categorical", "event", "upper", "networks", "fit",
                "weights", "lags", "seed", "members", "vary_seeds", "folds", "cv_indices", "ensemble_mode",
                "grid_k", "convert"},
               "config");
    RunConfig c;
    const std::string w = "config";
    try {
        if (j.contains("formula")) c.formula = get<std::string>(j, "formula", w);
        if (j.contains("response")) c.response = get<std::string>(j, "response", w);
        if (j.contains("intercept")) c.intercept = get<std::string>(j, "intercept", w);
        if (j.contains("shift")) c.shift = get<std::string>(j, "shift", w);
        if (c.formula && (c.response || c.intercept || c.shift)) {
            throw ConfigError("give either formula or response/intercept/shift, not both");
        }
        if (!c.formula && !c.response) throw ConfigError("config needs a formula or a response");

        if (j.contains("model")) {
            const auto alias = get<std::string>(j, "model", w);
            if (!model_alias(alias)) throw ConfigError("unknown model '" + alias + "'");
            if (j.contains("basis") || j.contains("latent")) {
                throw ConfigError("model alias and explicit basis/latent are mutually exclusive");
            }
            c.model.alias = alias;
        }
        if (j.contains("basis")) c.model.trafo.basis = basis_kind_from_string(get<std::string>(j, "basis", w));
        if (j.contains("latent")) c.model.trafo.latent = latent_from_string(get<std::string>(j, "latent", w));
        if (j.contains("response_type")) {
            c.model.response_type = response_type_from_string(get<std::string>(j, "response_type", w));
        }
        if (j.contains("order_bsp")) {
            c.model.trafo.order_bsp = get<int>(j, "order_bsp", w);
            if (*c.model.trafo.order_bsp < 1) throw ConfigError("order_bsp must be >= 1");
        }
        if (j.contains("support")) {
            const auto s = get<std::vector<double>>(j, "support", w);
            if (s.size() != 2 || !(s[0] < s[1])) throw ConfigError("support must be [lower, upper] with lower < upper");
            c.model.trafo.support = Support{s[0], s[1]};
        }
        if (j.contains("custom_basis")) c.model.trafo.custom_basis = get<std::string>(j, "custom_basis", w);
        if (j.contains("event")) c.model.event_column = get<std::string>(j, "event", w);
        if (j.contains("upper")) c.model.upper_column = get<std::string>(j, "upper", w);
        if (j.contains("networks")) c.model.networks = parse_networks(j["networks"]);
        if (j.contains("seed")) {
            c.model.seed = get<std::uint64_t>(j, "seed", w);
            c.fit.seed = c.model.seed;
        }
        if (j.contains("categorical")) {
            const auto& cat = j["categorical"];
            if (cat.is_array()) {
                for (const auto& n : cat) c.csv.categorical[n.get<std::string>()] = std::nullopt;
            } else if (cat.is_object()) {
                for (const auto& [n, levels] : cat.items()) {
                    if (levels.is_null()) {
                        c.csv.categorical[n] = std::nullopt;
                    } else {
                        c.csv.categorical[n] = levels.get<std::vector<std::string>>();
                    }
                }
            } else {
                throw ConfigError("categorical must be a list of names or an object of level lists");
            }
        }
        if (j.contains("fit")) {
            const auto seed = c.fit.seed;
            c.fit = parse_fit(j["fit"]);
            if (!j["fit"].contains("seed")) c.fit.seed = seed;
        }
        if (j.contains("weights")) c.weights = parse_weights(j["weights"]);
        if (j.contains("lags")) {
            c.lags = get<int>(j, "lags", w);
            if (c.lags < 0) throw ConfigError("lags must be >= 0");
        }
        if (j.contains("members")) {
            c.members = get<int>(j, "members", w);
            if (c.members < 2) throw ConfigError("members must be >= 2");
        }
        if (j.contains("vary_seeds")) c.vary_seeds = get<bool>(j, "vary_seeds", w);
        if (j.contains("folds")) {
            c.folds = get<int>(j, "folds", w);
            if (c.folds < 2) throw ConfigError("folds must be >= 2");
        }
        if (j.contains("cv_indices")) {
            for (const auto& fold : get<std::vector<std::vector<std::int64_t>>>(j, "cv_indices", w)) {
                std::vector<std::size_t> idx;
                for (auto k : fold) {
                    if (k < 1) throw ConfigError("cv_indices are 1-based row numbers");
                    idx.push_back(static_cast<std::size_t>(k - 1));
                }
                c.cv_indices.push_back(std::move(idx));
            }
        }
        if (j.contains("ensemble_mode")) {
            const auto m = get<std::string>(j, "ensemble_mode", w);
            if (m == "density") {
                c.ensemble_mode = EnsembleMode::Density;
            } else if (m == "transformation") {
                c.ensemble_mode = EnsembleMode::Transformation;
            } else {
                throw ConfigError("ensemble_mode must be 'density' or 'transformation'");
            }
        }
        if (j.contains("grid_k")) {
            c.grid_k = get<std::size_t>(j, "grid_k", w);
            if (c.grid_k < 2) throw ConfigError("grid_k must be >= 2");
        }
        if (j.contains("convert")) c.convert = convert_fun_from_string(get<std::string>(j, "convert", w));
    } catch (const ConfigError&) {
        throw;
    } catch (const FormulaError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace trafo
