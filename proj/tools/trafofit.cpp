// trafofit: command-line front end for transformation models.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "trafo/config.hpp"
#include "trafo/dataset.hpp"
#include "trafo/persist.hpp"
#include "trafo/simulate.hpp"
#include "trafo/timeseries.hpp"
#include "trafo/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trafo;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Args {
    std::string config;
    std::string data;
    std::string out;
    std::string model;
    std::string type = "cdf";
    std::string mode;
    std::string convert;
    std::optional<std::size_t> grid_k;
    std::vector<double> q;
    std::optional<int> members;
    std::optional<int> folds;
    std::optional<int> lags;
    std::optional<std::uint64_t> seed;
    // simulate
    std::string generator;
    SimulateOptions sim;
};

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    return f;
}

// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    auto f = open_out(path);
    f << text;
}

fs::path out_dir(const Args& a) {
    fs::path d = a.out.empty() ? fs::path(".") : fs::path(a.out);
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create directory '" + d.string() + "': " + ec.message());
    return d;
}

RunConfig load_config(const Args& a) {
    if (a.config.empty()) throw UsageError("--config is required");
    RunConfig c = load_run_config(a.config);
    if (a.seed) {
        c.model.seed = *a.seed;
        c.fit.seed = *a.seed;
    }
    if (a.lags) c.lags = *a.lags;
    if (a.members) {
        if (*a.members < 2) throw UsageError("--members must be at least 2");
        c.members = *a.members;
    }
    if (a.folds) {
        if (*a.folds < 2) throw UsageError("--folds must be at least 2");
        c.folds = *a.folds;
    }
    if (a.grid_k) c.grid_k = *a.grid_k;
    return c;
}

Dataset load_data(const std::string& path, const CsvOptions& opts) {
    if (path.empty()) throw UsageError("--data is required");
    return read_csv(path, opts);
}

Dataset with_lags(Dataset data, const std::string& response, int lags) {
    if (lags <= 0) return data;
    return build_lags(data, response, lags);
}

// Categorical declarations implied by a fitted model, merged with any config.
CsvOptions csv_for(const ModelBlueprint& bp, const std::optional<RunConfig>& cfg) {
    CsvOptions o;
    if (cfg) o = cfg->csv;
    for (const auto* side : {&bp.interacting.terms, &bp.shifting.terms}) {
        for (const auto& t : *side) {
            if (t.kind == FeatureKind::Factor) o.categorical[t.vars.front()] = t.levels;
        }
    }
    if (bp.response_type == ResponseType::Ordinal) o.categorical[bp.spec.response] = bp.response_levels;
    return o;
}

std::string history_csv(const FitHistory& h) {
    std::ostringstream s;
    s << "epoch,train_loss,val_loss,lr\n";
    for (std::size_t e = 0; e < h.epochs(); ++e) {
        s << e + 1 << ',' << format_double(h.train_loss[e]) << ','
          << (e < h.val_loss.size() ? format_double(h.val_loss[e]) : "") << ','
          << format_double(h.lr[e]) << '\n';
    }
    return s.str();
}

json coef_json(const CompiledModel& m) {
    json j = json::object();
    for (auto [name, type] : {std::pair{"shifting", CoefType::Shifting}, std::pair{"interacting", CoefType::Interacting},
                              std::pair{"autoregressive", CoefType::Autoregressive}}) {
        if (type == CoefType::Autoregressive && m.blueprint().atplags.empty()) continue;
        json block = json::object();
        for (const auto& c : m.coef(type)) {
            json entry = json::object();
            for (std::size_t k = 0; k < c.values.size(); ++k) entry[c.labels[k]] = c.values[k];
            block[c.name] = entry;
        }
        j[name] = block;
    }
    return j;
}

std::string coef_text(const CompiledModel& m) {
    std::ostringstream s;
    const auto& bp = m.blueprint();
    s << "Formula: " << to_string(bp.spec) << '\n';
    s << "Basis: " << to_string(bp.basis.kind);
    if (bp.basis.kind == BasisKind::Bernstein) s << " (order " << bp.basis.order << ")";
    s << "  Latent: "
      << to_string(bp.latent) << "  Response: " << to_string(bp.response_type) << "\n\n";
    auto block = [&](const char* title, CoefType t) {
        s << title << '\n';
        const auto cs = m.coef(t);
        if (cs.empty()) s << "  (none)\n";
        for (const auto& c : cs) {
            for (std::size_t k = 0; k < c.values.size(); ++k) {
                std::string label = c.name;
                if (c.values.size() > 1 || c.labels[k] != c.name) label += " " + c.labels[k];
                s << "  " << label << "  " << format_double(c.values[k]) << '\n';
            }
        }
        s << '\n';
    };
    block("Shift coefficients:", CoefType::Shifting);
    block("Interacting coefficients:", CoefType::Interacting);
    if (!bp.atplags.empty()) block("Autoregressive coefficients:", CoefType::Autoregressive);
    return s.str();
}

std::string prediction_csv(const Prediction& p) {
    std::ostringstream s;
    s << "row,y,label,type,value\n";
    const std::string type = to_string(p.type);
    for (const auto& r : p.rows) {
        s << r.row + 1 << ',' << (std::isnan(r.y) ? "" : format_double(r.y)) << ',';
        // labels are term names, levels, or column names; quote when needed
        if (r.label.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char ch : r.label) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            s << q << '"';
        } else {
            s << r.label;
        }
        s << ',' << type << ',' << format_double(r.value) << '\n';
    }
    return s.str();
}

int cmd_fit(const Args& a) {
    const RunConfig c = load_config(a);
    const ModelSpec spec = c.spec();
    const Dataset data = with_lags(load_data(a.data, c.csv), spec.response, c.lags);
    CompiledModel model(compile_blueprint(spec, data, c.model));
    const FitHistory h = fit(model, data, c.fit, c.weights);
    const fs::path dir = out_dir(a);
    save_model((dir / "model.json").string(), model);
    emit((dir / "history.csv").string(), history_csv(h));
    emit((dir / "coef.txt").string(), coef_text(model));
    emit((dir / "coef.json").string(), coef_json(model).dump(2) + "\n");
    std::cerr << "trafofit: fitted " << h.epochs() << " epochs, final loss "
              << format_double(h.train_loss.back()) << (h.stopped_early ? " (stopped early)" : "") << '\n';
    return 0;
}

EnsembleMode mode_for(const Args& a, const std::optional<RunConfig>& c) {
    if (a.mode.empty()) return c ? c->ensemble_mode : EnsembleMode::Density;
    if (a.mode == "density") return EnsembleMode::Density;
    if (a.mode == "transformation") return EnsembleMode::Transformation;
    throw UsageError("--mode must be 'density' or 'transformation'");
}

int cmd_predict(const Args& a) {
    if (a.model.empty()) throw UsageError("--model is required");
    std::optional<RunConfig> cfg;
    if (!a.config.empty()) cfg = load_config(a);
    PredictType type;
    try {
        type = predict_type_from_string(a.type);
    } catch (const ModelError& e) {
        throw UsageError(e.what());
    }
    const std::size_t k = a.grid_k.value_or(cfg ? cfg->grid_k : 100);
    const int lags = a.lags.value_or(cfg ? cfg->lags : 0);
    const json file = read_model_file(a.model);
    Prediction p;
    if (file.value("kind", "") == "ensemble") {
        const EnsembleModel ens = ensemble_from_json(file);
        const auto& bp = ens.members.front().blueprint();
        Dataset data = load_data(a.data, csv_for(bp, cfg));
        if (lags > 0) data = with_lags(std::move(data), bp.spec.response, lags);
        check_columns(bp, data, false);
        p = ensemble_predict(ens, data, type, mode_for(a, cfg), k, a.q);
    } else {
        const CompiledModel model = model_from_json(file);
        const auto& bp = model.blueprint();
        Dataset data = load_data(a.data, csv_for(bp, cfg));
        if (lags > 0) data = with_lags(std::move(data), bp.spec.response, lags);
        check_columns(bp, data, false);
        p = model.predict(data, type, k, a.q);
    }
    emit(a.out, prediction_csv(p));
    return 0;
}

ConvertFun convert_for(const Args& a, const std::optional<RunConfig>& c) {
    if (a.convert.empty()) return c ? c->convert : ConvertFun::Mean;
    try {
        return convert_fun_from_string(a.convert);
    } catch (const LossError& e) {
        throw UsageError(e.what());
    }
}

int cmd_loglik(const Args& a) {
    if (a.model.empty()) throw UsageError("--model is required");
    std::optional<RunConfig> cfg;
    if (!a.config.empty()) cfg = load_config(a);
    const ConvertFun convert = convert_for(a, cfg);
    const int lags = a.lags.value_or(cfg ? cfg->lags : 0);
    const json file = read_model_file(a.model);
    std::ostringstream s;
    if (file.value("kind", "") == "ensemble") {
        const EnsembleModel ens = ensemble_from_json(file);
        const auto& bp = ens.members.front().blueprint();
        Dataset data = load_data(a.data, csv_for(bp, cfg));
        if (lags > 0) data = with_lags(std::move(data), bp.spec.response, lags);
        check_columns(bp, data, true);
        const EnsembleLogLik r = ensemble_log_lik(ens, data, convert);
        if (convert == ConvertFun::Identity) {
            s << "row,nll\n";
            for (std::size_t i = 0; i < r.contributions.size(); ++i) {
                s << i + 1 << ',' << format_double(r.contributions[i]) << '\n';
            }
        } else {
            for (std::size_t m = 0; m < r.members.size(); ++m) s << "members" << m + 1 << ',';
            s << "mean,ensemble,transformation\n";
            for (double v : r.members) s << format_double(v) << ',';
            s << format_double(r.mean) << ',' << format_double(r.ensemble) << ','
              << format_double(r.transformation) << '\n';
        }
    } else {
        const CompiledModel model = model_from_json(file);
        Dataset data = load_data(a.data, csv_for(model.blueprint(), cfg));
        if (lags > 0) data = with_lags(std::move(data), model.blueprint().spec.response, lags);
        check_columns(model.blueprint(), data, true);
        const LogLikResult r = log_lik(model, data, convert);
        if (convert == ConvertFun::Identity) {
            s << "row,nll\n";
            for (std::size_t i = 0; i < r.contributions.size(); ++i) {
                s << i + 1 << ',' << format_double(r.contributions[i]) << '\n';
            }
        } else {
            s << (convert == ConvertFun::Mean ? "mean_nll" : "loglik") << '\n' << format_double(r.value) << '\n';
        }
    }
    emit(a.out, s.str());
    return 0;
}

int cmd_ensemble(const Args& a) {
    const RunConfig c = load_config(a);
    const ModelSpec spec = c.spec();
    const Dataset data = with_lags(load_data(a.data, c.csv), spec.response, c.lags);
    const ModelBlueprint bp = compile_blueprint(spec, data, c.model);
    const EnsembleModel ens = ensemble(bp, data, c.members, c.fit, c.weights, c.vary_seeds);
    const fs::path dir = out_dir(a);
    save_ensemble((dir / "ensemble.json").string(), ens);
    for (std::size_t m = 0; m < ens.histories.size(); ++m) {
        emit((dir / ("history_member" + std::to_string(m + 1) + ".csv")).string(), history_csv(ens.histories[m]));
    }
    std::cerr << "trafofit: fitted " << ens.members.size() << " ensemble members\n";
    return 0;
}

int cmd_cv(const Args& a) {
    const RunConfig c = load_config(a);
    const ModelSpec spec = c.spec();
    const Dataset data = with_lags(load_data(a.data, c.csv), spec.response, c.lags);
    const ModelBlueprint bp = compile_blueprint(spec, data, c.model);
    std::vector<CvFold> folds;
    if (!c.cv_indices.empty()) {
        // explicit validation index sets; training is the complement
        for (const auto& val : c.cv_indices) {
            std::vector<bool> in_val(data.rows(), false);
            for (auto i : val) {
                if (i >= data.rows()) throw ConfigError("cv_indices row " + std::to_string(i + 1) + " out of range");
                in_val[i] = true;
            }
            CvFold f;
            for (std::size_t i = 0; i < data.rows(); ++i) (in_val[i] ? f.validation : f.train).push_back(i);
            if (f.train.empty() || f.validation.empty()) throw ConfigError("cv_indices fold leaves an empty split");
            folds.push_back(std::move(f));
        }
    } else {
        folds = make_folds(data.rows(), c.folds, c.fit.seed);
    }
    const CvResult r = cross_validate(bp, data, folds, c.fit, c.weights);
    std::ostringstream s;
    s << "epoch,mean_train_loss,mean_val_loss";
    for (std::size_t f = 0; f < r.folds.size(); ++f) s << ",fold" << f + 1 << "_train,fold" << f + 1 << "_val";
    s << '\n';
    for (std::size_t e = 0; e < r.mean_train.size(); ++e) {
        s << e + 1 << ',' << format_double(r.mean_train[e]) << ',' << format_double(r.mean_val[e]);
        for (const auto& h : r.folds) {
            s << ',' << format_double(h.train_loss[e]) << ',' << format_double(h.val_loss[e]);
        }
        s << '\n';
    }
    const fs::path dir = out_dir(a);
    emit((dir / "cv.csv").string(), s.str());
    json summary = {{"folds", r.folds.size()}, {"best_epoch", r.best_epoch},
                    {"best_val_loss", r.mean_val.empty() ? 0.0 : r.mean_val[static_cast<std::size_t>(r.best_epoch - 1)]}};
    emit((dir / "cv.json").string(), summary.dump(2) + "\n");
    std::cerr << "trafofit: best epoch " << r.best_epoch << '\n';
    return 0;
}

int cmd_simulate(const Args& a) {
    Simulation sim;
    try {
        sim = simulate(a.generator, a.sim);
    } catch (const SimulateError& e) {
        throw UsageError(e.what());
    }
    const std::string csv = to_csv(sim.data);
    emit(a.out, csv);
    if (!a.out.empty() && a.out != "-") {
        fs::path truth = a.out;
        truth.replace_extension(".truth.json");
        emit(truth.string(), sim.truth.dump(2) + "\n");
    } else {
        std::cerr << sim.truth.dump() << '\n';
    }
    return 0;
}

std::string one_line(std::string s) {
    for (char& ch : s) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return s;
}

int fail(const std::string& code, const std::string& msg, int status) {
    std::cerr << "trafofit: error: " << code << ": " << one_line(msg) << '\n';
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fit, predict with, and evaluate transformation models"};
    app.require_subcommand(1);
    Args a;

    auto common = [&](CLI::App* s, bool needs_config) {
        auto* opt = s->add_option("--config", a.config, "JSON run configuration");
        if (needs_config) opt->required();
        s->add_option("--data", a.data, "CSV input")->required();
        s->add_option("--seed", a.seed, "Override model and fit seed");
        s->add_option("--lags", a.lags, "Build response lags y_lag_1..y_lag_p before use");
    };

    auto* fitc = app.add_subcommand("fit", "Fit a model; writes model.json, history.csv, coef.txt, coef.json");
    common(fitc, true);
    fitc->add_option("--out", a.out, "Output directory");

    auto* pred = app.add_subcommand("predict", "Predict on new data (long-format CSV)");
    common(pred, false);
    pred->add_option("--model", a.model, "Model or ensemble file")->required();
    pred->add_option("--type", a.type, "trafo, pdf, cdf, interaction, shift, terms, trafo_deriv");
    pred->add_option("--grid-k", a.grid_k, "Grid length when the data has no response");
    pred->add_option("--q", a.q, "Explicit response values (overrides --grid-k)")->delimiter(',');
    pred->add_option("--mode", a.mode, "Ensemble averaging: density or transformation");
    pred->add_option("--out", a.out, "Output CSV (default stdout)");

    auto* ll = app.add_subcommand("loglik", "Evaluate the log-likelihood of data");
    common(ll, false);
    ll->add_option("--model", a.model, "Model or ensemble file")->required();
    ll->add_option("--type,--convert", a.convert, "loglik, identity or mean");
    ll->add_option("--out", a.out, "Output CSV (default stdout)");

    auto* ens = app.add_subcommand("ensemble", "Fit a deep ensemble");
    common(ens, true);
    ens->add_option("--members", a.members, "Number of members");
    ens->add_option("--out", a.out, "Output directory");

    auto* cv = app.add_subcommand("cv", "Cross-validate");
    common(cv, true);
    cv->add_option("--folds", a.folds, "Number of folds");
    cv->add_option("--out", a.out, "Output directory");

    auto* simc = app.add_subcommand("simulate", "Write a synthetic dataset and its ground truth");
    simc->add_option("generator", a.generator,
                     "gaussian-linear, large-factor, ar1, ordinal-logit, heteroscedastic")
        ->required();
    simc->add_option("--n", a.sim.n, "Rows");
    simc->add_option("--seed", a.sim.seed, "Seed");
    simc->add_option("--levels", a.sim.levels, "large-factor: number of levels");
    simc->add_option("--phi", a.sim.phi, "ar1: coefficient");
    simc->add_option("--classes", a.sim.classes, "ordinal-logit: number of classes");
    simc->add_option("--beta", a.sim.beta, "ordinal-logit: slope");
    simc->add_option("--scale", a.sim.scale, "heteroscedastic: log-variance slope");
    simc->add_option("--out", a.out, "Output CSV; the truth goes to <stem>.truth.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Error& e) {
        return fail("E_USAGE", e.what(), 2);
    }

    try {
        if (*fitc) return cmd_fit(a);
        if (*pred) return cmd_predict(a);
        if (*ll) return cmd_loglik(a);
        if (*ens) return cmd_ensemble(a);
        if (*cv) return cmd_cv(a);
        if (*simc) return cmd_simulate(a);
    } catch (const UsageError& e) {
        return fail("E_USAGE", e.what(), 2);
    } catch (const ConfigError& e) {
        return fail("E_CONFIG", e.what(), 3);
    } catch (const FormulaError& e) {
        return fail("E_FORMULA", std::string(e.what()) + " (at offset " + std::to_string(e.position()) + ")", 3);
    } catch (const DataError& e) {
        return fail("E_DATA", e.what(), 4);
    } catch (const SchemaError& e) {
        return fail("E_SCHEMA", e.what(), 4);
    } catch (const PersistError& e) {
        return fail("E_IO", e.what(), 5);
    } catch (const IoError& e) {
        return fail("E_IO", e.what(), 5);
    } catch (const TimeSeriesError& e) {
        return fail("E_DATA", e.what(), 4);
    } catch (const FitError& e) {
        return fail("E_FIT", e.what(), 6);
    } catch (const LossError& e) {
        return fail("E_FIT", e.what(), 6);
    } catch (const ModelError& e) {
        return fail("E_MODEL", e.what(), 7);
    } catch (const TermError& e) {
        return fail("E_MODEL", e.what(), 7);
    } catch (const BasisError& e) {
        return fail("E_MODEL", e.what(), 7);
    } catch (const ResponseError& e) {
        return fail("E_DATA", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("E_INTERNAL", e.what(), 70);
    }
    return fail("E_USAGE", "no subcommand", 2);
}
