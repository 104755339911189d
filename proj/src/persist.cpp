#include "trafo/persist.hpp"

#include <fstream>
#include <sstream>

namespace trafo {

using nlohmann::json;

namespace {

json layer_json(const LayerSpec& l) {
    return {{"units", l.units}, {"activation", to_string(l.activation)}, {"dropout", l.dropout}};
}

NetworkConfig net_from_json(const json& j) {
    NetworkConfig net;
    for (const auto& l : j) {
        net.push_back({l.at("units").get<std::size_t>(),
                       activation_from_string(l.at("activation").get<std::string>()),
                       l.at("dropout").get<double>()});
    }
    return net;
}

json feature_json(const TermFeature& f) {
    json j = {{"kind", to_string(f.kind)}, {"label", f.label}, {"vars", f.vars}};
    if (f.kind == FeatureKind::Factor) j["levels"] = f.levels;
    if (f.kind == FeatureKind::Lasso) j["lambda"] = f.lambda;
    if (f.kind == FeatureKind::Deep) {
        j["net_name"] = f.net_name;
        json layers = json::array();
        for (const auto& l : f.net) layers.push_back(layer_json(l));
        j["net"] = layers;
    }
    if (f.kind == FeatureKind::Smooth) {
        const auto& s = f.smooth;
        j["smooth"] = {{"lower", s.lower},       {"upper", s.upper},   {"n_basis", s.n_basis},
                       {"degree", s.degree},     {"knots", s.knots},   {"constraint", s.constraint},
                       {"penalty", s.penalty},   {"lambda", s.lambda}, {"df", s.df}};
    }
    return j;
}

TermFeature feature_from_json(const json& j) {
    TermFeature f;
    f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
    f.label = j.at("label").get<std::string>();
    f.vars = j.at("vars").get<std::vector<std::string>>();
    if (j.contains("levels")) f.levels = j["levels"].get<std::vector<std::string>>();
    if (j.contains("lambda")) f.lambda = j["lambda"].get<double>();
    if (j.contains("net_name")) f.net_name = j["net_name"].get<std::string>();
    if (j.contains("net")) f.net = net_from_json(j["net"]);
    if (j.contains("smooth")) {
        const auto& s = j["smooth"];
        auto& sm = f.smooth;
        sm.lower = s.at("lower").get<double>();
        sm.upper = s.at("upper").get<double>();
        sm.n_basis = s.at("n_basis").get<int>();
        sm.degree = s.at("degree").get<int>();
        sm.knots = s.at("knots").get<std::vector<double>>();
        sm.constraint = s.at("constraint").get<std::vector<double>>();
        sm.penalty = s.at("penalty").get<std::vector<double>>();
        sm.lambda = s.at("lambda").get<double>();
        sm.df = s.at("df").get<double>();
    }
    return f;
}

json features_json(const std::vector<TermFeature>& v) {
    json a = json::array();
    for (const auto& f : v) a.push_back(feature_json(f));
    return a;
}

std::vector<TermFeature> features_from_json(const json& a) {
    std::vector<TermFeature> out;
    for (const auto& f : a) out.push_back(feature_from_json(f));
    return out;
}

void check_format(const json& j, const std::string& kind) {
    if (!j.is_object() || !j.contains("format")) throw PersistError("not a model file (no format field)");
    if (j["format"].get<int>() != kModelFormat) {
        throw PersistError("unsupported model file format " + j["format"].dump());
    }
    if (j.value("kind", std::string()) != kind) {
        throw PersistError("expected a " + kind + " file, found '" + j.value("kind", std::string()) + "'");
    }
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PersistError("cannot write '" + path + "'");
    out << j.dump(1) << '\n';
    if (!out) throw PersistError("failed writing '" + path + "'");
}

}  // namespace

json blueprint_to_json(const ModelBlueprint& bp) {
    json nets = json::object();
    for (const auto& [name, net] : bp.networks) {
        json layers = json::array();
        for (const auto& l : net) layers.push_back(layer_json(l));
        nets[name] = layers;
    }
    return {
        {"formula", to_string(bp.spec)},
        {"response_type", to_string(bp.response_type)},
        {"basis",
         {{"kind", to_string(bp.basis.kind)},
          {"order", bp.basis.order},
          {"support", {bp.basis.support.lower, bp.basis.support.upper}},
          {"n_levels", bp.basis.n_levels},
          {"custom_name", bp.basis.custom_name}}},
        {"latent", to_string(bp.latent)},
        {"response_levels", bp.response_levels},
        {"event_column", bp.event_column},
        {"upper_column", bp.upper_column},
        {"interacting",
         {{"terms", features_json(bp.interacting.terms)},
          {"columns", bp.interacting.columns},
          {"scale", bp.interacting.scale}}},
        {"shifting", {{"terms", features_json(bp.shifting.terms)}, {"intercept", bp.shifting.intercept}}},
        {"atplags", features_json(bp.atplags)},
        {"networks", nets},
        {"seed", bp.seed},
    };
}

ModelBlueprint blueprint_from_json(const json& j) {
    try {
        ModelBlueprint bp;
        for (const auto& [name, layers] : j.at("networks").items()) bp.networks[name] = net_from_json(layers);
        ParseOptions po;
        for (const auto& [name, net] : bp.networks) {
            if (name != "deep" && name != "nn") po.network_names.insert(name);
        }
        bp.spec = parse_formula(j.at("formula").get<std::string>(), po);
        bp.response_type = response_type_from_string(j.at("response_type").get<std::string>());
        const auto& b = j.at("basis");
        bp.basis.kind = basis_kind_from_string(b.at("kind").get<std::string>());
        bp.basis.order = b.at("order").get<int>();
        bp.basis.support = {b.at("support").at(0).get<double>(), b.at("support").at(1).get<double>()};
        bp.basis.n_levels = b.at("n_levels").get<int>();
        bp.basis.custom_name = b.at("custom_name").get<std::string>();
        if (bp.basis.kind == BasisKind::Custom && !has_custom_basis(bp.basis.custom_name)) {
            throw PersistError("model uses custom basis '" + bp.basis.custom_name + "' which is not registered");
        }
        bp.latent = latent_from_string(j.at("latent").get<std::string>());
        bp.response_levels = j.at("response_levels").get<std::vector<std::string>>();
        bp.event_column = j.at("event_column").get<std::string>();
        bp.upper_column = j.at("upper_column").get<std::string>();
        bp.interacting.terms = features_from_json(j.at("interacting").at("terms"));
        bp.interacting.columns = j.at("interacting").at("columns").get<std::size_t>();
        bp.interacting.scale = j.at("interacting").at("scale").get<bool>();
        bp.shifting.terms = features_from_json(j.at("shifting").at("terms"));
        bp.shifting.intercept = j.at("shifting").at("intercept").get<bool>();
        bp.atplags = features_from_json(j.at("atplags"));
        bp.seed = j.at("seed").get<std::uint64_t>();
        return bp;
    } catch (const json::exception& e) {
        throw PersistError(std::string("malformed model blueprint: ") + e.what());
    } catch (const FormulaError& e) {
        throw PersistError(std::string("malformed model formula: ") + e.what());
    }
}

json model_to_json(const CompiledModel& model) {
    json slices = json::array();
    const auto& store = model.params();
    for (std::size_t i = 0; i < store.slices().size(); ++i) {
        const auto& s = store.slice(i);
        auto v = store.values(i);
        slices.push_back({{"name", s.name},
                          {"rows", s.rows},
                          {"cols", s.cols},
                          {"trainable", s.trainable},
                          {"lr_multiplier", s.lr_multiplier},
                          {"values", std::vector<double>(v.begin(), v.end())}});
    }
    return {{"format", kModelFormat},
            {"kind", "model"},
            {"blueprint", blueprint_to_json(model.blueprint())},
            {"parameters", slices}};
}

CompiledModel model_from_json(const json& j) {
    check_format(j, "model");
    CompiledModel model(blueprint_from_json(j.at("blueprint")));
    auto& store = model.params();
    try {
        const auto& slices = j.at("parameters");
        if (slices.size() != store.slices().size()) {
            throw PersistError("parameter slice count mismatch");
        }
        for (const auto& s : slices) {
            const auto name = s.at("name").get<std::string>();
            const auto idx = store.find(name);
            if (!idx) throw PersistError("unknown parameter slice '" + name + "'");
            auto& sl = store.slice(*idx);
            if (sl.rows != s.at("rows").get<std::size_t>() || sl.cols != s.at("cols").get<std::size_t>()) {
                throw PersistError("shape mismatch for parameter slice '" + name + "'");
            }
            const auto vals = s.at("values").get<std::vector<double>>();
            if (vals.size() != sl.size()) throw PersistError("value count mismatch for '" + name + "'");
            sl.trainable = s.at("trainable").get<bool>();
            sl.lr_multiplier = s.at("lr_multiplier").get<double>();
            std::copy(vals.begin(), vals.end(), store.values(*idx).begin());
        }
    } catch (const json::exception& e) {
        throw PersistError(std::string("malformed parameters: ") + e.what());
    }
    return model;
}

json read_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw PersistError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void save_model(const std::string& path, const CompiledModel& model) { write_json(path, model_to_json(model)); }

CompiledModel load_model(const std::string& path) { return model_from_json(read_model_file(path)); }

json ensemble_to_json(const EnsembleModel& ens) {
    json members = json::array();
    for (const auto& m : ens.members) members.push_back(model_to_json(m));
    return {{"format", kModelFormat}, {"kind", "ensemble"}, {"members", members}};
}

EnsembleModel ensemble_from_json(const json& j) {
    check_format(j, "ensemble");
    EnsembleModel ens;
    for (const auto& m : j.at("members")) ens.members.push_back(model_from_json(m));
    if (ens.members.empty()) throw PersistError("ensemble file has no members");
    ens.histories.resize(ens.members.size());
    return ens;
}

void save_ensemble(const std::string& path, const EnsembleModel& ens) { write_json(path, ensemble_to_json(ens)); }

EnsembleModel load_ensemble(const std::string& path) { return ensemble_from_json(read_model_file(path)); }

}  // namespace trafo
