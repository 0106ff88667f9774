#include "eenn/config.hpp"

#include <set>

#include "eenn/artifacts.hpp"
#include "eenn/error.hpp"
#include "eenn/rng.hpp"

namespace eenn {

namespace {

using nlohmann::json;

/// Reads optional keys from one JSON object and rejects any key it was not asked about.
class Section {
public:
    Section(const json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
        if (!doc_.is_object()) throw Error("schema_error", where_ + " must be an object", {{"where", where_}});
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        try {
            out = doc_.at(key).get<T>();
        } catch (const json::exception&) {
            throw Error("schema_error", "bad value for '" + where_ + "." + key + "'", {{"key", key}, {"where", where_}});
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return doc_.contains(key) ? &doc_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.contains(key)) {
                throw Error("schema_error", "unknown key '" + key + "' in " + where_, {{"key", key}, {"where", where_}});
            }
        }
    }

private:
    const json& doc_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

std::string_view to_string(Confidence c) noexcept {
    return c == Confidence::MaxProbability ? "max-probability" : "normalized-entropy";
}

Confidence parse_confidence(std::string_view text) {
    if (text == "max-probability") return Confidence::MaxProbability;
    if (text == "normalized-entropy") return Confidence::NormalizedEntropy;
    throw Error("schema_error", "unknown confidence measure '" + std::string(text) + "'");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (data.source == "synthetic") {
        if (data.synthetic.dim != model.input_dim || data.synthetic.classes != model.classes) {
            throw Error("schema_error", "synthetic data shape does not match model input_dim/classes",
                        {{"data_dim", data.synthetic.dim},
                         {"input_dim", model.input_dim},
                         {"data_classes", data.synthetic.classes},
                         {"classes", model.classes}});
        }
    } else if (data.source == "csv") {
        if (data.csv_path.empty()) throw Error("schema_error", "data.csv_path is required for csv source");
    } else {
        throw Error("schema_error", "data.source must be 'synthetic' or 'csv'", {{"source", data.source}});
    }
    if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
        throw Error("schema_error", "data.test_fraction must be in (0, 1)");
    }
    if (evaluator.thresholds.empty()) throw Error("schema_error", "evaluator.thresholds must not be empty");
    for (double tau : evaluator.thresholds) ExitPolicy{evaluator.confidence, {tau}}.validate(model.exits());
    for (double b : evaluator.budgets) {
        if (!(b > 0.0 && b <= 1.0)) throw Error("schema_error", "evaluator.budgets entries must be in (0, 1]");
    }
    for (double l : lambda_grid) {
        if (!(l >= 0.0)) throw Error("schema_error", "lambda_grid entries must be >= 0");
    }
    for (double r : rho_grid) {
        if (!(r >= 0.0)) throw Error("schema_error", "rho_grid entries must be >= 0");
    }
}

RunConfig config_from_json(const json& doc) {
    RunConfig cfg;
    Section root(doc, "config");
    root.read("seed", cfg.seed);
    root.read("output_dir", cfg.output_dir);
    if (const json* m = root.child("model")) cfg.model = architecture_from_json(*m);

    if (const json* d = root.child("data")) {
        Section data(*d, "data");
        data.read("source", cfg.data.source);
        data.read("csv_path", cfg.data.csv_path);
        data.read("test_fraction", cfg.data.test_fraction);
        if (const json* s = data.child("synthetic")) {
            Section syn(*s, "data.synthetic");
            SynthSpec& sp = cfg.data.synthetic;
            syn.read("classes", sp.classes);
            syn.read("dim", sp.dim);
            syn.read("per_class", sp.per_class);
            syn.read("spread", sp.spread);
            syn.read("coarse_groups", sp.coarse_groups);
            syn.read("coarse_scale", sp.coarse_scale);
            syn.read("fine_scale", sp.fine_scale);
            syn.read("modes_per_class", sp.modes_per_class);
            syn.read("latent_dim", sp.latent_dim);
            syn.finish();
        }
        data.finish();
    }

    if (const json* t = root.child("train")) {
        Section train(*t, "train");
        TrainConfig& tc = cfg.train;
        std::string regime(to_string(tc.regime));
        train.read("regime", regime);
        tc.regime = parse_regime(regime);
        train.read("lambda", tc.lambda);
        train.read("rho", tc.rho);
        train.read("warm_up", tc.warm_up);
        train.read("learning_rate", tc.learning_rate);
        train.read("momentum", tc.momentum);
        train.read("batch_size", tc.batch_size);
        train.read("max_epochs", tc.max_epochs);
        train.read("patience", tc.patience);
        train.read("validation_fraction", tc.validation_fraction);
        train.read("ewc_protect_backbone", tc.ewc_scope.backbone);
        train.read("ewc_protect_classifiers", tc.ewc_scope.classifiers);
        train.read("previous_ce_weight", tc.previous_ce_weight);
        std::string step(to_string(tc.ewc_step));
        train.read("ewc_step", step);
        tc.ewc_step = parse_ewc_step(step);
        train.read("lambda_grid", cfg.lambda_grid);
        train.read("rho_grid", cfg.rho_grid);
        train.finish();
    }

    if (const json* e = root.child("evaluator")) {
        Section ev(*e, "evaluator");
        ev.read("thresholds", cfg.evaluator.thresholds);
        ev.read("budgets", cfg.evaluator.budgets);
        std::string measure(to_string(cfg.evaluator.confidence));
        ev.read("confidence", measure);
        cfg.evaluator.confidence = parse_confidence(measure);
        ev.read("checkpoint", cfg.evaluator.checkpoint);
        ev.finish();
    }
    root.finish();
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    const SynthSpec& sp = cfg.data.synthetic;
    const TrainConfig& tc = cfg.train;
    return {
        {"seed", cfg.seed},
        {"output_dir", cfg.output_dir},
        {"model", architecture_to_json(cfg.model)},
        {"data",
         {{"source", cfg.data.source},
          {"csv_path", cfg.data.csv_path},
          {"test_fraction", cfg.data.test_fraction},
          {"synthetic",
           {{"classes", sp.classes},
            {"dim", sp.dim},
            {"per_class", sp.per_class},
            {"spread", sp.spread},
            {"coarse_groups", sp.coarse_groups},
            {"coarse_scale", sp.coarse_scale},
            {"fine_scale", sp.fine_scale},
            {"modes_per_class", sp.modes_per_class},
            {"latent_dim", sp.latent_dim}}}}},
        {"train",
         {{"regime", std::string(to_string(tc.regime))},
          {"lambda", tc.lambda},
          {"rho", tc.rho},
          {"warm_up", tc.warm_up},
          {"learning_rate", tc.learning_rate},
          {"momentum", tc.momentum},
          {"batch_size", tc.batch_size},
          {"max_epochs", tc.max_epochs},
          {"patience", tc.patience},
          {"validation_fraction", tc.validation_fraction},
          {"ewc_protect_backbone", tc.ewc_scope.backbone},
          {"ewc_protect_classifiers", tc.ewc_scope.classifiers},
          {"previous_ce_weight", tc.previous_ce_weight},
          {"ewc_step", std::string(to_string(tc.ewc_step))},
          {"lambda_grid", cfg.lambda_grid},
          {"rho_grid", cfg.rho_grid}}},
        {"evaluator",
         {{"thresholds", cfg.evaluator.thresholds},
          {"budgets", cfg.evaluator.budgets},
          {"confidence", std::string(to_string(cfg.evaluator.confidence))},
          {"checkpoint", cfg.evaluator.checkpoint}}},
    };
}

RunConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(json::parse(read_text(path)));
    } catch (const json::parse_error& e) {
        throw Error("schema_error", std::string("config is not valid JSON: ") + e.what(), {{"path", path.string()}});
    }
}

Dataset build_dataset(const RunConfig& cfg) {
    Dataset data = cfg.data.source == "csv" ? load_csv(cfg.data.csv_path, cfg.model.classes)
                                            : synth_blobs(derive_seed(cfg.seed, "data"), cfg.data.synthetic);
    if (data.dim() != cfg.model.input_dim) {
        throw Error("schema_error", "dataset has " + std::to_string(data.dim()) + " features, model expects " +
                                        std::to_string(cfg.model.input_dim));
    }
    assign_splits(data, cfg.data.test_fraction, cfg.train.validation_fraction, derive_seed(cfg.seed, "split"));
    return data;
}

}  // namespace eenn
