#include "eenn/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "eenn/artifacts.hpp"
#include "eenn/error.hpp"
#include "eenn/rng.hpp"

namespace eenn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json quartiles_json(const std::vector<DriftQuartile>& drift) {
    json out = json::array();
    for (const auto& q : drift) {
        out.push_back({{"count", q.count},
                       {"mean_fisher", q.mean_fisher},
                       {"mean_sq_drift", q.mean_sq_drift},
                       {"drift_norm", q.drift_norm}});
    }
    return out;
}

json stage_json(const StageReport& r) {
    return {{"stage", r.stage},
            {"phase", r.phase},
            {"epochs_run", r.epochs_run},
            {"best_epoch", r.best_epoch},
            {"reported_exits", r.reported_exits},
            {"final_train_ce", r.final_train_ce},
            {"final_val_ce", r.final_val_ce},
            {"monitor_trace", r.monitor_trace},
            {"regularizer_trace", r.regularizer_trace},
            {"test_accuracy", r.test_accuracy},
            {"drift_by_fisher_quartile", quartiles_json(r.drift)}};
}

void append_stage_rows(std::ostringstream& out, const StageReport& r) {
    for (const EpochRecord& e : r.epochs) {
        out << r.phase << ',' << r.stage << ',' << e.epoch << ',' << e.exit << ',' << format_double(e.train_ce) << ','
            << format_double(e.val_ce) << ',' << format_double(e.regularizer) << '\n';
    }
}

std::string stage_file(const StageReport& r) {
    if (r.phase == "warm-up") return "stage_warmup.json";
    if (r.phase == "joint") return "stage_joint.json";
    return "stage_" + std::to_string(r.stage) + ".json";
}

json budget_json(const BudgetReport& b) {
    json table = json::array();
    for (std::size_t i = 0; i < b.budgets.size(); ++i) {
        table.push_back({{"budget", b.budgets[i]},
                         {"exit", b.budget_exit[i]},
                         {"accuracy", std::isnan(b.budget_accuracy[i]) ? json(nullptr) : json(b.budget_accuracy[i])}});
    }
    return table;
}

BudgetReport evaluate_on_test(const RunConfig& cfg, const ExitNetwork& net, const SplitData& test) {
    return evaluate(predict_exits(net, test.x, test.y), flops_of(net), cfg.evaluator.budgets, cfg.evaluator.thresholds,
                    cfg.evaluator.confidence);
}

void write_budget_artifacts(const std::string& label, const BudgetReport& report, const fs::path& dir) {
    write_text(dir / "budget_table.csv", budget_table_csv({label}, {report}));
    write_text(dir / "exit_ratios.csv", exit_ratios_csv(report));
    write_text(dir / "budget_curve.csv", budget_curve_csv(report));
    write_text(dir / "flops.csv", flops_csv(report.flops));
}

std::vector<TrainConfig> expand_grid(const RunConfig& cfg) {
    std::vector<TrainConfig> out;
    if (cfg.train.regime == Regime::ProposedEwc && !cfg.lambda_grid.empty()) {
        for (double l : cfg.lambda_grid) {
            TrainConfig t = cfg.train;
            t.lambda = l;
            out.push_back(t);
        }
    } else if (cfg.train.regime == Regime::ProposedLwf && !cfg.rho_grid.empty()) {
        for (double r : cfg.rho_grid) {
            TrainConfig t = cfg.train;
            t.rho = r;
            out.push_back(t);
        }
    } else {
        out.push_back(cfg.train);
    }
    return out;
}

fs::path output_dir(const RunConfig& cfg) { return fs::path(cfg.output_dir); }

}  // namespace

RunConfig resolve_config(const CliOptions& options) {
    if (options.config.empty()) throw Error("usage_error", "--config is required");
    RunConfig cfg = load_config(options.config);
    if (options.seed) {
        cfg.seed = *options.seed;
        cfg.train.seed = *options.seed;
    }
    if (options.out) cfg.output_dir = options.out->string();
    if (options.checkpoint) cfg.evaluator.checkpoint = options.checkpoint->string();
    cfg.validate();
    return cfg;
}

std::string run_label(const TrainConfig& train) {
    switch (train.regime) {
        case Regime::ProposedEwc: return "ewc-lambda-" + format_double(train.lambda);
        case Regime::ProposedLwf: return "lwf-rho-" + format_double(train.rho);
        default: return std::string(to_string(train.regime));
    }
}

void create_run_dir(const fs::path& dir) {
    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
        throw Error("run_exists", "output directory " + dir.string() + " already holds a run", {{"path", dir.string()}});
    }
    fs::create_directories(dir);
}

RegimeRun train_regime(const RunConfig& cfg, const TrainingData& data, const TrainConfig& train, std::string label) {
    ExitNetwork net(cfg.model, derive_seed(cfg.seed, "init"));
    RunResult result = run_regime(net, data, train);
    BudgetReport budget = evaluate_on_test(cfg, net, data.test);
    return {std::move(label), train, std::move(net), std::move(result), std::move(budget)};
}

void write_run_artifacts(const RegimeRun& run, const fs::path& dir) {
    create_run_dir(dir);
    save_checkpoint(run.net, dir / "checkpoint.json");

    std::ostringstream rows;
    rows << "phase,stage,epoch,exit,train_ce,val_ce,regularizer\n";
    std::vector<const StageReport*> reports;
    if (run.result.warm_up) reports.push_back(&*run.result.warm_up);
    for (const auto& s : run.result.stages) reports.push_back(&s);
    for (const StageReport* r : reports) {
        append_stage_rows(rows, *r);
        write_json(dir / stage_file(*r), stage_json(*r));
    }
    write_text(dir / "stages.csv", rows.str());

    json forget = json::array();
    const bool staged = run.train.regime != Regime::Joint && run.train.regime != Regime::WarmUp;
    if (staged) {
        const int m = static_cast<int>(run.result.stages.size());
        for (int nu = 1; nu <= m; ++nu) forget.push_back(forgetting(run.result, nu, m));
    }
    json summary = {{"label", run.label},
                    {"regime", std::string(to_string(run.train.regime))},
                    {"lambda", run.train.lambda},
                    {"rho", run.train.rho},
                    {"warm_up", run.train.warm_up},
                    {"final_test_accuracy", run.result.stages.empty() ? json::array()
                                                                      : json(run.result.stages.back().test_accuracy)},
                    {"forgetting_to_last_stage", forget},
                    {"budgets", budget_json(run.budget)}};
    write_json(dir / "summary.json", summary);
    write_budget_artifacts(run.label, run.budget, dir);
    if (run.train.regime == Regime::ProposedEwc) write_fisher_csv(run.result.fisher, dir / "fisher.csv");
}

int cli_train(const CliOptions& options) {
    const RunConfig cfg = resolve_config(options);
    const fs::path root = output_dir(cfg);
    create_run_dir(root);
    write_json(root / "config.json", config_to_json(cfg));
    const TrainingData data = make_training_data(build_dataset(cfg));
    for (const TrainConfig& train : expand_grid(cfg)) {
        const RegimeRun run = train_regime(cfg, data, train, run_label(train));
        write_run_artifacts(run, root / run.label);
    }
    return 0;
}

int cli_evaluate(const CliOptions& options) {
    const RunConfig cfg = resolve_config(options);
    if (cfg.evaluator.checkpoint.empty()) {
        throw Error("usage_error", "evaluate needs evaluator.checkpoint or --checkpoint");
    }
    const ExitNetwork net = load_checkpoint(cfg.evaluator.checkpoint);
    if (!(net.arch() == cfg.model)) throw Error("schema_error", "checkpoint architecture does not match config model");
    const fs::path root = output_dir(cfg);
    create_run_dir(root);
    write_json(root / "config.json", config_to_json(cfg));
    const TrainingData data = make_training_data(build_dataset(cfg));
    write_budget_artifacts("checkpoint", evaluate_on_test(cfg, net, data.test), root);
    return 0;
}

int cli_compare(const CliOptions& options) {
    const RunConfig cfg = resolve_config(options);
    const fs::path root = output_dir(cfg);
    create_run_dir(root);
    write_json(root / "config.json", config_to_json(cfg));
    const TrainingData data = make_training_data(build_dataset(cfg));

    std::vector<std::string> labels;
    std::vector<BudgetReport> reports;
    for (Regime regime : {Regime::Disjoint, Regime::BranchWise, Regime::Separate, Regime::Joint, Regime::ProposedEwc,
                          Regime::ProposedLwf}) {
        TrainConfig train = cfg.train;
        train.regime = regime;
        std::string label = regime == Regime::ProposedEwc   ? "ewc"
                            : regime == Regime::ProposedLwf ? "lwf"
                                                            : std::string(to_string(regime));
        const RegimeRun run = train_regime(cfg, data, train, label);
        write_run_artifacts(run, root / label);
        labels.push_back(label);
        reports.push_back(run.budget);
    }
    write_text(root / "budget_table.csv", budget_table_csv(labels, reports));
    return 0;
}

int cli_fisher_dump(const CliOptions& options) {
    const RunConfig cfg = resolve_config(options);
    const fs::path root = output_dir(cfg);
    const TrainingData data = make_training_data(build_dataset(cfg));
    if (!cfg.evaluator.checkpoint.empty()) {
        const ExitNetwork net = load_checkpoint(cfg.evaluator.checkpoint);
        if (!(net.arch() == cfg.model)) throw Error("schema_error", "checkpoint architecture does not match config model");
        create_run_dir(root);
        write_json(root / "config.json", config_to_json(cfg));
        FisherStore store;
        for (int nu = 1; nu <= static_cast<int>(net.exits()); ++nu) {
            store.set(nu, empirical_fisher(net, data.train.x, data.train.y, nu));
        }
        write_fisher_csv(store, root / "fisher.csv");
        return 0;
    }
    create_run_dir(root);
    write_json(root / "config.json", config_to_json(cfg));
    TrainConfig train = cfg.train;
    train.regime = Regime::ProposedEwc;
    const RegimeRun run = train_regime(cfg, data, train, run_label(train));
    write_fisher_csv(run.result.fisher, root / "fisher.csv");
    save_checkpoint(run.net, root / "checkpoint.json");
    return 0;
}

int run_command(const std::string& command, const CliOptions& options, std::ostream& err) {
    try {
        if (command == "train") return cli_train(options);
        if (command == "evaluate") return cli_evaluate(options);
        if (command == "compare") return cli_compare(options);
        if (command == "fisher-dump") return cli_fisher_dump(options);
        throw Error("usage_error", "unknown command '" + command + "'", {{"command", command}});
    } catch (const Error& e) {
        err << e.to_json().dump() << '\n';
        return e.code() == "usage_error" ? 2 : 1;
    } catch (const std::exception& e) {
        err << Error("internal_error", e.what()).to_json().dump() << '\n';
        return 1;
    }
}

}  // namespace eenn
