#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "eenn/artifacts.hpp"
#include "eenn/cli.hpp"
#include "eenn/config.hpp"
#include "eenn/dataset.hpp"
#include "support.hpp"

using namespace eenn;
using eenn::testing::error_code;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config(const fs::path& out) {
    json doc = json::parse(R"({
      "seed": 3,
      "model": {"input_dim": 8, "classes": 4, "widths": [2, 8, 16], "layers_per_segment": 1},
      "data": {"source": "synthetic",
               "synthetic": {"classes": 4, "dim": 8, "per_class": 30, "coarse_groups": 2, "modes_per_class": 2}},
      "train": {"regime": "proposed-ewc", "lambda": 100, "max_epochs": 2, "patience": 2, "batch_size": 16},
      "evaluator": {"thresholds": [0.3, 0.6, 0.9]}
    })");
    doc["output_dir"] = out.string();
    return doc;
}

fs::path write_config(const fs::path& dir, const json& doc) {
    const fs::path path = dir / "config.json";
    write_json(path, doc);
    return path;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = read_text(entry.path());
    }
    return files;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("format_double round-trips") {
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(100.0) == "100");
}

TEST_CASE("csv round-trip is bit-exact") {
    const auto dir = eenn::testing::scratch_dir("csv");
    Dataset data;
    data.classes = 3;
    data.features = Tensor::matrix({{0.1, -2.5e-300, 1.0 / 3.0}, {std::nextafter(1.0, 2.0), 7.0, -0.0}});
    data.labels = {2, 0};
    data.splits = {Split::Train, Split::Train};
    save_csv(data, dir / "two.csv");
    const Dataset back = load_csv(dir / "two.csv", 3);
    CHECK(back.labels == data.labels);
    CHECK(bit_equal(back.features, data.features));
    CHECK(read_text(dir / "two.csv").rfind("label,f0,f1,f2\n3,", 0) == 0);
}

TEST_CASE("csv fixture class histogram") {
    // Hand count of tests/data/four_class.csv: 30 / 25 / 25 / 20.
    const Dataset data = load_csv(fs::path(EENN_TEST_DATA) / "four_class.csv");
    CHECK(data.size() == 100);
    CHECK(data.classes == 4);
    CHECK(data.dim() == 3);
    CHECK(data.histogram() == std::vector<std::size_t>{30, 25, 25, 20});
    CHECK(data.labels[0] == 1);  // first row is label 2 on disk
    CHECK(data.features.at(0, 1) == 1.4643);
}

TEST_CASE("csv errors") {
    const auto dir = eenn::testing::scratch_dir("csv-errors");
    auto load = [&](const std::string& text, std::optional<std::size_t> classes = std::nullopt) {
        write_text(dir / "bad.csv", text);
        return load_csv(dir / "bad.csv", classes);
    };
    try {
        load("label,f0,x1\n1,2,3\n");
        FAIL("expected schema_error");
    } catch (const Error& e) {
        CHECK(e.code() == "schema_error");
        CHECK(e.context().at("column") == 2);
        CHECK(std::string(e.what()).find("x1") != std::string::npos);
    }
    try {
        load("label,f0\n1,2\n1,abc\n");
        FAIL("expected schema_error");
    } catch (const Error& e) {
        CHECK(e.code() == "schema_error");
        CHECK(e.context().at("line") == 3);
    }
    CHECK(error_code([&] { load("label,f0\n1,2\n3,2\n", 2); }) == "label_error");
    CHECK(error_code([&] { load("label,f0\n0,2\n"); }) == "label_error");
    CHECK(error_code([&] { load("label,f0\n1,2,3\n"); }) == "schema_error");
    CHECK(error_code([&] { load_csv(dir / "missing.csv"); }) == "io_error");
}

TEST_CASE("synthetic data is seeded and well formed") {
    SynthSpec spec;
    const Dataset a = synth_blobs(5, spec), b = synth_blobs(5, spec), c = synth_blobs(6, spec);
    CHECK(bit_equal(a.features, b.features));
    CHECK(a.labels == b.labels);
    CHECK_FALSE(bit_equal(a.features, c.features));
    CHECK(a.size() == spec.classes * spec.per_class);
    for (auto count : a.histogram()) CHECK(count == spec.per_class);
    // Coordinates beyond the latent block carry noise only.
    double tail = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tail += a.features.at(i, spec.dim - 1);
    CHECK(std::abs(tail / static_cast<double>(a.size())) < 0.05);

    spec.latent_dim = spec.dim + 1;
    CHECK(error_code([&] { synth_blobs(1, spec); }) == "schema_error");
}

TEST_CASE("splits are seeded and cover every class") {
    Dataset data = synth_blobs(2, SynthSpec{});
    assign_splits(data, 0.25, 0.1, 9);
    const auto test = data.indices(Split::Test), val = data.indices(Split::Val), train = data.indices(Split::Train);
    CHECK(test.size() == 400);
    CHECK(train.size() + val.size() == 1200);
    CHECK(val.size() == 120);
    for (auto count : data.histogram(Split::Train)) CHECK(count > 0);
    Dataset again = synth_blobs(2, SynthSpec{});
    assign_splits(again, 0.25, 0.1, 9);
    CHECK(again.splits == data.splits);
}

TEST_CASE("spread 0 is perfectly separable") {
    SynthSpec spec;
    spec.classes = 4;
    spec.dim = 6;
    spec.per_class = 30;
    spec.spread = 0.0;
    spec.coarse_groups = 2;
    spec.modes_per_class = 1;
    spec.latent_dim = 0;
    const TrainingData data = eenn::testing::small_task(4, spec);
    ExitNetwork net({6, 4, {16, 16}, 1}, 4);
    TrainConfig cfg;
    cfg.regime = Regime::Separate;
    cfg.seed = 4;
    cfg.max_epochs = 40;
    cfg.patience = 40;
    run_regime(net, data, cfg);
    for (int mu = 1; mu <= 2; ++mu) CHECK(accuracy(net.predict(data.test.x, mu), data.test.y) == 1.0);
}

TEST_CASE("config round-trip and strictness") {
    const RunConfig cfg = config_from_json(tiny_config("runs/x"));
    CHECK(cfg.model.widths == std::vector<std::size_t>{2, 8, 16});
    CHECK(cfg.train.seed == 3);
    CHECK(cfg.train.regime == Regime::ProposedEwc);
    const RunConfig back = config_from_json(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
    CHECK(back.train == cfg.train);
    CHECK(back.data.synthetic == cfg.data.synthetic);

    const RunConfig defaults = config_from_json(json::object());
    CHECK(config_to_json(config_from_json(config_to_json(defaults))) == config_to_json(defaults));

    auto code_for = [](const json& patch) {
        json doc = tiny_config("runs/x");
        doc.merge_patch(patch);
        return error_code([&] { config_from_json(doc); });
    };
    CHECK(code_for(json{{"extra", 1}}) == "schema_error");
    CHECK(code_for(json{{"train", {{"lamda", 1}}}}) == "schema_error");
    CHECK(code_for(json{{"train", {{"regime", "online"}}}}) == "schema_error");
    CHECK(code_for(json{{"train", {{"learning_rate", "fast"}}}}) == "schema_error");
    CHECK(code_for(json{{"evaluator", {{"thresholds", {0.5, 1.5}}}}}) == "schema_error");
    CHECK(code_for(json{{"evaluator", {{"budgets", {0.0}}}}}) == "schema_error");
    CHECK(code_for(json{{"model", {{"input_dim", 9}}}}) == "schema_error");
    CHECK(code_for(json{{"data", {{"source", "cifar"}}}}) == "schema_error");

    const auto dir = eenn::testing::scratch_dir("config");
    write_text(dir / "broken.json", "{\"seed\": ");
    CHECK(error_code([&] { load_config(dir / "broken.json"); }) == "schema_error");
}

TEST_CASE("train writes a complete run and refuses to overwrite it") {
    const auto dir = eenn::testing::scratch_dir("cli-train");
    const fs::path out = dir / "run";
    CliOptions options{write_config(dir, tiny_config(out)), std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream err;
    REQUIRE(run_command("train", options, err) == 0);
    CHECK(err.str().empty());
    const fs::path run = out / "ewc-lambda-100";
    for (const char* name : {"checkpoint.json", "stages.csv", "stage_warmup.json", "stage_1.json", "stage_3.json",
                             "summary.json", "budget_table.csv", "exit_ratios.csv", "budget_curve.csv", "flops.csv",
                             "fisher.csv"}) {
        CHECK_MESSAGE(fs::exists(run / name), name);
    }
    CHECK(fs::exists(out / "config.json"));
    const json summary = json::parse(read_text(run / "summary.json"));
    CHECK(summary.at("forgetting_to_last_stage").size() == 3);
    CHECK(count_lines(read_text(run / "exit_ratios.csv")) == 1 + 3 * 3);
    CHECK(read_text(run / "fisher.csv").rfind("param_id,exit,fisher_value\n", 0) == 0);

    const auto before = read_tree(out);
    std::ostringstream again;
    CHECK(run_command("train", options, again) == 1);
    const json error = json::parse(again.str());
    CHECK(error.at("code") == "run_exists");
    CHECK(error.at("context").at("path") == out.string());
    CHECK(read_tree(out) == before);
}

TEST_CASE("rerunning with the same config and seed is byte-identical") {
    const auto dir = eenn::testing::scratch_dir("cli-rerun");
    const fs::path out = dir / "run";
    CliOptions options{write_config(dir, tiny_config(out)), std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream err;
    REQUIRE(run_command("train", options, err) == 0);
    const auto first = read_tree(out);
    fs::rename(out, dir / "first");
    REQUIRE(run_command("train", options, err) == 0);
    CHECK(read_tree(out) == first);

    options.seed = 4;
    options.out = dir / "other-seed";
    REQUIRE(run_command("train", options, err) == 0);
    CHECK(read_text(dir / "other-seed" / "ewc-lambda-100" / "checkpoint.json") !=
          first.at("ewc-lambda-100/checkpoint.json"));
}

TEST_CASE("a lambda grid emits one run per value") {
    const auto dir = eenn::testing::scratch_dir("cli-grid");
    json doc = tiny_config(dir / "grid");
    doc["train"]["lambda_grid"] = {10, 100, 1000};
    CliOptions options{write_config(dir, doc), std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream err;
    REQUIRE(run_command("train", options, err) == 0);
    std::set<std::string> runs;
    for (const auto& entry : fs::directory_iterator(dir / "grid")) {
        if (entry.is_directory()) runs.insert(entry.path().filename().string());
    }
    CHECK(runs == std::set<std::string>{"ewc-lambda-10", "ewc-lambda-100", "ewc-lambda-1000"});
}

TEST_CASE("compare emits one budget row per regime") {
    const auto dir = eenn::testing::scratch_dir("cli-compare");
    CliOptions options{write_config(dir, tiny_config(dir / "cmp")), std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream err;
    REQUIRE(run_command("compare", options, err) == 0);
    std::istringstream table(read_text(dir / "cmp" / "budget_table.csv"));
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(table, line)) rows.push_back(line);
    REQUIRE(rows.size() == 7);
    CHECK(rows[0] == "regime,budget_25,budget_50,budget_75,budget_100");
    const std::vector<std::string> regimes{"disjoint", "branch-wise", "separate", "joint", "ewc", "lwf"};
    for (std::size_t i = 0; i < regimes.size(); ++i) {
        CHECK(rows[i + 1].rfind(regimes[i] + ",", 0) == 0);
        CHECK(std::count(rows[i + 1].begin(), rows[i + 1].end(), ',') == 4);
        CHECK(fs::exists(dir / "cmp" / regimes[i] / "summary.json"));
    }
}

TEST_CASE("evaluate and fisher-dump reuse a checkpoint") {
    const auto dir = eenn::testing::scratch_dir("cli-evaluate");
    CliOptions train{write_config(dir, tiny_config(dir / "train")), std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream err;
    REQUIRE(run_command("train", train, err) == 0);
    const fs::path checkpoint = dir / "train" / "ewc-lambda-100" / "checkpoint.json";

    CliOptions eval{train.config, std::nullopt, dir / "eval", checkpoint};
    REQUIRE(run_command("evaluate", eval, err) == 0);
    CHECK(read_text(dir / "eval" / "exit_ratios.csv") == read_text(dir / "train" / "ewc-lambda-100" / "exit_ratios.csv"));

    CliOptions dump{train.config, std::nullopt, dir / "dump", checkpoint};
    REQUIRE(run_command("fisher-dump", dump, err) == 0);
    const std::string fisher = read_text(dir / "dump" / "fisher.csv");
    // One row per scalar of segments 1..nu and IC nu, for nu = 1..3.
    const std::size_t seg1 = 8 * 2 + 2, seg2 = 2 * 8 + 8, seg3 = 8 * 16 + 16;
    const std::size_t ic1 = 2 * 4 + 4, ic2 = 8 * 4 + 4, ic3 = 16 * 4 + 4;
    CHECK(count_lines(fisher) == 1 + (seg1 + ic1) + (seg1 + seg2 + ic2) + (seg1 + seg2 + seg3 + ic3));

    CliOptions missing{train.config, std::nullopt, dir / "eval2", std::nullopt};
    std::ostringstream usage;
    CHECK(run_command("evaluate", missing, usage) == 2);
    CHECK(json::parse(usage.str()).at("code") == "usage_error");
}

TEST_CASE("errors become a JSON document and a nonzero exit code") {
    const auto dir = eenn::testing::scratch_dir("cli-errors");
    std::ostringstream err;
    CHECK(run_command("train", CliOptions{dir / "nope.json"}, err) == 1);
    const json doc = json::parse(err.str());
    CHECK(doc.at("code") == "io_error");
    CHECK(doc.contains("message"));
    CHECK(doc.at("context").at("path") == (dir / "nope.json").string());

    std::ostringstream unknown;
    CHECK(run_command("serve", CliOptions{dir / "nope.json"}, unknown) == 2);
    CHECK(json::parse(unknown.str()).at("code") == "usage_error");
}
