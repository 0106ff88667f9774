#include "eenn/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "eenn/artifacts.hpp"
#include "eenn/error.hpp"
#include "eenn/trainer.hpp"

namespace eenn {

namespace {

int argmax(std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

void check_predictions(const ExitPredictions& preds, const FlopsTable& flops) {
    if (preds.exits() == 0) throw Error("invalid_argument", "no exit predictions");
    if (preds.exits() != flops.exits()) {
        throw Error("dimension_error", "predictions cover " + std::to_string(preds.exits()) + " exits, FLOPs table " +
                                           std::to_string(flops.exits()));
    }
    for (const Tensor& p : preds.probs) {
        if (p.rows() != preds.samples()) throw Error("dimension_error", "prediction rows do not match label count");
    }
}

std::string budget_label(double budget) { return "budget_" + format_double(budget * 100.0); }

}  // namespace

FlopsTable flops_of(const Architecture& arch) {
    arch.validate();
    FlopsTable table;
    std::uint64_t backbone_macs = 0, backbone_adds = 0;
    std::size_t in = arch.input_dim;
    for (std::size_t s = 0; s < arch.exits(); ++s) {
        const std::size_t width = arch.widths[s];
        for (std::size_t l = 0; l < arch.layers_per_segment; ++l) {
            backbone_macs += static_cast<std::uint64_t>(in) * width;
            backbone_adds += width;
            in = width;
        }
        table.macs.push_back(backbone_macs + static_cast<std::uint64_t>(width) * arch.classes);
        table.bias_adds.push_back(backbone_adds + arch.classes);
    }
    return table;
}

double ExitPolicy::threshold_for(int exit) const {
    if (thresholds.size() == 1) return thresholds.front();
    return thresholds.at(static_cast<std::size_t>(exit - 1));
}

void ExitPolicy::validate(std::size_t exits) const {
    if (thresholds.empty() || (thresholds.size() != 1 && thresholds.size() != exits)) {
        throw Error("schema_error", "exit policy needs one threshold or one per exit");
    }
    for (double t : thresholds) {
        if (!(t >= 0.0 && t <= 1.0)) throw Error("schema_error", "thresholds must lie in [0, 1]");
    }
}

ExitPredictions predict_exits(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels) {
    return {net.predict_all(x), labels};
}

double confidence(std::span<const double> probs, Confidence measure) {
    if (measure == Confidence::MaxProbability) return *std::max_element(probs.begin(), probs.end());
    double entropy = 0.0;
    for (double p : probs) {
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return 1.0 - entropy / std::log(static_cast<double>(probs.size()));
}

double expected_flops(const std::vector<double>& ratios, const FlopsTable& flops) {
    double total = 0.0;
    for (std::size_t k = 0; k < ratios.size(); ++k) total += ratios[k] * static_cast<double>(flops.macs[k]);
    return total;
}

ThresholdResult threshold_inference(const ExitPredictions& preds, const FlopsTable& flops, const ExitPolicy& policy) {
    check_predictions(preds, flops);
    policy.validate(preds.exits());
    const int m = static_cast<int>(preds.exits());
    const std::size_t n = preds.samples();
    ThresholdResult result;
    result.exit_counts.assign(preds.exits(), 0);
    result.exit_index.reserve(n);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        int taken = m;
        for (int mu = 1; mu < m; ++mu) {
            const auto row = preds.probs[static_cast<std::size_t>(mu - 1)].row(i);
            if (confidence(row, policy.measure) >= policy.threshold_for(mu)) {
                taken = mu;
                break;
            }
        }
        result.exit_index.push_back(taken);
        ++result.exit_counts[static_cast<std::size_t>(taken - 1)];
        if (argmax(preds.probs[static_cast<std::size_t>(taken - 1)].row(i)) == preds.labels[i]) ++correct;
    }
    const auto denom = static_cast<double>(n);
    result.accuracy = n ? static_cast<double>(correct) / denom : 0.0;
    for (auto c : result.exit_counts) result.exit_ratios.push_back(n ? static_cast<double>(c) / denom : 0.0);
    result.mean_flops = expected_flops(result.exit_ratios, flops);
    return result;
}

ThresholdResult threshold_inference(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels,
                                    const ExitPolicy& policy) {
    return threshold_inference(predict_exits(net, x, labels), flops_of(net), policy);
}

int exit_for_budget(const FlopsTable& flops, double budget) {
    if (!(budget > 0.0 && budget <= 1.0)) {
        throw Error("budget_error", "budget must be in (0, 1]", {{"budget", budget}});
    }
    if (budget == 1.0) return static_cast<int>(flops.exits());
    const double limit = budget * static_cast<double>(flops.total());
    int chosen = 0;
    for (std::size_t k = 0; k < flops.exits(); ++k) {
        if (static_cast<double>(flops.macs[k]) <= limit) chosen = static_cast<int>(k) + 1;
    }
    if (chosen == 0) {
        throw Error("budget_error", "no exit fits within the budget",
                    {{"budget", budget}, {"limit", limit}, {"exit1_macs", flops.macs.front()}});
    }
    return chosen;
}

double accuracy_at_budget(const ExitPredictions& preds, const FlopsTable& flops, double budget) {
    check_predictions(preds, flops);
    const int exit = exit_for_budget(flops, budget);
    return accuracy(preds.probs[static_cast<std::size_t>(exit - 1)], preds.labels);
}

double accuracy_at_budget(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels, double budget) {
    return accuracy_at_budget(predict_exits(net, x, labels), flops_of(net), budget);
}

std::vector<CurvePoint> budget_curve(const ExitPredictions& preds, const FlopsTable& flops,
                                     const std::vector<double>& thresholds, Confidence measure) {
    if (thresholds.empty()) throw Error("invalid_argument", "budget curve needs at least one threshold");
    std::vector<CurvePoint> points;
    for (double tau : thresholds) {
        const ThresholdResult r = threshold_inference(preds, flops, ExitPolicy{measure, {tau}});
        points.push_back({tau, r.mean_flops, r.accuracy});
    }
    std::stable_sort(points.begin(), points.end(), [](const CurvePoint& a, const CurvePoint& b) {
        return a.mean_flops != b.mean_flops ? a.mean_flops < b.mean_flops : a.threshold < b.threshold;
    });
    return points;
}

BudgetReport evaluate(const ExitPredictions& preds, const FlopsTable& flops, const std::vector<double>& budgets,
                      const std::vector<double>& thresholds, Confidence measure) {
    BudgetReport report;
    report.flops = flops;
    report.budgets = budgets;
    for (double b : budgets) {
        try {
            const int exit = exit_for_budget(flops, b);
            report.budget_exit.push_back(exit);
            report.budget_accuracy.push_back(accuracy(preds.probs[static_cast<std::size_t>(exit - 1)], preds.labels));
        } catch (const Error& e) {
            if (e.code() != "budget_error" || !(b > 0.0 && b <= 1.0)) throw;
            report.budget_exit.push_back(0);
            report.budget_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    report.thresholds = thresholds;
    for (double tau : thresholds) report.sweep.push_back(threshold_inference(preds, flops, ExitPolicy{measure, {tau}}));
    report.curve = budget_curve(preds, flops, thresholds, measure);
    return report;
}

std::string budget_table_csv(const std::vector<std::string>& labels, const std::vector<BudgetReport>& reports) {
    if (labels.size() != reports.size()) throw Error("invalid_argument", "budget table labels/reports mismatch");
    std::ostringstream out;
    out << "regime";
    if (!reports.empty()) {
        for (double b : reports.front().budgets) out << ',' << budget_label(b);
    }
    out << '\n';
    for (std::size_t i = 0; i < reports.size(); ++i) {
        out << labels[i];
        for (double acc : reports[i].budget_accuracy) out << ',' << (std::isnan(acc) ? "NA" : format_double(acc));
        out << '\n';
    }
    return out.str();
}

std::string exit_ratios_csv(const BudgetReport& report) {
    std::ostringstream out;
    out << "threshold,exit,count,ratio\n";
    for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
        const ThresholdResult& r = report.sweep[t];
        for (std::size_t k = 0; k < r.exit_counts.size(); ++k) {
            out << format_double(report.thresholds[t]) << ',' << (k + 1) << ',' << r.exit_counts[k] << ','
                << format_double(r.exit_ratios[k]) << '\n';
        }
    }
    return out.str();
}

std::string budget_curve_csv(const BudgetReport& report) {
    std::ostringstream out;
    out << "threshold,mean_flops,accuracy\n";
    for (const CurvePoint& p : report.curve) {
        out << format_double(p.threshold) << ',' << format_double(p.mean_flops) << ',' << format_double(p.accuracy) << '\n';
    }
    return out.str();
}

std::string flops_csv(const FlopsTable& flops) {
    std::ostringstream out;
    out << "exit,macs,bias_adds\n";
    for (std::size_t k = 0; k < flops.exits(); ++k) {
        out << (k + 1) << ',' << flops.macs[k] << ',' << flops.bias_adds[k] << '\n';
    }
    return out.str();
}

}  // namespace eenn
