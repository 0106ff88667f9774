#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eenn/model.hpp"

namespace eenn {

/// Multiply-accumulate cost of reaching each exit, computed from layer shapes.
/// A dense layer in->out costs in*out MACs; its `out` bias additions are kept
/// in a separate column.
struct FlopsTable {
    std::vector<std::uint64_t> macs;       // cumulative, per exit
    std::vector<std::uint64_t> bias_adds;  // cumulative, per exit

    std::uint64_t total() const { return macs.back(); }
    std::size_t exits() const noexcept { return macs.size(); }
};

FlopsTable flops_of(const Architecture& arch);
inline FlopsTable flops_of(const ExitNetwork& net) { return flops_of(net.arch()); }

enum class Confidence { MaxProbability, NormalizedEntropy };

/// Exit at the first mu whose confidence >= threshold (ties exit early);
/// the last exit always accepts.
struct ExitPolicy {
    Confidence measure = Confidence::MaxProbability;
    /// One global threshold, or one per exit.
    std::vector<double> thresholds{0.5};

    double threshold_for(int exit) const;
    void validate(std::size_t exits) const;
};

/// Per-exit probability matrices for one evaluation set, so that a τ sweep
/// does not rerun the network. Tests can fill this directly.
struct ExitPredictions {
    std::vector<Tensor> probs;
    std::vector<int> labels;

    std::size_t exits() const noexcept { return probs.size(); }
    std::size_t samples() const noexcept { return labels.size(); }
};

ExitPredictions predict_exits(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels);

double confidence(std::span<const double> probs, Confidence measure);

struct ThresholdResult {
    double accuracy = 0.0;
    std::vector<std::size_t> exit_counts;
    std::vector<double> exit_ratios;
    double mean_flops = 0.0;
    /// 1-based exit taken by each sample.
    std::vector<int> exit_index;
};

/// mean FLOPs = sum_mu ratio_mu * macs_mu, summed in exit order.
double expected_flops(const std::vector<double>& ratios, const FlopsTable& flops);

ThresholdResult threshold_inference(const ExitPredictions& preds, const FlopsTable& flops, const ExitPolicy& policy);
ThresholdResult threshold_inference(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels,
                                    const ExitPolicy& policy);

/// Deepest exit whose cumulative MACs fit within budget * total (1-based).
int exit_for_budget(const FlopsTable& flops, double budget);
double accuracy_at_budget(const ExitPredictions& preds, const FlopsTable& flops, double budget);
double accuracy_at_budget(const ExitNetwork& net, const Tensor& x, const std::vector<int>& labels, double budget);

struct CurvePoint {
    double threshold = 0.0;
    double mean_flops = 0.0;
    double accuracy = 0.0;
};

/// One point per τ (global threshold), sorted by mean FLOPs then τ.
std::vector<CurvePoint> budget_curve(const ExitPredictions& preds, const FlopsTable& flops,
                                     const std::vector<double>& thresholds, Confidence measure = Confidence::MaxProbability);

/// Static per-exit accuracies at fixed budgets plus the dynamic τ sweep.
struct BudgetReport {
    std::vector<double> budgets;
    /// NaN where no exit fits the budget.
    std::vector<double> budget_accuracy;
    std::vector<int> budget_exit;
    std::vector<double> thresholds;
    std::vector<ThresholdResult> sweep;
    std::vector<CurvePoint> curve;
    FlopsTable flops;
};

BudgetReport evaluate(const ExitPredictions& preds, const FlopsTable& flops, const std::vector<double>& budgets,
                      const std::vector<double>& thresholds, Confidence measure = Confidence::MaxProbability);

/// "regime,budget_25,..." rows; `labels` and `reports` are parallel.
std::string budget_table_csv(const std::vector<std::string>& labels, const std::vector<BudgetReport>& reports);
/// "threshold,exit,count,ratio".
std::string exit_ratios_csv(const BudgetReport& report);
/// "threshold,mean_flops,accuracy", sorted by mean FLOPs.
std::string budget_curve_csv(const BudgetReport& report);
/// "exit,macs,bias_adds".
std::string flops_csv(const FlopsTable& flops);

}  // namespace eenn
