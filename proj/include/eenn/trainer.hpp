#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eenn/dataset.hpp"
#include "eenn/model.hpp"
#include "eenn/objectives.hpp"

namespace eenn {

/// How the EWC quadratic enters the update. `Proximal` applies the exact
/// minimiser of lr*lambda*F*(theta-theta*)^2 around the momentum step,
/// which stays stable for any lambda*F; `Gradient` adds 2*lambda*F*(theta-theta*)
/// to the gradient like every other term.
enum class EwcStep { Proximal, Gradient };

std::string_view to_string(EwcStep step) noexcept;
EwcStep parse_ewc_step(std::string_view text);

struct TrainConfig {
    Regime regime = Regime::ProposedLwf;
    double lambda = 10000.0;
    double rho = 0.2;
    bool warm_up = true;
    double learning_rate = 0.015;
    double momentum = 0.9;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 15;
    std::size_t patience = 10;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
    EwcScope ewc_scope;
    EwcStep ewc_step = EwcStep::Proximal;
    /// Weight on each earlier exit's CE in the separate baseline.
    double previous_ce_weight = 1.0;

    /// s = 1 for proposed-ewc, 0 otherwise.
    LossConfig loss() const;
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct TrainingData {
    SplitData train;
    SplitData val;
    SplitData test;
    std::size_t classes = 0;
};

TrainingData make_training_data(const Dataset& data);

/// One row per epoch per reported exit.
struct EpochRecord {
    std::size_t epoch = 0;
    int exit = 0;
    double train_ce = 0.0;
    double val_ce = 0.0;
    double regularizer = 0.0;
};

/// Drift of protected backbone scalars from their anchors, grouped by
/// accumulated-Fisher quartile (quartile 0 = lowest Fisher).
struct DriftQuartile {
    std::size_t count = 0;
    double mean_fisher = 0.0;
    double mean_sq_drift = 0.0;
    double drift_norm = 0.0;
};

struct StageReport {
    /// 0 for warm-up and for the single joint phase.
    int stage = 0;
    std::string phase;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    std::vector<int> reported_exits;
    std::vector<double> final_train_ce;
    std::vector<double> final_val_ce;
    /// Validation CE of the monitored exit, epoch 0 (before any update) first.
    std::vector<double> monitor_trace;
    /// Mean unweighted regularizer value per epoch (epochs 1..).
    std::vector<double> regularizer_trace;
    /// Test accuracy of every exit after the stage.
    std::vector<double> test_accuracy;
    std::vector<DriftQuartile> drift;
    std::vector<EpochRecord> epochs;
};

/// Regularizer state carried between stages.
struct RegularizerState {
    FisherStore fisher;
    std::optional<ParamSnapshot> snapshot;
    std::optional<TeacherCache> teacher;
};

struct RunResult {
    std::optional<StageReport> warm_up;
    std::vector<StageReport> stages;
    FisherStore fisher;
};

/// Quadratic anchor handled implicitly by SgdMomentum::step.
struct ProximalAnchor {
    const ParamSnapshot* anchor = nullptr;
    const FisherValues* fisher = nullptr;
    double lambda = 0.0;
};

/// Classical momentum: v <- momentum*v + g, theta <- theta - lr*v. Only
/// trainable parameters are touched; velocity starts at zero.
///
/// With a ProximalAnchor, anchored scalars then take
/// theta <- (theta + 2*lr*lambda*F*theta*) / (1 + 2*lr*lambda*F).
class SgdMomentum {
public:
    SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}

    void step(ExitNetwork& net, const Gradients& grads, const ProximalAnchor* prox = nullptr);
    const std::map<ParamId, Tensor>& velocity() const noexcept { return velocity_; }

private:
    double lr_;
    double momentum_;
    std::map<ParamId, Tensor> velocity_;
};

/// Accuracy of argmax(probs) (ties go to the lowest class index).
double accuracy(const Tensor& probs, const std::vector<int>& labels);

/// Trains segments 1..M and IC M on the final exit's CE.
StageReport warm_up(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg);

/// One stage of a staged regime (proposed-*, separate, branch-wise, disjoint).
/// Restores the best-validation parameters before returning.
StageReport train_stage(ExitNetwork& net, const TrainingData& data, int stage, const TrainConfig& cfg,
                        const RegularizerState& state);

/// Optional warm-up, then stages 1..M with EWC or LwF state built from the end
/// of each previous stage.
RunResult run_sequential(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg);

/// disjoint | branch-wise | separate | joint.
RunResult run_baseline(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg);

/// Dispatches on cfg.regime.
RunResult run_regime(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg);

/// acc_nu(after stage nu) - acc_nu(after stage mu), both 1-based.
double forgetting(const RunResult& run, int nu, int mu);

}  // namespace eenn
