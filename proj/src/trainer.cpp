#include "eenn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "eenn/error.hpp"
#include "eenn/rng.hpp"

namespace eenn {

namespace {

constexpr double kDivergenceThreshold = 1e6;

struct BatchLoss {
    /// Differentiated term.
    Var loss;
    double regularizer = 0.0;
    /// Value checked by the divergence guard (the full objective).
    double objective = 0.0;
};

BatchLoss plain(const GradTape& tape, Var loss) { return {loss, 0.0, tape.value(loss).item()}; }

using LossBuilder =
    std::function<BatchLoss(GradTape&, Var x, std::span<const int> y, std::span<const std::size_t> rows)>;

struct Phase {
    int stage = 0;
    std::uint64_t shuffle_key = 0;
    std::string name;
    /// Exit whose validation CE drives early stopping; 0 means the sum over all exits.
    int monitor_exit = 0;
    std::optional<ProximalAnchor> proximal;
    std::vector<int> reported_exits;
    LossBuilder loss;
};

std::vector<double> per_exit_ce(const ExitNetwork& net, const SplitData& split) {
    std::vector<double> out;
    for (const Tensor& probs : net.predict_all(split.x)) out.push_back(cross_entropy(probs, split.y));
    return out;
}

double monitored(const std::vector<double>& ce, int monitor_exit) {
    if (monitor_exit > 0) return ce[static_cast<std::size_t>(monitor_exit - 1)];
    return std::accumulate(ce.begin(), ce.end(), 0.0);
}

std::vector<int> exits_upto(int mu) {
    std::vector<int> out(static_cast<std::size_t>(mu));
    std::iota(out.begin(), out.end(), 1);
    return out;
}

StageReport run_phase(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg, const Phase& phase) {
    cfg.validate();
    if (data.train.size() == 0 || data.val.size() == 0) {
        throw Error("invalid_argument", "training needs non-empty train and validation splits");
    }
    StageReport report;
    report.stage = phase.stage;
    report.phase = phase.name;
    report.reported_exits = phase.reported_exits;

    const Scope scope = net.trainable_scope();
    SgdMomentum optimizer(cfg.learning_rate, cfg.momentum);

    std::vector<double> val_ce = per_exit_ce(net, data.val);
    double best = monitored(val_ce, phase.monitor_exit);
    report.monitor_trace.push_back(best);
    std::optional<ParamSnapshot> best_params;
    if (!scope.empty()) best_params = net.snapshot(scope);

    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, "shuffle", (phase.shuffle_key << 32) | epoch));
        rng.shuffle(order);

        double reg_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            std::span<const std::size_t> rows(order.data() + start, stop - start);
            std::vector<int> y;
            y.reserve(rows.size());
            for (auto r : rows) y.push_back(data.train.y[r]);

            GradTape tape;
            BatchLoss batch;
            nlohmann::json where = {{"stage", phase.stage}, {"phase", phase.name}, {"epoch", epoch}, {"batch", batches}};
            try {
                batch = phase.loss(tape, tape.constant(data.train.x.select_rows(rows)), y, rows);
            } catch (const Error& e) {
                if (e.code() != "numeric_error") throw;
                throw Error("divergence", std::string("non-finite value during training: ") + e.what(), where);
            }
            const double value = batch.objective;
            if (!(value <= kDivergenceThreshold)) {
                where["loss"] = std::isfinite(value) ? nlohmann::json(value) : nlohmann::json("non-finite");
                throw Error("divergence", "training loss exceeded 1e6", where);
            }
            optimizer.step(net, tape.backward(batch.loss), phase.proximal ? &*phase.proximal : nullptr);
            reg_total += batch.regularizer;
            ++batches;
        }

        const std::vector<double> train_ce = per_exit_ce(net, data.train);
        val_ce = per_exit_ce(net, data.val);
        const double reg_mean = reg_total / static_cast<double>(batches);
        report.regularizer_trace.push_back(reg_mean);
        for (int e : phase.reported_exits) {
            const auto k = static_cast<std::size_t>(e - 1);
            report.epochs.push_back({epoch, e, train_ce[k], val_ce[k], reg_mean});
        }
        report.epochs_run = epoch;

        const double current = monitored(val_ce, phase.monitor_exit);
        report.monitor_trace.push_back(current);
        if (current < best) {
            best = current;
            report.best_epoch = epoch;
            since_best = 0;
            if (best_params) best_params = net.snapshot(scope);
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (best_params) net.restore(*best_params);

    const std::vector<double> train_ce = per_exit_ce(net, data.train);
    val_ce = per_exit_ce(net, data.val);
    for (int e : phase.reported_exits) {
        report.final_train_ce.push_back(train_ce[static_cast<std::size_t>(e - 1)]);
        report.final_val_ce.push_back(val_ce[static_cast<std::size_t>(e - 1)]);
    }
    for (const Tensor& probs : net.predict_all(data.test.x)) report.test_accuracy.push_back(accuracy(probs, data.test.y));
    return report;
}

std::vector<DriftQuartile> drift_by_fisher_quartile(const ExitNetwork& net, const ParamSnapshot& anchor,
                                                    const FisherValues& fisher) {
    struct Entry {
        double fisher;
        double sq_drift;
    };
    std::vector<Entry> entries;
    for (const auto& [id, theta_star] : anchor.values) {
        if (id.group != ParamId::Group::Segment) continue;
        const Tensor& theta = net.param(id);
        const Tensor& f = fisher.at(id);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double d = theta[k] - theta_star[k];
            entries.push_back({f[k], d * d});
        }
    }
    if (entries.empty()) return {};
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.fisher < b.fisher; });
    std::vector<DriftQuartile> out(4);
    const std::size_t total = entries.size();
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t lo = q * total / 4, hi = (q + 1) * total / 4;
        DriftQuartile& dq = out[q];
        dq.count = hi - lo;
        double f_sum = 0.0, d_sum = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            f_sum += entries[i].fisher;
            d_sum += entries[i].sq_drift;
        }
        if (dq.count > 0) {
            dq.mean_fisher = f_sum / static_cast<double>(dq.count);
            dq.mean_sq_drift = d_sum / static_cast<double>(dq.count);
        }
        dq.drift_norm = std::sqrt(d_sum);
    }
    return out;
}

}  // namespace

std::string_view to_string(EwcStep step) noexcept { return step == EwcStep::Proximal ? "proximal" : "gradient"; }

EwcStep parse_ewc_step(std::string_view text) {
    if (text == "proximal") return EwcStep::Proximal;
    if (text == "gradient") return EwcStep::Gradient;
    throw Error("schema_error", "unknown ewc_step '" + std::string(text) + "'");
}

LossConfig TrainConfig::loss() const { return {regime == Regime::ProposedEwc ? 1 : 0, lambda, rho}; }

void TrainConfig::validate() const {
    loss().validate();
    if (!(learning_rate > 0.0)) throw Error("schema_error", "learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("schema_error", "momentum must be in [0, 1)");
    if (batch_size == 0) throw Error("schema_error", "batch_size must be positive");
    if (patience < 1) throw Error("schema_error", "patience must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
        throw Error("schema_error", "validation_fraction must be in (0, 0.5)");
    }
    if (!(previous_ce_weight >= 0.0)) throw Error("schema_error", "previous_ce_weight must be >= 0");
}

TrainingData make_training_data(const Dataset& data) {
    TrainingData out;
    out.train = take(data, Split::Train);
    out.val = take(data, Split::Val);
    out.test = take(data, Split::Test);
    out.classes = data.classes;
    return out;
}

void SgdMomentum::step(ExitNetwork& net, const Gradients& grads, const ProximalAnchor* prox) {
    for (const auto& [id, g] : grads) {
        if (!net.trainable(id)) continue;
        Tensor& theta = net.param(id);
        auto [it, inserted] = velocity_.try_emplace(id, Tensor::zeros_like(theta));
        Tensor& v = it->second;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            v[k] = momentum_ * v[k] + g[k];
            theta[k] -= lr_ * v[k];
        }
    }
    if (!prox || prox->lambda == 0.0) return;
    for (const auto& [id, theta_star] : prox->anchor->values) {
        if (!net.trainable(id)) continue;
        Tensor& theta = net.param(id);
        const Tensor& f = prox->fisher->at(id);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double stiffness = 2.0 * lr_ * prox->lambda * f[k];
            theta[k] = (theta[k] + stiffness * theta_star[k]) / (1.0 + stiffness);
        }
    }
}

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        auto row = probs.row(r);
        const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
        if (pred == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

StageReport warm_up(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg) {
    const int m = static_cast<int>(net.exits());
    net.set_trainable(m, Regime::WarmUp);
    Phase phase;
    phase.stage = 0;
    phase.shuffle_key = 0;
    phase.name = "warm-up";
    phase.monitor_exit = m;
    phase.reported_exits = {m};
    phase.loss = [&](GradTape& tape, Var x, std::span<const int> y, std::span<const std::size_t>) {
        return plain(tape, cross_entropy(tape, net.forward_to_exit(tape, x, m), y));
    };
    return run_phase(net, data, cfg, phase);
}

StageReport train_stage(ExitNetwork& net, const TrainingData& data, int stage, const TrainConfig& cfg,
                        const RegularizerState& state) {
    const Regime regime = cfg.regime;
    if (regime == Regime::Joint || regime == Regime::WarmUp) {
        throw Error("invalid_argument", std::string(to_string(regime)) + " is not a staged regime");
    }
    net.set_trainable(stage, regime);
    const LossConfig loss_cfg = cfg.loss();

    Phase phase;
    phase.stage = stage;
    phase.shuffle_key = static_cast<std::uint64_t>(stage);
    phase.name = "stage";
    phase.monitor_exit = stage;
    phase.reported_exits = exits_upto(stage);

    std::optional<FisherValues> fisher_acc;
    const bool ewc = regime == Regime::ProposedEwc;
    const bool lwf = regime == Regime::ProposedLwf;
    if (ewc && stage > 1) {
        if (!state.snapshot) throw Error("missing_state", "EWC stage needs a parameter snapshot", {{"stage", stage}});
        Scope anchored;
        for (const auto& [id, t] : state.snapshot->values) {
            (id.group == ParamId::Group::Segment ? anchored.segments : anchored.classifiers).insert(id.block);
        }
        fisher_acc = state.fisher.accumulated(stage, net, anchored);
    }
    const bool proximal = ewc && cfg.ewc_step == EwcStep::Proximal;
    if (proximal && fisher_acc) phase.proximal = ProximalAnchor{&*state.snapshot, &*fisher_acc, cfg.lambda};
    if (lwf && stage > 1 && !state.teacher) {
        throw Error("missing_state", "LwF stage needs a teacher cache", {{"stage", stage}});
    }

    switch (regime) {
        case Regime::ProposedEwc:
        case Regime::ProposedLwf:
            phase.loss = [&, stage](GradTape& tape, Var x, std::span<const int> y, std::span<const std::size_t> rows) {
                const std::vector<Var> probs = net.forward_exits(tape, x, stage);
                Var ce = cross_entropy(tape, probs.back(), y);
                Var zero = tape.constant(Tensor::scalar(0.0));
                if (ewc && proximal) {
                    const double penalty = fisher_acc ? ewc_penalty(net, *state.snapshot, *fisher_acc) : 0.0;
                    const double ce_value = tape.value(ce).item();
                    return BatchLoss{ce, penalty, total_stage_loss(ce_value, penalty, 0.0, loss_cfg)};
                }
                Var penalty = ewc ? (fisher_acc ? ewc_penalty(tape, net, *state.snapshot, *fisher_acc) : zero)
                                  : (stage > 1 ? lwf_penalty(tape, probs, *state.teacher, rows, stage) : zero);
                Var total = ewc ? total_stage_loss(tape, ce, penalty, zero, loss_cfg)
                                : total_stage_loss(tape, ce, zero, penalty, loss_cfg);
                return BatchLoss{total, tape.value(penalty).item(), tape.value(total).item()};
            };
            break;
        case Regime::Separate:
            phase.loss = [&, stage](GradTape& tape, Var x, std::span<const int> y, std::span<const std::size_t>) {
                const std::vector<Var> probs = net.forward_exits(tape, x, stage);
                Var total = cross_entropy(tape, probs.back(), y);
                for (int nu = 1; nu < stage; ++nu) {
                    Var term = cross_entropy(tape, probs[static_cast<std::size_t>(nu - 1)], y);
                    total = tape.add(total, tape.scale(term, cfg.previous_ce_weight));
                }
                return plain(tape, total);
            };
            break;
        case Regime::BranchWise:
        case Regime::Disjoint:
            phase.loss = [&, stage](GradTape& tape, Var x, std::span<const int> y, std::span<const std::size_t>) {
                return plain(tape, cross_entropy(tape, net.forward_to_exit(tape, x, stage), y));
            };
            break;
        default:
            break;
    }

    StageReport report = run_phase(net, data, cfg, phase);
    if (ewc && fisher_acc) report.drift = drift_by_fisher_quartile(net, *state.snapshot, *fisher_acc);
    return report;
}

RunResult run_sequential(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg) {
    if (cfg.regime != Regime::ProposedEwc && cfg.regime != Regime::ProposedLwf) {
        throw Error("invalid_argument", "run_sequential needs proposed-ewc or proposed-lwf");
    }
    cfg.validate();
    RunResult result;
    if (cfg.warm_up) result.warm_up = warm_up(net, data, cfg);

    RegularizerState state;
    const int m = static_cast<int>(net.exits());
    for (int mu = 1; mu <= m; ++mu) {
        if (cfg.regime == Regime::ProposedEwc) {
            const Scope scope = protected_scope(mu, cfg.ewc_scope);
            state.snapshot = scope.empty() ? ParamSnapshot{} : net.snapshot(scope);
        } else if (mu > 1) {
            state.teacher = TeacherCache::build(net, data.train.x, mu);
        }
        result.stages.push_back(train_stage(net, data, mu, cfg, state));
        if (cfg.regime == Regime::ProposedEwc) {
            state.fisher.set(mu, empirical_fisher(net, data.train.x, data.train.y, mu));
        }
    }
    result.fisher = std::move(state.fisher);
    return result;
}

RunResult run_baseline(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg) {
    cfg.validate();
    RunResult result;
    const int m = static_cast<int>(net.exits());
    switch (cfg.regime) {
        case Regime::Joint: {
            net.set_trainable(0, Regime::Joint);
            Phase phase;
            phase.stage = 0;
            phase.shuffle_key = static_cast<std::uint64_t>(m) + 1;
            phase.name = "joint";
            phase.monitor_exit = 0;
            phase.reported_exits = exits_upto(m);
            phase.loss = [&](GradTape& tape, Var x, std::span<const int> y, std::span<const std::size_t>) {
                const std::vector<Var> probs = net.forward_all_exits(tape, x);
                Var total = cross_entropy(tape, probs[0], y);
                for (std::size_t k = 1; k < probs.size(); ++k) total = tape.add(total, cross_entropy(tape, probs[k], y));
                return plain(tape, total);
            };
            result.stages.push_back(run_phase(net, data, cfg, phase));
            return result;
        }
        case Regime::Disjoint:
            // The backbone is always trained first under disjoint training.
            result.warm_up = warm_up(net, data, cfg);
            break;
        case Regime::BranchWise:
        case Regime::Separate:
            if (cfg.warm_up) result.warm_up = warm_up(net, data, cfg);
            break;
        default:
            throw Error("invalid_argument", "run_baseline needs disjoint, branch-wise, separate or joint",
                        {{"regime", to_string(cfg.regime)}});
    }
    RegularizerState state;
    for (int mu = 1; mu <= m; ++mu) result.stages.push_back(train_stage(net, data, mu, cfg, state));
    return result;
}

RunResult run_regime(ExitNetwork& net, const TrainingData& data, const TrainConfig& cfg) {
    switch (cfg.regime) {
        case Regime::ProposedEwc:
        case Regime::ProposedLwf:
            return run_sequential(net, data, cfg);
        case Regime::WarmUp: {
            RunResult result;
            result.warm_up = warm_up(net, data, cfg);
            return result;
        }
        default:
            return run_baseline(net, data, cfg);
    }
}

double forgetting(const RunResult& run, int nu, int mu) {
    if (nu < 1 || mu < nu || static_cast<std::size_t>(mu) > run.stages.size()) {
        throw Error("invalid_argument", "forgetting needs 1 <= nu <= mu <= stages run");
    }
    const auto k = static_cast<std::size_t>(nu - 1);
    return run.stages[k].test_accuracy[k] - run.stages[static_cast<std::size_t>(mu - 1)].test_accuracy[k];
}

}  // namespace eenn
