#include "eenn/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "eenn/error.hpp"

namespace eenn {

Scope protected_scope(int stage, const EwcScope& ewc) {
    Scope scope;
    for (int nu = 1; nu < stage; ++nu) {
        if (ewc.backbone) scope.segments.insert(nu);
        if (ewc.classifiers) scope.classifiers.insert(nu);
    }
    return scope;
}

// --- FisherStore ---------------------------------------------------------------

void FisherStore::set(int exit, FisherValues values) { per_exit_[exit] = std::move(values); }

const FisherValues& FisherStore::at(int exit) const {
    auto it = per_exit_.find(exit);
    if (it == per_exit_.end()) {
        throw Error("missing_state", "no Fisher values for exit " + std::to_string(exit), {{"exit", exit}});
    }
    return it->second;
}

FisherValues FisherStore::accumulated(int stage, const ExitNetwork& net, const Scope& scope) const {
    FisherValues acc;
    for (const ParamId& id : net.params_in(scope)) acc.emplace(id, Tensor::zeros_like(net.param(id)));
    for (int nu = 1; nu < stage; ++nu) {
        const FisherValues& f = at(nu);
        for (auto& [id, total] : acc) {
            auto it = f.find(id);
            if (it == f.end()) continue;
            for (std::size_t i = 0; i < total.size(); ++i) total[i] += it->second[i];
        }
    }
    return acc;
}

// --- TeacherCache --------------------------------------------------------------

TeacherCache TeacherCache::build(const ExitNetwork& net, const Tensor& train_x, int stage) {
    if (stage < 1 || stage > static_cast<int>(net.exits())) {
        throw Error("invalid_argument", "teacher stage out of range", {{"stage", stage}});
    }
    TeacherCache cache;
    cache.stage_ = stage;
    cache.samples_ = train_x.rows();
    if (stage > 1) {
        GradTape tape;
        for (Var v : net.forward_exits(tape, tape.constant(train_x), stage - 1)) {
            cache.per_exit_.push_back(tape.value(v));
        }
    }
    return cache;
}

const Tensor& TeacherCache::exit(int nu) const {
    if (nu < 1 || nu >= stage_) {
        throw Error("missing_state", "teacher cache has no distributions for exit " + std::to_string(nu),
                    {{"exit", nu}, {"stage", stage_}});
    }
    return per_exit_[static_cast<std::size_t>(nu - 1)];
}

Tensor TeacherCache::rows(int nu, std::span<const std::size_t> indices) const {
    const Tensor& all = exit(nu);
    for (auto i : indices) {
        if (i >= samples_) {
            throw Error("missing_state", "teacher cache has no row for sample " + std::to_string(i),
                        {{"sample", i}, {"samples", samples_}});
        }
    }
    return all.select_rows(indices);
}

// --- losses --------------------------------------------------------------------

void LossConfig::validate() const {
    if (s != 0 && s != 1) throw Error("schema_error", "s must be 0 or 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("schema_error", "lambda must be finite and >= 0");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw Error("schema_error", "rho must be finite and >= 0");
}

Var cross_entropy(GradTape& tape, Var probs, std::span<const int> labels) {
    return tape.scale(tape.mean(tape.log_clamped(tape.pick(probs, labels))), -1.0);
}

double cross_entropy(const Tensor& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw Error("dimension_error", "cross_entropy: label count mismatch");
    const std::size_t c = probs.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
            throw Error("label_error", "label out of range", {{"row", r}, {"label", labels[r]}});
        }
        total += std::log(std::max(probs[r * c + static_cast<std::size_t>(labels[r])], kLogClamp));
    }
    return -(total / static_cast<double>(labels.size()));
}

FisherValues empirical_fisher(const ExitNetwork& net, const Tensor& x, std::span<const int> labels, int exit) {
    if (labels.empty() || x.empty()) throw Error("invalid_argument", "empirical_fisher: empty dataset");
    if (labels.size() != x.rows()) throw Error("dimension_error", "empirical_fisher: label count mismatch");

    FisherValues fisher;
    const std::size_t n = x.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row[] = {i};
        GradTape tape;
        Var probs = net.forward_to_exit(tape, tape.constant(x.select_rows(row)), exit);
        Var log_p = tape.sum(tape.log_clamped(tape.pick(probs, labels.subspan(i, 1))));
        for (auto& [id, g] : tape.backward(log_p)) {
            auto [it, inserted] = fisher.try_emplace(id, Tensor::zeros_like(g));
            Tensor& f = it->second;
            for (std::size_t k = 0; k < g.size(); ++k) f[k] += g[k] * g[k];
        }
    }
    for (auto& [id, f] : fisher) {
        for (double& v : f.data()) v /= static_cast<double>(n);
    }
    return fisher;
}

Var ewc_penalty(GradTape& tape, const ExitNetwork& net, const ParamSnapshot& snapshot, const FisherValues& fisher) {
    if (snapshot.values.size() != fisher.size()) {
        throw Error("scope_mismatch", "EWC snapshot and Fisher cover different parameters",
                    {{"snapshot", snapshot.values.size()}, {"fisher", fisher.size()}});
    }
    std::optional<Var> total;
    for (const auto& [id, anchor] : snapshot.values) {
        auto it = fisher.find(id);
        if (it == fisher.end()) {
            throw Error("scope_mismatch", "no Fisher values for protected parameter " + id.str(), {{"param", id.str()}});
        }
        Var theta = tape.parameter(id, net.param(id));
        Var term = tape.weighted_sq_dist(theta, anchor, it->second);
        total = total ? tape.add(*total, term) : term;
    }
    return total ? *total : tape.constant(Tensor::scalar(0.0));
}

double ewc_penalty(const ExitNetwork& net, const ParamSnapshot& snapshot, const FisherValues& fisher) {
    GradTape tape;
    return tape.value(ewc_penalty(tape, net, snapshot, fisher)).item();
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error("dimension_error", "kl_divergence: length mismatch");
    double total = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        if (p[c] == 0.0) continue;
        total += p[c] * (std::log(std::max(p[c], kLogClamp)) - std::log(std::max(q[c], kLogClamp)));
    }
    return total;
}

Var lwf_penalty(GradTape& tape, std::span<const Var> current, const TeacherCache& teacher,
                std::span<const std::size_t> sample_indices, int stage) {
    if (stage <= 1) return tape.constant(Tensor::scalar(0.0));
    if (teacher.stage() < stage) {
        throw Error("missing_state", "teacher cache built for stage " + std::to_string(teacher.stage()) +
                                         " cannot serve stage " + std::to_string(stage));
    }
    if (current.size() < static_cast<std::size_t>(stage - 1)) {
        throw Error("invalid_argument", "lwf_penalty needs current distributions for exits 1..stage-1");
    }
    std::optional<Var> per_sample;
    for (int nu = 1; nu < stage; ++nu) {
        Var kl = tape.kl_rows(current[static_cast<std::size_t>(nu - 1)], teacher.rows(nu, sample_indices));
        per_sample = per_sample ? tape.add(*per_sample, kl) : kl;
    }
    return tape.mean(*per_sample);
}

double total_stage_loss(double ce, double ewc, double lwf, const LossConfig& cfg) {
    return cfg.s == 1 ? ce + cfg.lambda * ewc : ce + cfg.rho * lwf;
}

Var total_stage_loss(GradTape& tape, Var ce, Var ewc, Var lwf, const LossConfig& cfg) {
    return cfg.s == 1 ? tape.add(ce, tape.scale(ewc, cfg.lambda)) : tape.add(ce, tape.scale(lwf, cfg.rho));
}

}  // namespace eenn
