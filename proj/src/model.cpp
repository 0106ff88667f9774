#include "eenn/model.hpp"

#include <cmath>

#include "eenn/error.hpp"
#include "eenn/rng.hpp"

namespace eenn {

namespace {

using Group = ParamId::Group;
using Role = ParamId::Role;

ParamId pid(Group group, int block, int layer, Role role) { return ParamId{group, block, layer, role}; }

// (fan_in, fan_out) for every weight of the architecture, in ParamId order.
std::map<ParamId, Shape> layout(const Architecture& arch) {
    std::map<ParamId, Shape> shapes;
    std::size_t in = arch.input_dim;
    for (std::size_t s = 0; s < arch.exits(); ++s) {
        const int mu = static_cast<int>(s) + 1;
        const std::size_t width = arch.widths[s];
        for (std::size_t l = 0; l < arch.layers_per_segment; ++l) {
            const int layer = static_cast<int>(l);
            shapes[pid(Group::Segment, mu, layer, Role::Weight)] = {in, width};
            shapes[pid(Group::Segment, mu, layer, Role::Bias)] = {width};
            in = width;
        }
        shapes[pid(Group::Classifier, mu, 0, Role::Weight)] = {width, arch.classes};
        shapes[pid(Group::Classifier, mu, 0, Role::Bias)] = {arch.classes};
    }
    return shapes;
}

}  // namespace

void Architecture::validate() const {
    if (input_dim == 0) throw Error("schema_error", "model.input_dim must be positive");
    if (classes < 2) throw Error("schema_error", "model.classes must be at least 2");
    if (widths.size() < 2) throw Error("schema_error", "model.widths needs at least 2 segments (M >= 2)");
    for (auto w : widths) {
        if (w == 0) throw Error("schema_error", "model.widths entries must be positive");
    }
    if (layers_per_segment == 0) throw Error("schema_error", "model.layers_per_segment must be positive");
}

std::string_view to_string(Regime regime) noexcept {
    switch (regime) {
        case Regime::ProposedEwc: return "proposed-ewc";
        case Regime::ProposedLwf: return "proposed-lwf";
        case Regime::Disjoint: return "disjoint";
        case Regime::BranchWise: return "branch-wise";
        case Regime::Separate: return "separate";
        case Regime::Joint: return "joint";
        case Regime::WarmUp: return "warm-up";
    }
    return "unknown";
}

Regime parse_regime(std::string_view text) {
    for (auto r : {Regime::ProposedEwc, Regime::ProposedLwf, Regime::Disjoint, Regime::BranchWise, Regime::Separate,
                   Regime::Joint, Regime::WarmUp}) {
        if (to_string(r) == text) return r;
    }
    throw Error("schema_error", "unknown regime '" + std::string(text) + "'", {{"regime", text}});
}

bool Scope::contains(const ParamId& id) const {
    return id.group == Group::Segment ? segments.contains(id.block) : classifiers.contains(id.block);
}

Scope scope_for_stage(int stage, Regime regime, std::size_t exits) {
    const int m = static_cast<int>(exits);
    if (regime != Regime::Joint && regime != Regime::WarmUp && (stage < 1 || stage > m)) {
        throw Error("invalid_argument", "stage " + std::to_string(stage) + " outside 1.." + std::to_string(m));
    }
    Scope scope;
    switch (regime) {
        case Regime::WarmUp:
            for (int mu = 1; mu <= m; ++mu) scope.segments.insert(mu);
            scope.classifiers.insert(m);
            break;
        case Regime::ProposedEwc:
        case Regime::ProposedLwf:
        case Regime::Separate:
            for (int mu = 1; mu <= stage; ++mu) {
                scope.segments.insert(mu);
                scope.classifiers.insert(mu);
            }
            break;
        case Regime::BranchWise:
            scope.segments.insert(stage);
            scope.classifiers.insert(stage);
            break;
        case Regime::Disjoint:
            scope.classifiers.insert(stage);
            break;
        case Regime::Joint:
            for (int mu = 1; mu <= m; ++mu) {
                scope.segments.insert(mu);
                scope.classifiers.insert(mu);
            }
            break;
    }
    return scope;
}

// --- ExitNetwork ---------------------------------------------------------------

ExitNetwork::ExitNetwork(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    for (const auto& [id, shape] : layout(arch_)) {
        params_.emplace(id, Tensor(shape));
        trainable_.emplace(id, true);
    }
}

ExitNetwork::ExitNetwork(Architecture arch, std::uint64_t seed) : ExitNetwork(std::move(arch)) {
    Rng rng(seed);
    for (auto& [id, tensor] : params_) {
        if (id.role == Role::Bias) continue;
        const auto fan_in = static_cast<double>(tensor.shape()[0]);
        const auto fan_out = static_cast<double>(tensor.shape()[1]);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& v : tensor.data()) v = rng.uniform(-limit, limit);
    }
}

ExitNetwork ExitNetwork::zeros(Architecture arch) { return ExitNetwork(std::move(arch)); }

ExitNetwork ExitNetwork::from_params(Architecture arch, std::map<ParamId, Tensor> params) {
    ExitNetwork net(std::move(arch));
    if (params.size() != net.params_.size()) {
        throw Error("schema_error", "parameter count " + std::to_string(params.size()) + " does not match architecture (" +
                                        std::to_string(net.params_.size()) + ")");
    }
    for (auto& [id, tensor] : params) {
        auto it = net.params_.find(id);
        if (it == net.params_.end()) {
            throw Error("schema_error", "unexpected parameter " + id.str());
        }
        if (it->second.shape() != tensor.shape()) {
            throw Error("schema_error", "parameter " + id.str() + " has shape " + shape_str(tensor.shape()) +
                                            ", expected " + shape_str(it->second.shape()));
        }
        it->second = std::move(tensor);
    }
    return net;
}

const Tensor& ExitNetwork::param(const ParamId& id) const {
    auto it = params_.find(id);
    if (it == params_.end()) throw Error("invalid_argument", "no parameter " + id.str());
    return it->second;
}

Tensor& ExitNetwork::param(const ParamId& id) {
    auto it = params_.find(id);
    if (it == params_.end()) throw Error("invalid_argument", "no parameter " + id.str());
    return it->second;
}

std::size_t ExitNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [id, t] : params_) n += t.size();
    return n;
}

std::vector<ParamId> ExitNetwork::segment_params(int mu) const {
    check_exit(mu);
    std::vector<ParamId> ids;
    for (const auto& [id, t] : params_) {
        if (id.group == Group::Segment && id.block == mu) ids.push_back(id);
    }
    return ids;
}

std::vector<ParamId> ExitNetwork::classifier_params(int mu) const {
    check_exit(mu);
    std::vector<ParamId> ids;
    for (const auto& [id, t] : params_) {
        if (id.group == Group::Classifier && id.block == mu) ids.push_back(id);
    }
    return ids;
}

std::vector<ParamId> ExitNetwork::params_in(const Scope& scope) const {
    std::vector<ParamId> ids;
    for (const auto& [id, t] : params_) {
        if (scope.contains(id)) ids.push_back(id);
    }
    return ids;
}

void ExitNetwork::set_trainable(const Scope& scope) {
    for (auto& [id, flag] : trainable_) flag = scope.contains(id);
}

void ExitNetwork::set_trainable(int stage, Regime regime) { set_trainable(scope_for_stage(stage, regime, exits())); }

Scope ExitNetwork::trainable_scope() const {
    Scope scope;
    for (const auto& [id, flag] : trainable_) {
        if (!flag) continue;
        (id.group == Group::Segment ? scope.segments : scope.classifiers).insert(id.block);
    }
    return scope;
}

void ExitNetwork::check_exit(int exit) const {
    if (exit < 1 || exit > static_cast<int>(exits())) {
        throw Error("invalid_argument", "exit " + std::to_string(exit) + " outside 1.." + std::to_string(exits()),
                    {{"exit", exit}, {"exits", exits()}});
    }
}

Var ExitNetwork::segment_forward(GradTape& tape, Var h, int mu) const {
    for (std::size_t l = 0; l < arch_.layers_per_segment; ++l) {
        const int layer = static_cast<int>(l);
        const ParamId w = pid(Group::Segment, mu, layer, Role::Weight);
        const ParamId b = pid(Group::Segment, mu, layer, Role::Bias);
        h = tape.relu(tape.add_bias(tape.matmul(h, tape.parameter(w, params_.at(w))), tape.parameter(b, params_.at(b))));
    }
    return h;
}

Var ExitNetwork::classifier_forward(GradTape& tape, Var h, int mu) const {
    const ParamId w = pid(Group::Classifier, mu, 0, Role::Weight);
    const ParamId b = pid(Group::Classifier, mu, 0, Role::Bias);
    return tape.softmax(tape.add_bias(tape.matmul(h, tape.parameter(w, params_.at(w))), tape.parameter(b, params_.at(b))));
}

void ExitNetwork::check_input(const Tensor& input) const {
    if (input.rank() != 2 || input.cols() != arch_.input_dim) {
        throw Error("dimension_error",
                    "input " + shape_str(input.shape()) + " does not match input width " + std::to_string(arch_.input_dim),
                    {{"input", input.shape()}, {"input_dim", arch_.input_dim}});
    }
}

Var ExitNetwork::forward_to_exit(GradTape& tape, Var x, int exit) const {
    check_exit(exit);
    check_input(tape.value(x));
    Var h = x;
    for (int mu = 1; mu <= exit; ++mu) h = segment_forward(tape, h, mu);
    return classifier_forward(tape, h, exit);
}

std::vector<Var> ExitNetwork::forward_exits(GradTape& tape, Var x, int upto) const {
    check_exit(upto);
    check_input(tape.value(x));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(upto));
    Var h = x;
    for (int mu = 1; mu <= upto; ++mu) {
        h = segment_forward(tape, h, mu);
        outs.push_back(classifier_forward(tape, h, mu));
    }
    return outs;
}

std::vector<Var> ExitNetwork::forward_all_exits(GradTape& tape, Var x) const {
    return forward_exits(tape, x, static_cast<int>(exits()));
}

Tensor ExitNetwork::predict(const Tensor& x, int exit) const {
    GradTape tape;
    Var out = forward_to_exit(tape, tape.constant(x), exit);
    return tape.value(out);
}

std::vector<Tensor> ExitNetwork::predict_all(const Tensor& x) const {
    GradTape tape;
    std::vector<Tensor> out;
    for (Var v : forward_all_exits(tape, tape.constant(x))) out.push_back(tape.value(v));
    return out;
}

ParamSnapshot ExitNetwork::snapshot(const Scope& scope) const {
    if (scope.empty()) throw Error("invalid_argument", "snapshot scope is empty");
    ParamSnapshot snap;
    for (const auto& [id, t] : params_) {
        if (scope.contains(id)) snap.values.emplace(id, t);
    }
    return snap;
}

void ExitNetwork::restore(const ParamSnapshot& snapshot) {
    for (const auto& [id, t] : snapshot.values) {
        Tensor& dst = param(id);
        if (dst.shape() != t.shape()) throw Error("dimension_error", "snapshot shape mismatch for " + id.str());
        dst = t;
    }
}

}  // namespace eenn
