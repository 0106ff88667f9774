#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "eenn/tape.hpp"
#include "eenn/tensor.hpp"

namespace eenn {

/// Shape of a dense multi-exit network. The number of exits M equals
/// widths.size(); segment mu has `layers_per_segment` dense+relu layers of
/// width widths[mu-1], and IC mu is a single dense layer to `classes` logits.
struct Architecture {
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::vector<std::size_t> widths;
    std::size_t layers_per_segment = 1;

    std::size_t exits() const noexcept { return widths.size(); }
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

/// Training regimes. Each one fixes which blocks are trainable at a stage.
enum class Regime { ProposedEwc, ProposedLwf, Disjoint, BranchWise, Separate, Joint, WarmUp };

std::string_view to_string(Regime regime) noexcept;
Regime parse_regime(std::string_view text);

/// A set of segment indices and classifier indices (both 1-based).
struct Scope {
    std::set<int> segments;
    std::set<int> classifiers;

    bool contains(const ParamId& id) const;
    bool empty() const noexcept { return segments.empty() && classifiers.empty(); }
    bool operator==(const Scope&) const = default;
};

/// Deep copy of parameter values, keyed by ParamId.
struct ParamSnapshot {
    std::map<ParamId, Tensor> values;
};

class ExitNetwork {
public:
    /// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))) drawn in ParamId
    /// order from Rng(seed); biases zero. Everything starts trainable.
    ExitNetwork(Architecture arch, std::uint64_t seed);
    /// All-zero parameters.
    static ExitNetwork zeros(Architecture arch);
    /// Parameters supplied by the caller (checkpoint load); every architecture
    /// slot must be present with the right shape.
    static ExitNetwork from_params(Architecture arch, std::map<ParamId, Tensor> params);

    const Architecture& arch() const noexcept { return arch_; }
    std::size_t exits() const noexcept { return arch_.exits(); }
    std::size_t classes() const noexcept { return arch_.classes; }

    const std::map<ParamId, Tensor>& params() const noexcept { return params_; }
    const Tensor& param(const ParamId& id) const;
    Tensor& param(const ParamId& id);
    std::size_t parameter_count() const;

    /// Parameter ids of segment mu / classifier mu.
    std::vector<ParamId> segment_params(int mu) const;
    std::vector<ParamId> classifier_params(int mu) const;
    std::vector<ParamId> params_in(const Scope& scope) const;

    bool trainable(const ParamId& id) const { return trainable_.at(id); }
    void set_trainable(const Scope& scope);
    /// Trainability for stage `stage` under `regime`:
    ///   warm-up        seg 1..M, ic M
    ///   proposed-*     seg 1..mu, ic 1..mu
    ///   separate       seg 1..mu, ic 1..mu
    ///   branch-wise    seg mu, ic mu
    ///   disjoint       ic mu
    ///   joint          everything
    void set_trainable(int stage, Regime regime);
    Scope trainable_scope() const;

    /// Probabilities of exit `exit` for a batch x[B×d]. Registers only the
    /// parameters of segments 1..exit and IC exit on the tape.
    Var forward_to_exit(GradTape& tape, Var x, int exit) const;
    /// Probabilities of exits 1..upto from one shared pass.
    std::vector<Var> forward_exits(GradTape& tape, Var x, int upto) const;
    std::vector<Var> forward_all_exits(GradTape& tape, Var x) const;

    /// Forward without keeping a tape around.
    Tensor predict(const Tensor& x, int exit) const;
    std::vector<Tensor> predict_all(const Tensor& x) const;

    ParamSnapshot snapshot(const Scope& scope) const;
    void restore(const ParamSnapshot& snapshot);

private:
    explicit ExitNetwork(Architecture arch);
    void check_exit(int exit) const;
    void check_input(const Tensor& input) const;
    Var segment_forward(GradTape& tape, Var h, int mu) const;
    Var classifier_forward(GradTape& tape, Var h, int mu) const;

    Architecture arch_;
    std::map<ParamId, Tensor> params_;
    std::map<ParamId, bool> trainable_;
};

Scope scope_for_stage(int stage, Regime regime, std::size_t exits);

}  // namespace eenn
