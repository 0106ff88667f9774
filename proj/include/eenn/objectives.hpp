#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "eenn/model.hpp"
#include "eenn/tape.hpp"
#include "eenn/tensor.hpp"

namespace eenn {

/// Per-parameter Fisher values for a single exit.
using FisherValues = std::map<ParamId, Tensor>;

/// Which parts of the network EWC anchors at stage mu: the backbone
/// segments 1..mu-1 and/or the earlier classifiers 1..mu-1.
struct EwcScope {
    bool backbone = true;
    bool classifiers = true;
    bool operator==(const EwcScope&) const = default;
};

Scope protected_scope(int stage, const EwcScope& ewc);

/// Fisher values F^(nu) for each finished exit nu.
class FisherStore {
public:
    void set(int exit, FisherValues values);
    bool has(int exit) const { return per_exit_.contains(exit); }
    const FisherValues& at(int exit) const;
    const std::map<int, FisherValues>& exits() const noexcept { return per_exit_; }

    /// sum_{nu < stage} F^(nu), restricted to `scope`. Parameters that an exit
    /// never reaches contribute zero.
    FisherValues accumulated(int stage, const ExitNetwork& net, const Scope& scope) const;

private:
    std::map<int, FisherValues> per_exit_;
};

/// Output distributions of exits 1..stage-1, captured from the model at the end
/// of stage-1, for every training sample (row i = training sample i).
class TeacherCache {
public:
    static TeacherCache build(const ExitNetwork& net, const Tensor& train_x, int stage);

    int stage() const noexcept { return stage_; }
    std::size_t samples() const noexcept { return samples_; }
    const Tensor& exit(int nu) const;
    /// Stored rows of exit nu for the given sample indices.
    Tensor rows(int nu, std::span<const std::size_t> indices) const;

private:
    int stage_ = 1;
    std::size_t samples_ = 0;
    std::vector<Tensor> per_exit_;
};

/// Regularizer gating: s = 1 selects EWC (weight lambda), s = 0 selects LwF (weight rho).
struct LossConfig {
    int s = 1;
    double lambda = 0.0;
    double rho = 0.0;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// Mean over the batch of -log(max(p_true, 1e-12)). Labels are 0-based.
Var cross_entropy(GradTape& tape, Var probs, std::span<const int> labels);
double cross_entropy(const Tensor& probs, std::span<const int> labels);

/// F_k^(nu) = (1/N) sum_x (d log p_nu(true | x) / d theta_k)^2 at the current
/// parameters. Gradients are taken one sample at a time. Covers segments
/// 1..nu and IC nu.
FisherValues empirical_fisher(const ExitNetwork& net, const Tensor& x, std::span<const int> labels, int exit);

/// sum_k F_acc,k (theta_k - theta*_k)^2 over the snapshot's parameters.
/// `fisher` must cover exactly the snapshot's ids.
Var ewc_penalty(GradTape& tape, const ExitNetwork& net, const ParamSnapshot& snapshot, const FisherValues& fisher);
double ewc_penalty(const ExitNetwork& net, const ParamSnapshot& snapshot, const FisherValues& fisher);

/// KL(p || q) = sum_c p_c log(p_c / q_c), logs clamped at 1e-12, 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Batch mean of sum_{nu < stage} KL(current_nu || teacher_nu). `current`
/// holds the current exit distributions for exits 1..k with k >= stage-1.
Var lwf_penalty(GradTape& tape, std::span<const Var> current, const TeacherCache& teacher,
                std::span<const std::size_t> sample_indices, int stage);

/// ce + s*lambda*ewc + (1-s)*rho*lwf; the inactive term is never evaluated.
double total_stage_loss(double ce, double ewc, double lwf, const LossConfig& cfg);
Var total_stage_loss(GradTape& tape, Var ce, Var ewc, Var lwf, const LossConfig& cfg);

}  // namespace eenn
