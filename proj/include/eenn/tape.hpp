#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eenn/tensor.hpp"

namespace eenn {

/// Probabilities are clamped to this floor whenever they are logged.
inline constexpr double kLogClamp = 1e-12;

/// Identity of one parameter tensor of an exit network.
///
/// `block` is the 1-based segment or classifier index; `layer` is the 0-based
/// dense layer inside that block. Ordering is (group, block, layer, role), which
/// is also the checkpoint ordering.
struct ParamId {
    enum class Group : std::uint8_t { Segment, Classifier };
    enum class Role : std::uint8_t { Weight, Bias };

    Group group = Group::Segment;
    int block = 1;
    int layer = 0;
    Role role = Role::Weight;

    auto operator<=>(const ParamId&) const = default;

    /// "seg2.l0.weight", "ic1.l0.bias".
    std::string str() const;
    static ParamId parse(std::string_view text);
};

/// One scalar inside a parameter tensor.
struct ScalarId {
    ParamId param;
    std::size_t offset = 0;

    auto operator<=>(const ScalarId&) const = default;
    std::string str() const;  // "seg2.l0.weight[17]"
};

using Gradients = std::map<ParamId, Tensor>;

/// Handle to a node on a GradTape. Only meaningful with the tape that made it.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already a topological order and backward is a single reverse sweep.
///
/// Every forward op checks its output for NaN/Inf and throws "numeric_error".
class GradTape {
public:
    Var constant(Tensor value);
    /// Registers a parameter leaf. A second call with the same id returns the
    /// existing node, so several forwards on one tape share parameters.
    Var parameter(const ParamId& id, const Tensor& value);
    std::optional<Var> find_parameter(const ParamId& id) const;

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// x[B×n] + bias[n] (bias broadcast over the batch dimension).
    Var add_bias(Var x, Var bias);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var relu(Var a);
    /// Sum of all elements, shape [1].
    Var sum(Var a);
    /// Mean of all elements, shape [1].
    Var mean(Var a);
    /// Mean over the batch dimension: [B×n] -> [n].
    Var mean_rows(Var a);
    /// Row-wise softmax with max subtraction.
    Var softmax(Var logits);
    /// log(max(x, kLogClamp)); gradient is 0 where the clamp is active.
    Var log_clamped(Var a);
    /// out[i] = x[i, labels[i]], shape [B×1].
    Var pick(Var x, std::span<const int> labels);
    /// Row-wise KL(p_i || q_i) against a constant q, shape [B×1]. Both sides
    /// are clamped at kLogClamp inside the log; rows with p = 0 contribute 0.
    Var kl_rows(Var p, const Tensor& q);
    /// sum_k w_k (theta_k - anchor_k)^2 with constant anchor and weights, shape [1].
    Var weighted_sq_dist(Var theta, const Tensor& anchor, const Tensor& weight);

    /// Gradient of a one-element root w.r.t. every registered parameter.
    /// Parameters with no path to the root get zeros.
    Gradients backward(Var root) const;
    /// Gradient of the root w.r.t. every node (empty tensor = no path).
    std::vector<Tensor> backward_nodes(Var root) const;

private:
    enum class Op : std::uint8_t {
        Constant, Parameter, MatMul, Add, AddBias, Sub, Mul, Scale, Relu, Sum, Mean, MeanRows,
        Softmax, LogClamped, Pick, KlRows, WeightedSqDist
    };

    struct Node {
        Op op = Op::Constant;
        std::size_t lhs = 0;
        std::size_t rhs = 0;
        Tensor value;
        Tensor aux_a;
        Tensor aux_b;
        std::vector<int> labels;
        double factor = 0.0;
    };

    Var push(Node node, const char* op_name);
    const Node& node(Var v) const { return nodes_.at(v.id); }

    std::vector<Node> nodes_;
    std::map<ParamId, std::size_t> params_;
};

}  // namespace eenn
