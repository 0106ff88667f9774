#include "eenn/tape.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "eenn/error.hpp"

namespace eenn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error("dimension_error",
                    std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw Error("dimension_error", std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

void accumulate(Tensor& into, const Tensor& delta) {
    if (into.empty()) {
        into = delta;
        return;
    }
    auto dst = into.data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// --- ParamId -----------------------------------------------------------------

std::string ParamId::str() const {
    std::string out = group == Group::Segment ? "seg" : "ic";
    out += std::to_string(block);
    out += ".l" + std::to_string(layer);
    out += role == Role::Weight ? ".weight" : ".bias";
    return out;
}

ParamId ParamId::parse(std::string_view text) {
    auto fail = [&] { return Error("schema_error", "malformed parameter id '" + std::string(text) + "'"); };
    ParamId id;
    std::string_view rest = text;
    if (rest.starts_with("seg")) {
        id.group = Group::Segment;
        rest.remove_prefix(3);
    } else if (rest.starts_with("ic")) {
        id.group = Group::Classifier;
        rest.remove_prefix(2);
    } else {
        throw fail();
    }
    auto [p1, e1] = std::from_chars(rest.data(), rest.data() + rest.size(), id.block);
    if (e1 != std::errc{} || id.block < 1) throw fail();
    rest.remove_prefix(static_cast<std::size_t>(p1 - rest.data()));
    if (!rest.starts_with(".l")) throw fail();
    rest.remove_prefix(2);
    auto [p2, e2] = std::from_chars(rest.data(), rest.data() + rest.size(), id.layer);
    if (e2 != std::errc{} || id.layer < 0) throw fail();
    rest.remove_prefix(static_cast<std::size_t>(p2 - rest.data()));
    if (rest == ".weight") {
        id.role = Role::Weight;
    } else if (rest == ".bias") {
        id.role = Role::Bias;
    } else {
        throw fail();
    }
    return id;
}

std::string ScalarId::str() const { return param.str() + "[" + std::to_string(offset) + "]"; }

// --- forward -----------------------------------------------------------------

Var GradTape::push(Node n, const char* op_name) {
    if (!n.value.all_finite()) {
        throw Error("numeric_error", std::string(op_name) + " produced a non-finite value",
                    {{"op", op_name}, {"node", nodes_.size()}});
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var GradTape::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n), "constant");
}

Var GradTape::parameter(const ParamId& id, const Tensor& value) {
    if (auto it = params_.find(id); it != params_.end()) {
        return Var{it->second};
    }
    Node n;
    n.op = Op::Parameter;
    n.value = value;
    Var v = push(std::move(n), "parameter");
    params_.emplace(id, v.id);
    return v;
}

std::optional<Var> GradTape::find_parameter(const ParamId& id) const {
    if (auto it = params_.find(id); it != params_.end()) return Var{it->second};
    return std::nullopt;
}

Var GradTape::matmul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_rank2(x, "matmul");
    require_rank2(y, "matmul");
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    if (y.rows() != k) {
        throw Error("dimension_error", "matmul: inner extents differ " + shape_str(x.shape()) + " x " +
                                           shape_str(y.shape()));
    }
    Tensor out({m, n});
    const double* xp = x.data().data();
    const double* yp = y.data().data();
    double* op = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xp[i * k + p];
            const double* yrow = yp + p * n;
            double* orow = op + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
        }
    }
    Node node;
    node.op = Op::MatMul;
    node.lhs = a.id;
    node.rhs = b.id;
    node.value = std::move(out);
    return push(std::move(node), "matmul");
}

Var GradTape::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    auto o = out.data();
    auto y = value(b).data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
    Node n;
    n.op = Op::Add;
    n.lhs = a.id;
    n.rhs = b.id;
    n.value = std::move(out);
    return push(std::move(n), "add");
}

Var GradTape::add_bias(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    require_rank2(xv, "add_bias");
    if (bv.size() != xv.cols()) {
        throw Error("dimension_error",
                    "add_bias: bias " + shape_str(bv.shape()) + " does not match " + shape_str(xv.shape()));
    }
    Tensor out = xv;
    const std::size_t c = xv.cols();
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
    }
    Node n;
    n.op = Op::AddBias;
    n.lhs = x.id;
    n.rhs = bias.id;
    n.value = std::move(out);
    return push(std::move(n), "add_bias");
}

Var GradTape::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    auto o = out.data();
    auto y = value(b).data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
    Node n;
    n.op = Op::Sub;
    n.lhs = a.id;
    n.rhs = b.id;
    n.value = std::move(out);
    return push(std::move(n), "sub");
}

Var GradTape::mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    auto o = out.data();
    auto y = value(b).data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
    Node n;
    n.op = Op::Mul;
    n.lhs = a.id;
    n.rhs = b.id;
    n.value = std::move(out);
    return push(std::move(n), "mul");
}

Var GradTape::scale(Var a, double factor) {
    Tensor out = value(a);
    for (double& v : out.data()) v *= factor;
    Node n;
    n.op = Op::Scale;
    n.lhs = a.id;
    n.factor = factor;
    n.value = std::move(out);
    return push(std::move(n), "scale");
}

Var GradTape::relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    Node n;
    n.op = Op::Relu;
    n.lhs = a.id;
    n.value = std::move(out);
    return push(std::move(n), "relu");
}

Var GradTape::sum(Var a) {
    double total = 0.0;
    for (double v : value(a).data()) total += v;
    Node n;
    n.op = Op::Sum;
    n.lhs = a.id;
    n.value = Tensor::scalar(total);
    return push(std::move(n), "sum");
}

Var GradTape::mean(Var a) {
    double total = 0.0;
    for (double v : value(a).data()) total += v;
    Node n;
    n.op = Op::Mean;
    n.lhs = a.id;
    n.value = Tensor::scalar(total / static_cast<double>(value(a).size()));
    return push(std::move(n), "mean");
}

Var GradTape::mean_rows(Var a) {
    const Tensor& x = value(a);
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
    }
    for (double& v : out.data()) v /= static_cast<double>(r);
    Node n;
    n.op = Op::MeanRows;
    n.lhs = a.id;
    n.value = std::move(out);
    return push(std::move(n), "mean_rows");
}

Var GradTape::softmax(Var logits) {
    const Tensor& z = value(logits);
    if (z.empty()) {
        throw Error("dimension_error", "softmax of an empty tensor");
    }
    Tensor out = z;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = out.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
            v = std::exp(v - peak);
            total += v;
        }
        for (double& v : row) v /= total;
    }
    Node n;
    n.op = Op::Softmax;
    n.lhs = logits.id;
    n.value = std::move(out);
    return push(std::move(n), "softmax");
}

Var GradTape::log_clamped(Var a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = std::log(std::max(v, kLogClamp));
    Node n;
    n.op = Op::LogClamped;
    n.lhs = a.id;
    n.value = std::move(out);
    return push(std::move(n), "log_clamped");
}

Var GradTape::pick(Var x, std::span<const int> labels) {
    const Tensor& v = value(x);
    require_rank2(v, "pick");
    if (labels.size() != v.rows()) {
        throw Error("dimension_error", "pick: " + std::to_string(labels.size()) + " labels for " +
                                           std::to_string(v.rows()) + " rows");
    }
    const std::size_t c = v.cols();
    Tensor out({v.rows(), 1});
    for (std::size_t r = 0; r < v.rows(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
            throw Error("label_error", "label out of range", {{"row", r}, {"label", labels[r]}, {"classes", c}});
        }
        out[r] = v[r * c + static_cast<std::size_t>(labels[r])];
    }
    Node n;
    n.op = Op::Pick;
    n.lhs = x.id;
    n.labels.assign(labels.begin(), labels.end());
    n.value = std::move(out);
    return push(std::move(n), "pick");
}

Var GradTape::kl_rows(Var p, const Tensor& q) {
    const Tensor& pv = value(p);
    require_same_shape(pv, q, "kl_rows");
    const std::size_t c = pv.cols();
    Tensor out({pv.rows(), 1});
    for (std::size_t r = 0; r < pv.rows(); ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double pj = pv[r * c + j];
            if (pj == 0.0) continue;
            total += pj * (std::log(std::max(pj, kLogClamp)) - std::log(std::max(q[r * c + j], kLogClamp)));
        }
        out[r] = total;
    }
    Node n;
    n.op = Op::KlRows;
    n.lhs = p.id;
    n.aux_a = q;
    n.value = std::move(out);
    return push(std::move(n), "kl_rows");
}

Var GradTape::weighted_sq_dist(Var theta, const Tensor& anchor, const Tensor& weight) {
    const Tensor& t = value(theta);
    require_same_shape(t, anchor, "weighted_sq_dist");
    require_same_shape(t, weight, "weighted_sq_dist");
    double total = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double d = t[i] - anchor[i];
        total += weight[i] * d * d;
    }
    Node n;
    n.op = Op::WeightedSqDist;
    n.lhs = theta.id;
    n.aux_a = anchor;
    n.aux_b = weight;
    n.value = Tensor::scalar(total);
    return push(std::move(n), "weighted_sq_dist");
}

// --- backward ----------------------------------------------------------------

std::vector<Tensor> GradTape::backward_nodes(Var root) const {
    if (root.id >= nodes_.size()) {
        throw Error("invalid_argument", "backward: root is not on this tape");
    }
    if (nodes_[root.id].value.size() != 1) {
        throw Error("dimension_error",
                    "backward: root must be scalar, got " + shape_str(nodes_[root.id].value.shape()));
    }
    std::vector<Tensor> grads(root.id + 1);
    grads[root.id] = Tensor(nodes_[root.id].value.shape(), 1.0);

    for (std::size_t idx = root.id + 1; idx-- > 0;) {
        const Node& n = nodes_[idx];
        if (grads[idx].empty()) continue;
        const Tensor& g = grads[idx];
        switch (n.op) {
            case Op::Constant:
            case Op::Parameter:
                break;
            case Op::MatMul: {
                const Tensor& a = nodes_[n.lhs].value;
                const Tensor& b = nodes_[n.rhs].value;
                const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
                Tensor ga({m, k});
                Tensor gb({k, nn});
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * b[p * nn + j];
                        ga[i * k + p] = acc;
                    }
                }
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += av * g[i * nn + j];
                    }
                }
                accumulate(grads[n.lhs], ga);
                accumulate(grads[n.rhs], gb);
                break;
            }
            case Op::Add:
                accumulate(grads[n.lhs], g);
                accumulate(grads[n.rhs], g);
                break;
            case Op::AddBias: {
                accumulate(grads[n.lhs], g);
                const Tensor& bias = nodes_[n.rhs].value;
                Tensor gb(bias.shape());
                const std::size_t c = g.cols();
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                }
                accumulate(grads[n.rhs], gb);
                break;
            }
            case Op::Sub: {
                accumulate(grads[n.lhs], g);
                Tensor neg = g;
                for (double& v : neg.data()) v = -v;
                accumulate(grads[n.rhs], neg);
                break;
            }
            case Op::Mul: {
                const Tensor& a = nodes_[n.lhs].value;
                const Tensor& b = nodes_[n.rhs].value;
                Tensor ga = g, gb = g;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] *= b[i];
                    gb[i] *= a[i];
                }
                accumulate(grads[n.lhs], ga);
                accumulate(grads[n.rhs], gb);
                break;
            }
            case Op::Scale: {
                Tensor ga = g;
                for (double& v : ga.data()) v *= n.factor;
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::Relu: {
                const Tensor& x = nodes_[n.lhs].value;
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    if (!(x[i] > 0.0)) ga[i] = 0.0;
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const Tensor& x = nodes_[n.lhs].value;
                double v = g[0];
                if (n.op == Op::Mean) v /= static_cast<double>(x.size());
                accumulate(grads[n.lhs], Tensor(x.shape(), v));
                break;
            }
            case Op::MeanRows: {
                const Tensor& x = nodes_[n.lhs].value;
                const std::size_t r = x.rows(), c = x.cols();
                Tensor ga(x.shape());
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = g[j] / static_cast<double>(r);
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::Softmax: {
                const Tensor& y = n.value;
                const std::size_t c = y.cols();
                Tensor ga(y.shape());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                    for (std::size_t j = 0; j < c; ++j) ga[r * c + j] = y[r * c + j] * (g[r * c + j] - dot);
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::LogClamped: {
                const Tensor& x = nodes_[n.lhs].value;
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    ga[i] = x[i] > kLogClamp ? ga[i] / x[i] : 0.0;
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::Pick: {
                const Tensor& x = nodes_[n.lhs].value;
                const std::size_t c = x.cols();
                Tensor ga(x.shape());
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    ga[r * c + static_cast<std::size_t>(n.labels[r])] = g[r];
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::KlRows: {
                const Tensor& p = nodes_[n.lhs].value;
                const Tensor& q = n.aux_a;
                const std::size_t c = p.cols();
                Tensor ga(p.shape());
                for (std::size_t r = 0; r < p.rows(); ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const double pj = p[r * c + j];
                        const double log_q = std::log(std::max(q[r * c + j], kLogClamp));
                        // d/dp [p log max(p, eps)] is log p + 1 above the clamp and log eps below it.
                        const double d = pj > kLogClamp ? std::log(pj) + 1.0 - log_q : std::log(kLogClamp) - log_q;
                        ga[r * c + j] = g[r] * d;
                    }
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
            case Op::WeightedSqDist: {
                const Tensor& t = nodes_[n.lhs].value;
                Tensor ga(t.shape());
                for (std::size_t i = 0; i < t.size(); ++i) {
                    ga[i] = g[0] * 2.0 * n.aux_b[i] * (t[i] - n.aux_a[i]);
                }
                accumulate(grads[n.lhs], ga);
                break;
            }
        }
    }
    return grads;
}

Gradients GradTape::backward(Var root) const {
    std::vector<Tensor> grads = backward_nodes(root);
    Gradients out;
    for (const auto& [id, idx] : params_) {
        if (idx < grads.size() && !grads[idx].empty()) {
            out.emplace(id, std::move(grads[idx]));
        } else {
            out.emplace(id, Tensor::zeros_like(nodes_[idx].value));
        }
    }
    return out;
}

}  // namespace eenn
