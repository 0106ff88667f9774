#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "eenn/dataset.hpp"
#include "eenn/error.hpp"
#include "eenn/model.hpp"
#include "eenn/rng.hpp"
#include "eenn/tape.hpp"
#include "eenn/tensor.hpp"
#include "eenn/trainer.hpp"

namespace eenn::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

/// Network with Glorot weights and small random biases, so that no
/// pre-activation sits exactly on a relu kink.
inline ExitNetwork random_net(const Architecture& arch, std::uint64_t seed) {
    ExitNetwork net(arch, seed);
    Rng rng(derive_seed(seed, "test-bias"));
    for (const auto& [id, t] : net.params()) {
        if (id.role != ParamId::Role::Bias) continue;
        for (double& v : net.param(id).data()) v = 0.1 * rng.normal();
    }
    return net;
}

/// Smallest |pre-activation| of any hidden unit over the batch, computed
/// directly from the weights. Finite differences with step h are only
/// meaningful when this is well above h.
inline double min_abs_preactivation(const ExitNetwork& net, const Tensor& x) {
    double smallest = std::numeric_limits<double>::infinity();
    Tensor h = x;
    for (int mu = 1; mu <= static_cast<int>(net.exits()); ++mu) {
        for (std::size_t l = 0; l < net.arch().layers_per_segment; ++l) {
            const int layer = static_cast<int>(l);
            const Tensor& w = net.param({ParamId::Group::Segment, mu, layer, ParamId::Role::Weight});
            const Tensor& b = net.param({ParamId::Group::Segment, mu, layer, ParamId::Role::Bias});
            Tensor next({h.rows(), w.cols()});
            for (std::size_t r = 0; r < h.rows(); ++r) {
                for (std::size_t c = 0; c < w.cols(); ++c) {
                    double acc = b[c];
                    for (std::size_t k = 0; k < h.cols(); ++k) acc += h.at(r, k) * w.at(k, c);
                    smallest = std::min(smallest, std::abs(acc));
                    next.at(r, c) = std::max(acc, 0.0);
                }
            }
            h = std::move(next);
        }
    }
    return smallest;
}

/// Empirical Fisher of exit `exit` by hand-written backpropagation, one
/// sample at a time, sharing no code with the tape.
inline std::map<ParamId, Tensor> brute_force_fisher(const ExitNetwork& net, const Tensor& x,
                                                    const std::vector<int>& labels, int exit) {
    using Group = ParamId::Group;
    using Role = ParamId::Role;
    std::map<ParamId, Tensor> fisher;
    const std::size_t layers = net.arch().layers_per_segment;
    struct Layer {
        ParamId w, b;
        std::vector<double> in, z;
    };
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::vector<double> h(x.row(i).begin(), x.row(i).end());
        std::vector<Layer> stack;
        for (int mu = 1; mu <= exit; ++mu) {
            for (std::size_t l = 0; l < layers; ++l) {
                Layer layer{{Group::Segment, mu, static_cast<int>(l), Role::Weight},
                            {Group::Segment, mu, static_cast<int>(l), Role::Bias}, h, {}};
                const Tensor& w = net.param(layer.w);
                const Tensor& b = net.param(layer.b);
                layer.z.assign(w.cols(), 0.0);
                for (std::size_t c = 0; c < w.cols(); ++c) {
                    double acc = b[c];
                    for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * w.at(k, c);
                    layer.z[c] = acc;
                }
                h.assign(w.cols(), 0.0);
                for (std::size_t c = 0; c < w.cols(); ++c) h[c] = std::max(layer.z[c], 0.0);
                stack.push_back(std::move(layer));
            }
        }
        const ParamId icw{Group::Classifier, exit, 0, Role::Weight};
        const ParamId icb{Group::Classifier, exit, 0, Role::Bias};
        const Tensor& w = net.param(icw);
        const Tensor& b = net.param(icb);
        std::vector<double> logits(w.cols());
        for (std::size_t c = 0; c < w.cols(); ++c) {
            double acc = b[c];
            for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * w.at(k, c);
            logits[c] = acc;
        }
        const double top = *std::max_element(logits.begin(), logits.end());
        double norm = 0.0;
        for (double& v : logits) norm += (v = std::exp(v - top));
        // d log p_y / d logits = onehot(y) - p
        std::vector<double> delta(logits.size());
        for (std::size_t c = 0; c < delta.size(); ++c) {
            delta[c] = (static_cast<int>(c) == labels[i] ? 1.0 : 0.0) - logits[c] / norm;
        }
        auto accumulate = [&](const ParamId& id, std::size_t k, double g) {
            auto [it, fresh] = fisher.try_emplace(id, Tensor::zeros_like(net.param(id)));
            it->second[k] += g * g;
        };
        auto backprop = [&](const ParamId& wid, const ParamId& bid, const std::vector<double>& in,
                            const std::vector<double>& d) {
            const Tensor& wt = net.param(wid);
            std::vector<double> back(in.size(), 0.0);
            for (std::size_t r = 0; r < in.size(); ++r) {
                for (std::size_t c = 0; c < d.size(); ++c) {
                    accumulate(wid, r * d.size() + c, in[r] * d[c]);
                    back[r] += wt.at(r, c) * d[c];
                }
            }
            for (std::size_t c = 0; c < d.size(); ++c) accumulate(bid, c, d[c]);
            return back;
        };
        std::vector<double> up = backprop(icw, icb, h, delta);
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
            for (std::size_t c = 0; c < up.size(); ++c) up[c] = it->z[c] > 0.0 ? up[c] : 0.0;
            up = backprop(it->w, it->b, it->in, up);
        }
    }
    for (auto& [id, f] : fisher) {
        for (double& v : f.data()) v /= static_cast<double>(x.rows());
    }
    return fisher;
}

/// Builds a scalar loss on a fresh tape from the current parameters.
using LossFn = std::function<Var(GradTape&)>;

struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

/// Central differences (step h) against the tape gradient for every scalar
/// of every parameter registered by `loss`. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(ExitNetwork& net, const LossFn& loss, double h = 1e-5, double floor = 1e-6) {
    GradTape tape;
    Var root = loss(tape);
    const Gradients grads = tape.backward(root);
    auto value = [&] {
        GradTape t;
        return t.value(loss(t)).item();
    };
    GradCheck out;
    for (const auto& [id, g] : grads) {
        Tensor& theta = net.param(id);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double saved = theta[k];
            theta[k] = saved + h;
            const double up = value();
            theta[k] = saved - h;
            const double down = value();
            theta[k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double abs_err = std::abs(numeric - g[k]);
            const double rel = abs_err / std::max({std::abs(numeric), std::abs(g[k]), floor});
            out.max_abs_error = std::max(out.max_abs_error, abs_err);
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = ScalarId{id, k}.str();
            }
            ++out.checked;
        }
    }
    return out;
}

/// Synthetic task split 70/10/20 and densified.
inline TrainingData small_task(std::uint64_t seed, const SynthSpec& spec) {
    Dataset data = synth_blobs(derive_seed(seed, "data"), spec);
    assign_splits(data, 0.2, 0.125, derive_seed(seed, "split"));
    return make_training_data(data);
}

/// Code of the eenn::Error thrown by `f`, or "" if nothing was thrown.
template <typename F>
std::string error_code(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("eenn-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace eenn::testing
