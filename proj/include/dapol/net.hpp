#pragma once

// Small feed-forward network with manual backpropagation.
//
// Layers act row-wise on a batch (one sample per row), so a batch can mix
// samples from different domains without interaction. Parametric layers carry
// a training role: frozen layers are never updated, finetune layers take the
// base learning rate, adapt layers take the base rate times a multiplier and
// are the layers whose activations a domain-discrepancy penalty may target.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dapol/error.hpp"
#include "dapol/matrix.hpp"
#include "dapol/rng.hpp"

namespace dapol::nn {

enum class LayerKind : std::uint8_t { dense = 0, conv1d = 1, relu = 2, softmax = 3 };
enum class Role : std::uint8_t { frozen = 0, finetune = 1, adapt = 2 };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::relu: return "relu";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

inline const char* to_string(Role r) {
    switch (r) {
        case Role::frozen: return "frozen";
        case Role::finetune: return "finetune";
        case Role::adapt: return "adapt";
    }
    return "?";
}

/// One layer of the network. Flat dimensions are resolved at construction;
/// conv1d inputs are channel-major (index = channel * length + position).
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    Role role = Role::finetune;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t channels_in = 0;
    std::size_t channels_out = 0;
    std::size_t width = 0;
    std::size_t stride = 1;

    static LayerSpec dense(std::size_t in, std::size_t out, Role role = Role::finetune) {
        return {LayerKind::dense, role, in, out, 0, 0, 0, 1};
    }

    /// `length_in` is the number of positions per input channel.
    static LayerSpec conv1d(std::size_t channels_in, std::size_t channels_out, std::size_t width, std::size_t stride,
                            std::size_t length_in, Role role = Role::finetune) {
        if (channels_in == 0 || channels_out == 0 || width == 0 || stride == 0 || length_in < width)
            throw invalid_spec_error("conv1d: invalid geometry");
        const std::size_t length_out = (length_in - width) / stride + 1;
        return {LayerKind::conv1d, role, channels_in * length_in, channels_out * length_out, channels_in, channels_out,
                width, stride};
    }

    static LayerSpec relu(std::size_t dim) { return {LayerKind::relu, Role::finetune, dim, dim, 0, 0, 0, 1}; }
    static LayerSpec softmax(std::size_t dim) { return {LayerKind::softmax, Role::finetune, dim, dim, 0, 0, 0, 1}; }

    bool parametric() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv1d; }
    std::size_t length_in() const noexcept { return channels_in ? in_dim / channels_in : 0; }
    std::size_t length_out() const noexcept { return channels_out ? out_dim / channels_out : 0; }

    /// Weight matrix shape: dense out x in; conv1d channels_out x (channels_in * width).
    std::size_t weight_rows() const noexcept { return kind == LayerKind::dense ? out_dim : channels_out; }
    std::size_t weight_cols() const noexcept { return kind == LayerKind::dense ? in_dim : channels_in * width; }
    std::size_t bias_size() const noexcept { return weight_rows(); }
    std::size_t fan_in() const noexcept { return weight_cols(); }
    std::size_t fan_out() const noexcept { return kind == LayerKind::dense ? out_dim : channels_out * width; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Chains layer specs, inferring each input dimension from the previous layer.
class ArchBuilder {
public:
    explicit ArchBuilder(std::size_t input_dim) : dim_(input_dim) {}

    ArchBuilder& conv1d(std::size_t channels_in, std::size_t channels_out, std::size_t width, std::size_t stride,
                        Role role = Role::finetune) {
        if (channels_in == 0 || dim_ % channels_in != 0) throw invalid_spec_error("conv1d: input not divisible into channels");
        push(LayerSpec::conv1d(channels_in, channels_out, width, stride, dim_ / channels_in, role));
        return *this;
    }
    ArchBuilder& dense(std::size_t out, Role role = Role::finetune) { return push(LayerSpec::dense(dim_, out, role)); }
    ArchBuilder& relu() { return push(LayerSpec::relu(dim_)); }
    ArchBuilder& softmax() { return push(LayerSpec::softmax(dim_)); }

    std::vector<LayerSpec> build() const { return specs_; }

private:
    ArchBuilder& push(LayerSpec s) {
        dim_ = s.out_dim;
        specs_.push_back(s);
        return *this;
    }

    std::size_t dim_;
    std::vector<LayerSpec> specs_;
};

/// Checks composition, softmax placement, and the adapt-suffix rule.
inline void validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw invalid_spec_error("network needs at least one layer");
    bool seen_adapt = false;
    for (std::size_t l = 0; l < specs.size(); ++l) {
        const auto& s = specs[l];
        if (s.in_dim == 0 || s.out_dim == 0) throw invalid_spec_error("layer " + std::to_string(l) + ": zero dimension");
        if (l > 0 && specs[l - 1].out_dim != s.in_dim)
            throw invalid_spec_error("layer " + std::to_string(l) + ": input " + std::to_string(s.in_dim) +
                                     " does not match previous output " + std::to_string(specs[l - 1].out_dim));
        if (s.kind == LayerKind::softmax && l + 1 != specs.size())
            throw invalid_spec_error("softmax must be the final layer");
        if ((s.kind == LayerKind::relu || s.kind == LayerKind::softmax) && s.in_dim != s.out_dim)
            throw invalid_spec_error("layer " + std::to_string(l) + ": activation must preserve dimension");
        if (s.kind == LayerKind::conv1d) {
            if (s.channels_in == 0 || s.channels_out == 0 || s.width == 0 || s.stride == 0 ||
                s.in_dim % s.channels_in != 0 || s.length_in() < s.width ||
                s.out_dim != s.channels_out * ((s.length_in() - s.width) / s.stride + 1))
                throw invalid_spec_error("layer " + std::to_string(l) + ": inconsistent conv1d geometry");
        }
        if (s.parametric()) {
            if (s.role == Role::adapt) seen_adapt = true;
            else if (seen_adapt)
                throw invalid_spec_error("adapt layers must form a contiguous suffix of the parametric layers");
        }
    }
}

struct LayerParams {
    Matrix weight;
    std::vector<double> bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Layer specs plus parameters. Non-parametric layers hold empty params.
struct Network {
    std::vector<LayerSpec> layers;
    std::vector<LayerParams> params;

    std::size_t input_dim() const noexcept { return layers.front().in_dim; }
    std::size_t output_dim() const noexcept { return layers.back().out_dim; }

    bool all_finite() const noexcept {
        for (const auto& p : params) {
            if (!p.weight.all_finite()) return false;
            for (double b : p.bias)
                if (!std::isfinite(b)) return false;
        }
        return true;
    }

    /// Indices of layers with the adapt role.
    std::vector<std::size_t> adapt_layers() const {
        std::vector<std::size_t> out;
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (layers[l].parametric() && layers[l].role == Role::adapt) out.push_back(l);
        return out;
    }

    friend bool operator==(const Network&, const Network&) = default;
};

/// Glorot-uniform weights, zero biases; deterministic given the seed.
inline Network init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_specs(specs);
    Network net{specs, std::vector<LayerParams>(specs.size())};
    Rng rng(seed);
    for (std::size_t l = 0; l < specs.size(); ++l) {
        const auto& s = specs[l];
        if (!s.parametric()) continue;
        const double a = std::sqrt(6.0 / static_cast<double>(s.fan_in() + s.fan_out()));
        auto& p = net.params[l];
        p.weight = Matrix(s.weight_rows(), s.weight_cols());
        for (auto& w : p.weight.data()) w = rng.uniform(-a, a);
        p.bias.assign(s.bias_size(), 0.0);
    }
    return net;
}

/// Per-layer outputs of one forward pass; outputs[l] is the output of layer l.
struct ActivationTrace {
    Matrix input;
    std::vector<Matrix> outputs;

    const Matrix& layer_input(std::size_t l) const { return l == 0 ? input : outputs[l - 1]; }
    const Matrix& output() const { return outputs.back(); }
};

namespace detail {

inline Matrix dense_forward(const LayerSpec& s, const LayerParams& p, const Matrix& x) {
    Matrix y(x.rows(), s.out_dim);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t o = 0; o < s.out_dim; ++o) {
            const auto w = p.weight.row(o);
            double acc = p.bias[o];
            for (std::size_t i = 0; i < s.in_dim; ++i) acc += w[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

inline Matrix conv_forward(const LayerSpec& s, const LayerParams& p, const Matrix& x) {
    const std::size_t lin = s.length_in(), lout = s.length_out();
    Matrix y(x.rows(), s.out_dim);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t co = 0; co < s.channels_out; ++co) {
            const auto w = p.weight.row(co);
            for (std::size_t t = 0; t < lout; ++t) {
                double acc = p.bias[co];
                for (std::size_t ci = 0; ci < s.channels_in; ++ci) {
                    const double* xs = xr.data() + ci * lin + t * s.stride;
                    const double* ws = w.data() + ci * s.width;
                    for (std::size_t k = 0; k < s.width; ++k) acc += ws[k] * xs[k];
                }
                yr[co * lout + t] = acc;
            }
        }
    }
    return y;
}

inline Matrix relu_forward(const Matrix& x) {
    Matrix y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Matrix softmax_forward(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        auto yr = y.row(r);
        const double m = *std::max_element(xr.begin(), xr.end());
        double z = 0.0;
        for (std::size_t k = 0; k < xr.size(); ++k) z += (yr[k] = std::exp(xr[k] - m));
        for (auto& v : yr) v /= z;
    }
    return y;
}

}  // namespace detail

inline ActivationTrace forward(const Network& net, const Matrix& batch) {
    if (batch.cols() != net.input_dim())
        throw invalid_argument("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                               std::to_string(net.input_dim()));
    ActivationTrace trace{batch, {}};
    trace.outputs.reserve(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& s = net.layers[l];
        const Matrix& x = trace.layer_input(l);
        switch (s.kind) {
            case LayerKind::dense: trace.outputs.push_back(detail::dense_forward(s, net.params[l], x)); break;
            case LayerKind::conv1d: trace.outputs.push_back(detail::conv_forward(s, net.params[l], x)); break;
            case LayerKind::relu: trace.outputs.push_back(detail::relu_forward(x)); break;
            case LayerKind::softmax: trace.outputs.push_back(detail::softmax_forward(x)); break;
        }
    }
    return trace;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of -log p[label], with p clamped below at 1e-12.
inline double cross_entropy(const Matrix& probs, const std::vector<std::size_t>& labels) {
    if (labels.size() != probs.rows()) throw invalid_argument("cross_entropy: label count does not match batch");
    if (labels.empty()) throw invalid_argument("cross_entropy: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= probs.cols()) throw invalid_argument("cross_entropy: label out of range");
        total += -std::log(std::max(probs(r, labels[r]), kProbabilityFloor));
    }
    return total / static_cast<double>(labels.size());
}

/// d cross_entropy / d probs. Zero where the clamp is active.
inline Matrix cross_entropy_grad(const Matrix& probs, const std::vector<std::size_t>& labels) {
    if (labels.size() != probs.rows()) throw invalid_argument("cross_entropy_grad: label count does not match batch");
    Matrix g(probs.rows(), probs.cols());
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= probs.cols()) throw invalid_argument("cross_entropy_grad: label out of range");
        const double p = probs(r, labels[r]);
        if (p > kProbabilityFloor) g(r, labels[r]) = -inv_n / p;
    }
    return g;
}

/// Parameter gradients, aligned with Network::params.
struct Gradients {
    std::vector<LayerParams> layers;

    Gradients& operator+=(const Gradients& o) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto w = layers[l].weight.data();
            const auto ow = o.layers[l].weight.data();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
            for (std::size_t i = 0; i < layers[l].bias.size(); ++i) layers[l].bias[i] += o.layers[l].bias[i];
        }
        return *this;
    }

    bool all_finite() const noexcept {
        for (const auto& p : layers) {
            if (!p.weight.all_finite()) return false;
            for (double b : p.bias)
                if (!std::isfinite(b)) return false;
        }
        return true;
    }
};

inline Gradients zero_gradients(const Network& net) {
    Gradients g{std::vector<LayerParams>(net.layers.size())};
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].parametric()) continue;
        g.layers[l].weight = Matrix(net.layers[l].weight_rows(), net.layers[l].weight_cols());
        g.layers[l].bias.assign(net.layers[l].bias_size(), 0.0);
    }
    return g;
}

/// Optional per-layer gradients w.r.t. layer outputs, added during backprop.
using ActivationGrads = std::vector<std::optional<Matrix>>;

/// Backpropagates `output_grad` (d loss / d final output) plus any injected
/// activation gradients. Gradients are returned for every parametric layer,
/// frozen ones included; the optimizer applies the role mask.
inline Gradients backward(const Network& net, const ActivationTrace& trace, const Matrix& output_grad,
                          const ActivationGrads& extra = {}) {
    const std::size_t n_layers = net.layers.size();
    if (trace.outputs.size() != n_layers) throw invalid_argument("backward: trace does not belong to this network");
    const std::size_t batch = trace.input.rows();
    if (output_grad.rows() != batch || output_grad.cols() != net.output_dim())
        throw invalid_argument("backward: output gradient shape mismatch");
    if (!extra.empty() && extra.size() != n_layers) throw invalid_argument("backward: injection list length mismatch");

    Gradients grads = zero_gradients(net);
    Matrix delta = output_grad;
    for (std::size_t li = n_layers; li-- > 0;) {
        const auto& s = net.layers[li];
        if (!extra.empty() && extra[li]) {
            const Matrix& e = *extra[li];
            if (e.rows() != batch || e.cols() != s.out_dim) throw invalid_argument("backward: injected gradient shape mismatch");
            auto d = delta.data();
            const auto ed = e.data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += ed[i];
        }
        const Matrix& x = trace.layer_input(li);
        const bool need_input_grad = li > 0;
        Matrix din;
        switch (s.kind) {
            case LayerKind::softmax: {
                const Matrix& p = trace.outputs[li];
                din = Matrix(batch, s.in_dim);
                for (std::size_t r = 0; r < batch; ++r) {
                    const auto pr = p.row(r);
                    const auto dr = delta.row(r);
                    double dot = 0.0;
                    for (std::size_t k = 0; k < pr.size(); ++k) dot += pr[k] * dr[k];
                    auto out = din.row(r);
                    for (std::size_t k = 0; k < pr.size(); ++k) out[k] = pr[k] * (dr[k] - dot);
                }
                break;
            }
            case LayerKind::relu: {
                din = delta;
                auto d = din.data();
                const auto xd = x.data();
                for (std::size_t i = 0; i < d.size(); ++i)
                    if (!(xd[i] > 0.0)) d[i] = 0.0;
                break;
            }
            case LayerKind::dense: {
                const auto& w = net.params[li].weight;
                auto& gw = grads.layers[li].weight;
                auto& gb = grads.layers[li].bias;
                for (std::size_t r = 0; r < batch; ++r) {
                    const auto xr = x.row(r);
                    const auto dr = delta.row(r);
                    for (std::size_t o = 0; o < s.out_dim; ++o) {
                        const double d = dr[o];
                        gb[o] += d;
                        auto gwo = gw.row(o);
                        for (std::size_t i = 0; i < s.in_dim; ++i) gwo[i] += d * xr[i];
                    }
                }
                if (need_input_grad) {
                    din = Matrix(batch, s.in_dim);
                    for (std::size_t r = 0; r < batch; ++r) {
                        const auto dr = delta.row(r);
                        auto out = din.row(r);
                        for (std::size_t o = 0; o < s.out_dim; ++o) {
                            const double d = dr[o];
                            const auto wo = w.row(o);
                            for (std::size_t i = 0; i < s.in_dim; ++i) out[i] += wo[i] * d;
                        }
                    }
                }
                break;
            }
            case LayerKind::conv1d: {
                const auto& w = net.params[li].weight;
                auto& gw = grads.layers[li].weight;
                auto& gb = grads.layers[li].bias;
                const std::size_t lin = s.length_in(), lout = s.length_out();
                if (need_input_grad) din = Matrix(batch, s.in_dim);
                for (std::size_t r = 0; r < batch; ++r) {
                    const auto xr = x.row(r);
                    const auto dr = delta.row(r);
                    for (std::size_t co = 0; co < s.channels_out; ++co) {
                        auto gwc = gw.row(co);
                        const auto wc = w.row(co);
                        for (std::size_t t = 0; t < lout; ++t) {
                            const double d = dr[co * lout + t];
                            gb[co] += d;
                            for (std::size_t ci = 0; ci < s.channels_in; ++ci) {
                                const std::size_t base = ci * lin + t * s.stride;
                                for (std::size_t k = 0; k < s.width; ++k) gwc[ci * s.width + k] += d * xr[base + k];
                            }
                            if (need_input_grad) {
                                auto out = din.row(r);
                                for (std::size_t ci = 0; ci < s.channels_in; ++ci) {
                                    const std::size_t base = ci * lin + t * s.stride;
                                    for (std::size_t k = 0; k < s.width; ++k) out[base + k] += wc[ci * s.width + k] * d;
                                }
                            }
                        }
                    }
                }
                break;
            }
        }
        if (need_input_grad) delta = std::move(din);
    }
    return grads;
}

/// Learning-rate multipliers per trainable role. Frozen layers are never updated.
struct RoleMultipliers {
    double finetune = 1.0;
    double adapt = 10.0;

    double of(Role r) const noexcept {
        switch (r) {
            case Role::frozen: return 0.0;
            case Role::finetune: return finetune;
            case Role::adapt: return adapt;
        }
        return 0.0;
    }
};

/// Plain gradient step: W <- W - base_lr * multiplier(role) * dW.
inline Network sgd_step(Network net, const Gradients& grads, double base_lr, const RoleMultipliers& roles = {}) {
    if (!(base_lr >= 0.0)) throw invalid_argument("sgd_step: learning rate must be non-negative");
    if (roles.finetune < 0.0 || roles.adapt < 0.0) throw invalid_argument("sgd_step: role multipliers must be non-negative");
    if (grads.layers.size() != net.layers.size()) throw invalid_argument("sgd_step: gradient list does not match network");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& s = net.layers[l];
        if (!s.parametric() || s.role == Role::frozen) continue;
        const double lr = base_lr * roles.of(s.role);
        if (lr == 0.0) continue;
        auto& p = net.params[l];
        const auto& g = grads.layers[l];
        if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() || g.bias.size() != p.bias.size())
            throw invalid_argument("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        auto w = p.weight.data();
        const auto gw = g.weight.data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
        for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
    }
    return net;
}

}  // namespace dapol::nn
