#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "truemoe/nn.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

enum class LayerKind { conv, conv_transpose, relu };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    std::size_t output_padding = 0;

    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t stride) {
        return {LayerKind::conv, in, out, 3, stride, 1, 0};
    }
    static LayerSpec up(std::size_t in, std::size_t out) { return {LayerKind::conv_transpose, in, out, 3, 2, 1, 1}; }
    static LayerSpec relu() { return {}; }

    bool has_params() const { return kind != LayerKind::relu; }
};

// A chain of conv / transposed-conv / ReLU layers on a single [C,H,W] sample.
// Parameters are stored flat as (weight, bias) pairs for each parametric layer.
template <class T>
class Sequential {
public:
    // Activations recorded by forward() for use in backward().
    struct Trace {
        std::vector<BasicTensor<T>> inputs;  // input to layer i
        BasicTensor<T> output;
    };

    Sequential() = default;

    explicit Sequential(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
        for (const auto& s : specs_) {
            if (!s.has_params()) continue;
            if (s.kind == LayerKind::conv) {
                params_.emplace_back(Shape{s.out_channels, s.in_channels, s.kernel, s.kernel});
            } else {
                // Transposed kernels keep the [K=in, C=out] layout of the conv they invert.
                params_.emplace_back(Shape{s.in_channels, s.out_channels, s.kernel, s.kernel});
            }
            params_.emplace_back(Shape{s.out_channels});
        }
    }

    // He-normal weights, zero biases.
    void init(Rng& rng) {
        std::size_t p = 0;
        for (const auto& s : specs_) {
            if (!s.has_params()) continue;
            const double fan_in = double(s.in_channels * s.kernel * s.kernel) /
                                  (s.kind == LayerKind::conv_transpose ? double(s.stride * s.stride) : 1.0);
            const double stddev = std::sqrt(2.0 / fan_in);
            for (auto& v : params_[p].values()) v = static_cast<T>(normal(rng, 0.0, stddev));
            params_[p + 1].fill(T(0));
            p += 2;
        }
    }

    BasicTensor<T> forward(const BasicTensor<T>& x, Trace* trace = nullptr) const {
        BasicTensor<T> cur = x;
        if (trace) trace->inputs.clear();
        std::size_t p = 0;
        for (const auto& s : specs_) {
            if (trace) trace->inputs.push_back(cur);
            switch (s.kind) {
                case LayerKind::conv:
                    cur = conv2d(cur, params_[p], params_[p + 1], s.stride, s.padding);
                    p += 2;
                    break;
                case LayerKind::conv_transpose:
                    cur = conv_transpose2d(cur, params_[p], params_[p + 1], s.stride, s.padding, s.output_padding);
                    p += 2;
                    break;
                case LayerKind::relu:
                    relu_inplace(cur);
                    break;
            }
        }
        if (trace) trace->output = cur;
        return cur;
    }

    // Accumulates dL/dparams into grads (same layout as params()) and returns
    // dL/dinput when requested.
    BasicTensor<T> backward(const Trace& trace, BasicTensor<T> grad_out, std::vector<BasicTensor<T>>& grads,
                            bool need_input_grad = false) const {
        if (grads.empty()) {
            for (const auto& prm : params_) grads.emplace_back(prm.shape());
        }
        std::size_t p = params_.size();
        for (std::size_t li = specs_.size(); li-- > 0;) {
            const auto& s = specs_[li];
            const bool want_input = need_input_grad || li > 0;
            switch (s.kind) {
                case LayerKind::relu: {
                    const BasicTensor<T>& out = (li + 1 < specs_.size()) ? trace.inputs[li + 1] : trace.output;
                    relu_backward_inplace(out, grad_out);
                    break;
                }
                case LayerKind::conv: {
                    p -= 2;
                    auto g = conv2d_backward(trace.inputs[li], params_[p], grad_out, s.stride, s.padding, want_input);
                    grads[p] += g.kernels;
                    grads[p + 1] += g.bias;
                    grad_out = std::move(g.input);
                    break;
                }
                case LayerKind::conv_transpose: {
                    p -= 2;
                    auto g = conv_transpose2d_backward(trace.inputs[li], params_[p], grad_out, s.stride, s.padding,
                                                       want_input);
                    grads[p] += g.kernels;
                    grads[p + 1] += g.bias;
                    grad_out = std::move(g.input);
                    break;
                }
            }
        }
        return grad_out;
    }

    std::vector<BasicTensor<T>>& params() { return params_; }
    const std::vector<BasicTensor<T>>& params() const { return params_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }

    std::vector<std::string> param_names(const std::string& prefix) const {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < params_.size(); i += 2) {
            names.push_back(prefix + "." + std::to_string(i / 2) + ".weight");
            names.push_back(prefix + "." + std::to_string(i / 2) + ".bias");
        }
        return names;
    }

    template <class U>
    Sequential<U> cast() const {
        Sequential<U> out(specs_);
        for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = params_[i].template cast<U>();
        return out;
    }

private:
    std::vector<LayerSpec> specs_;
    std::vector<BasicTensor<T>> params_;
};

}  // namespace truemoe
