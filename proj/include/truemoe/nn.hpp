#pragma once

// Layer primitives with hand-derived gradients. Everything is templated on the
// scalar type so the exact same code can be checked in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "truemoe/errors.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw DimensionError("kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Range of output indices o for which o*stride - pad + kofs lands inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out, std::size_t stride,
                                                       std::size_t pad, std::size_t kofs) {
    const long long s = static_cast<long long>(stride);
    const long long shift = static_cast<long long>(kofs) - static_cast<long long>(pad);
    long long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
    long long hi = (static_cast<long long>(in) - 1 - shift);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min<long long>(hi, static_cast<long long>(out) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

template <class T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& kernels) {
    if (input.rank() != 3 || kernels.rank() != 4) throw DimensionError("conv2d expects [C,H,W] input and [K,C,kh,kw] kernels");
    if (input.dim(0) != kernels.dim(1)) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", kernels " +
                             shape_str(kernels.shape()));
    }
}

}  // namespace detail

// Cross-correlation with zero padding. bias may be empty.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
    detail::check_conv_shapes(input, kernels);
    if (stride == 0) throw DomainError("conv2d stride must be positive");
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t K = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t Ho = conv_out_size(H, kh, stride, padding), Wo = conv_out_size(W, kw, stride, padding);
    if (!bias.empty() && bias.size() != K) throw DimensionError("conv2d bias length mismatch");
    BasicTensor<T> out({K, Ho, Wo});
    const T* in = input.data();
    const T* wt = kernels.data();
    T* o = out.data();
    for (std::size_t k = 0; k < K; ++k) {
        T* ok = o + k * Ho * Wo;
        if (!bias.empty()) std::fill(ok, ok + Ho * Wo, bias[k]);
        for (std::size_t c = 0; c < C; ++c) {
            const T* ic = in + c * H * W;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(H, Ho, stride, padding, ky);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [x0, x1] = detail::valid_range(W, Wo, stride, padding, kx);
                    const T w = wt[((k * C + c) * kh + ky) * kw + kx];
                    if (w == T(0)) continue;
                    for (std::size_t oy = y0; oy < y1; ++oy) {
                        const T* row = ic + (oy * stride + ky - padding) * W;
                        T* orow = ok + oy * Wo;
                        if (stride == 1) {
                            const T* src = row + (x0 + kx - padding);
                            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += w * src[ox - x0];
                        } else {
                            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += w * row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, std::size_t stride,
                      std::size_t padding) {
    return conv2d(input, kernels, BasicTensor<T>{}, stride, padding);
}

template <class T>
struct ConvGrads {
    BasicTensor<T> input;    // empty when not requested
    BasicTensor<T> kernels;
    BasicTensor<T> bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& grad_out, std::size_t stride, std::size_t padding,
                             bool need_input_grad) {
    detail::check_conv_shapes(input, kernels);
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t K = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t Ho = grad_out.dim(1), Wo = grad_out.dim(2);
    ConvGrads<T> g;
    g.kernels = BasicTensor<T>(kernels.shape());
    g.bias = BasicTensor<T>({K});
    if (need_input_grad) g.input = BasicTensor<T>(input.shape());
    const T* in = input.data();
    const T* wt = kernels.data();
    const T* go = grad_out.data();
    for (std::size_t k = 0; k < K; ++k) {
        const T* gk = go + k * Ho * Wo;
        T bsum = 0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) bsum += gk[i];
        g.bias[k] = bsum;
        for (std::size_t c = 0; c < C; ++c) {
            const T* ic = in + c * H * W;
            T* gic = need_input_grad ? g.input.data() + c * H * W : nullptr;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(H, Ho, stride, padding, ky);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [x0, x1] = detail::valid_range(W, Wo, stride, padding, kx);
                    const std::size_t widx = ((k * C + c) * kh + ky) * kw + kx;
                    const T w = wt[widx];
                    T acc = 0;
                    for (std::size_t oy = y0; oy < y1; ++oy) {
                        const std::size_t off = (oy * stride + ky - padding) * W;
                        const T* row = ic + off;
                        const T* grow = gk + oy * Wo;
                        for (std::size_t ox = x0; ox < x1; ++ox) acc += grow[ox] * row[ox * stride + kx - padding];
                        if (gic) {
                            T* girow = gic + off;
                            for (std::size_t ox = x0; ox < x1; ++ox) girow[ox * stride + kx - padding] += w * grow[ox];
                        }
                    }
                    g.kernels[widx] = acc;
                }
            }
        }
    }
    return g;
}

// Adjoint of conv2d: kernels are [K,C,kh,kw] and map a K-channel input back to C
// channels. Output size (H-1)*stride - 2*pad + kh + output_padding.
template <class T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t padding,
                                std::size_t output_padding) {
    if (input.rank() != 3 || kernels.rank() != 4 || input.dim(0) != kernels.dim(0)) {
        throw DimensionError("conv_transpose2d channel mismatch: input " + shape_str(input.shape()) +
                             ", kernels " + shape_str(kernels.shape()));
    }
    const std::size_t K = kernels.dim(0), C = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t Hi = input.dim(1), Wi = input.dim(2);
    const std::size_t Ho = (Hi - 1) * stride + kh + output_padding - 2 * padding;
    const std::size_t Wo = (Wi - 1) * stride + kw + output_padding - 2 * padding;
    BasicTensor<T> out({C, Ho, Wo});
    if (!bias.empty()) {
        if (bias.size() != C) throw DimensionError("conv_transpose2d bias length mismatch");
        for (std::size_t c = 0; c < C; ++c) std::fill(out.data() + c * Ho * Wo, out.data() + (c + 1) * Ho * Wo, bias[c]);
    }
    const T* in = input.data();
    const T* wt = kernels.data();
    for (std::size_t k = 0; k < K; ++k) {
        const T* ik = in + k * Hi * Wi;
        for (std::size_t c = 0; c < C; ++c) {
            T* oc = out.data() + c * Ho * Wo;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(Ho, Hi, stride, padding, ky);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [x0, x1] = detail::valid_range(Wo, Wi, stride, padding, kx);
                    const T w = wt[((k * C + c) * kh + ky) * kw + kx];
                    for (std::size_t iy = y0; iy < y1; ++iy) {
                        T* orow = oc + (iy * stride + ky - padding) * Wo;
                        const T* irow = ik + iy * Wi;
                        for (std::size_t ix = x0; ix < x1; ++ix) orow[ix * stride + kx - padding] += w * irow[ix];
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
ConvGrads<T> conv_transpose2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                       const BasicTensor<T>& grad_out, std::size_t stride, std::size_t padding,
                                       bool need_input_grad) {
    const std::size_t K = kernels.dim(0), C = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t Hi = input.dim(1), Wi = input.dim(2);
    const std::size_t Ho = grad_out.dim(1), Wo = grad_out.dim(2);
    ConvGrads<T> g;
    g.kernels = BasicTensor<T>(kernels.shape());
    g.bias = BasicTensor<T>({C});
    if (need_input_grad) g.input = BasicTensor<T>(input.shape());
    for (std::size_t c = 0; c < C; ++c) {
        T s = 0;
        const T* gc = grad_out.data() + c * Ho * Wo;
        for (std::size_t i = 0; i < Ho * Wo; ++i) s += gc[i];
        g.bias[c] = s;
    }
    const T* in = input.data();
    const T* wt = kernels.data();
    for (std::size_t k = 0; k < K; ++k) {
        const T* ik = in + k * Hi * Wi;
        T* gik = need_input_grad ? g.input.data() + k * Hi * Wi : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
            const T* gc = grad_out.data() + c * Ho * Wo;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(Ho, Hi, stride, padding, ky);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [x0, x1] = detail::valid_range(Wo, Wi, stride, padding, kx);
                    const std::size_t widx = ((k * C + c) * kh + ky) * kw + kx;
                    const T w = wt[widx];
                    T acc = 0;
                    for (std::size_t iy = y0; iy < y1; ++iy) {
                        const T* grow = gc + (iy * stride + ky - padding) * Wo;
                        const T* irow = ik + iy * Wi;
                        for (std::size_t ix = x0; ix < x1; ++ix) acc += irow[ix] * grow[ix * stride + kx - padding];
                        if (gik) {
                            T* girow = gik + iy * Wi;
                            for (std::size_t ix = x0; ix < x1; ++ix) girow[ix] += w * grow[ix * stride + kx - padding];
                        }
                    }
                    g.kernels[widx] = acc;
                }
            }
        }
    }
    return g;
}

template <class T>
void relu_inplace(BasicTensor<T>& x) {
    for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

// grad is masked where the forward output was not positive.
template <class T>
void relu_backward_inplace(const BasicTensor<T>& output, BasicTensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(output[i] > T(0))) grad[i] = T(0);
    }
}

template <class T>
BasicTensor<T> avg_pool2(const BasicTensor<T>& x) {
    const std::size_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
    BasicTensor<T> out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                out.at(c, y, xx) = T(0.25) * ((x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1)) +
                                              (x.at(c, 2 * y + 1, 2 * xx) + x.at(c, 2 * y + 1, 2 * xx + 1)));
    return out;
}

template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    const std::size_t C = x.dim(0), n = x.dim(1) * x.dim(2);
    BasicTensor<T> out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        const T* p = x.data() + c * n;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        out[c] = static_cast<T>(s / double(n));
    }
    return out;
}

template <class T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out) {
    BasicTensor<T> g(input_shape);
    const std::size_t C = input_shape[0], n = input_shape[1] * input_shape[2];
    for (std::size_t c = 0; c < C; ++c) {
        const T v = grad_out[c] / T(n);
        std::fill(g.data() + c * n, g.data() + (c + 1) * n, v);
    }
    return g;
}

// Edge-replicating pad of a [C,H,W] tensor.
template <class T>
BasicTensor<T> replicate_pad(const BasicTensor<T>& x, std::size_t pad) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    BasicTensor<T> out({C, H + 2 * pad, W + 2 * pad});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H + 2 * pad; ++y) {
            const std::size_t sy = std::min(H - 1, y < pad ? 0 : y - pad);
            for (std::size_t xx = 0; xx < W + 2 * pad; ++xx) {
                const std::size_t sx = std::min(W - 1, xx < pad ? 0 : xx - pad);
                out.at(c, y, xx) = x.at(c, sy, sx);
            }
        }
    return out;
}

// y = W x + b with W [out,in].
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& weight, const BasicTensor<T>& bias, std::span<const T> x) {
    const std::size_t O = weight.dim(0), I = weight.dim(1);
    if (x.size() != I) throw DimensionError("linear input length " + std::to_string(x.size()) + " != " + std::to_string(I));
    BasicTensor<T> y({O});
    for (std::size_t o = 0; o < O; ++o) {
        T acc = bias.empty() ? T(0) : bias[o];
        const T* w = weight.data() + o * I;
        for (std::size_t i = 0; i < I; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
    return y;
}

// Accumulates parameter gradients; returns dL/dx.
template <class T>
std::vector<T> linear_backward(const BasicTensor<T>& weight, std::span<const T> x, std::span<const T> grad_y,
                               BasicTensor<T>& grad_weight, BasicTensor<T>* grad_bias) {
    const std::size_t O = weight.dim(0), I = weight.dim(1);
    std::vector<T> gx(I, T(0));
    for (std::size_t o = 0; o < O; ++o) {
        const T g = grad_y[o];
        if (grad_bias) (*grad_bias)[o] += g;
        const T* w = weight.data() + o * I;
        T* gw = grad_weight.data() + o * I;
        for (std::size_t i = 0; i < I; ++i) {
            gw[i] += g * x[i];
            gx[i] += g * w[i];
        }
    }
    return gx;
}

template <class T>
T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <class T>
T softplus(T z) {
    return z > T(20) ? z : std::log1p(std::exp(z));
}

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
    std::vector<T> out(logits.size());
    if (logits.empty()) return out;
    const T m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        s += out[i];
    }
    for (auto& v : out) v = static_cast<T>(v / s);
    return out;
}

// dL/dlogits given softmax output w and dL/dw.
template <class T>
std::vector<T> softmax_backward(std::span<const T> w, std::span<const T> grad_w) {
    T dot = 0;
    for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * grad_w[i];
    std::vector<T> g(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) g[i] = w[i] * (grad_w[i] - dot);
    return g;
}

}  // namespace truemoe
