#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "truemoe/experts.hpp"
#include "truemoe/nn.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/sequential.hpp"
#include "truemoe/signal.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr std::size_t kGaeDim = 16;
inline constexpr std::size_t kDomainLatent = 32;
inline constexpr std::size_t kMlreDim = 3 * kDomainLatent;
inline constexpr std::size_t kManifoldFeature = 8;
// Added to softplus so the log term of the routing loss stays bounded.
inline constexpr double kFmFloor = 1e-3;
inline constexpr int kNumGranularityLabels = kNumLevels;

// ---- gating -------------------------------------------------------------

template <class T>
struct BasicGateParams {
    BasicTensor<T> weight;  // [experts, feature]
    BasicTensor<T> bias;    // [experts]
    double noise_scale = 0.0;
};
using GateParams = BasicGateParams<float>;

GateParams make_gate(std::size_t feature_dim, std::size_t experts, Rng& rng, double noise_scale = 0.0);

template <class T>
std::vector<T> gate_logits(std::span<const T> h, const BasicGateParams<T>& g) {
    const auto y = linear(g.weight, g.bias, h);
    return y.values();
}

template <class T>
std::vector<T> dense_gate(std::span<const T> h, const BasicGateParams<T>& g) {
    const auto z = gate_logits(h, g);
    return softmax(std::span<const T>(z));
}

// Indices of the k largest logits; equal logits keep the lower index first.
template <class T>
std::vector<std::size_t> top_k_indices(std::span<const T> logits, int k) {
    if (k < 1 || std::size_t(k) > logits.size()) {
        throw DomainError("top-k: k=" + std::to_string(k) + " outside [1," + std::to_string(logits.size()) + "]");
    }
    std::vector<std::size_t> idx(logits.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    idx.resize(std::size_t(k));
    return idx;
}

// Softmax over the top-k logits; every other weight is exactly zero.
template <class T>
std::vector<T> sparse_softmax(std::span<const T> logits, int k) {
    const auto keep = top_k_indices(logits, k);
    std::vector<T> survivors;
    for (std::size_t i : keep) survivors.push_back(logits[i]);
    const auto w = softmax(std::span<const T>(survivors));
    std::vector<T> out(logits.size(), T(0));
    for (std::size_t n = 0; n < keep.size(); ++n) out[keep[n]] = w[n];
    return out;
}

// Noisy top-k gate. Noise N(0, noise_scale^2) is added only when a seed is
// given; inference passes no seed.
template <class T>
std::vector<T> sparse_gate(std::span<const T> h, const BasicGateParams<T>& g, int k,
                           std::optional<std::uint64_t> seed = std::nullopt) {
    auto z = gate_logits(h, g);
    if (k < 1 || std::size_t(k) > z.size()) throw DomainError("sparse gate: k outside [1, experts]");
    if (seed && g.noise_scale > 0) {
        Rng rng(*seed);
        for (auto& v : z) v += static_cast<T>(normal(rng, 0.0, g.noise_scale));
    }
    return sparse_softmax(std::span<const T>(z), k);
}

// Backward through gate weights w = (sparse) softmax(W h + b). Zero weights
// carry no gradient, which is the exact derivative for the surviving set.
// Accumulates into gw/gb and returns dL/dh.
template <class T>
std::vector<T> gate_backward(std::span<const T> h, const BasicGateParams<T>& g, std::span<const T> w,
                             std::span<const T> grad_w, BasicTensor<T>& gw, BasicTensor<T>& gb) {
    const auto gz = softmax_backward(w, grad_w);
    return linear_backward(g.weight, h, std::span<const T>(gz), gw, &gb);
}

// ---- GAE ------------------------------------------------------------------

// Gain applied to SRM residual maps before they enter a learned encoder.
inline constexpr float kSrmGain = 4.0f;

template <class T>
struct BasicGae {
    Sequential<T> net;                  // [C,64,64] -> [16,8,8]
    BasicTensor<T> ev;                  // frozen random projection [16, 3*8*8]
    BasicTensor<T> caption_table;       // [8,16]
    BasicTensor<T> granularity_table;   // [6,16]
    bool rgb_only = false;
    bool frozen = false;

    template <class U>
    BasicGae<U> cast() const {
        BasicGae<U> o;
        o.net = net.template cast<U>();
        o.ev = ev.template cast<U>();
        o.caption_table = caption_table.template cast<U>();
        o.granularity_table = granularity_table.template cast<U>();
        o.rgb_only = rgb_only;
        o.frozen = frozen;
        return o;
    }
};
using Gae = BasicGae<float>;

Gae make_gae(std::uint64_t seed, bool rgb_only = false);
std::uint64_t gae_digest(const Gae& gae);

Tensor gae_input(const Tensor& pixels, bool rgb_only);

template <class T>
BasicTensor<T> ev_input(const BasicTensor<T>& pixels) {
    BasicTensor<T> x = pixels;
    while (x.dim(1) > 8) x = avg_pool2(x);
    return x;
}

template <class T>
struct GaeOutput {
    std::vector<T> raw;  // un-normalized pooled GAE output
    std::vector<T> f_g;  // raw / |raw|
    std::vector<T> f_s;  // E_v(I) + raw
};

template <class T>
std::vector<T> l2_normalized(std::span<const T> v) {
    double n = 0;
    for (T x : v) n += double(x) * double(x);
    n = std::sqrt(std::max(n, 1e-24));
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(double(v[i]) / n);
    return out;
}

// d(v/|v|)^T g = (g - (g.u) u) / |v|
template <class T>
std::vector<T> l2_normalize_backward(std::span<const T> v, std::span<const T> g) {
    double n = 0;
    for (T x : v) n += double(x) * double(x);
    n = std::sqrt(std::max(n, 1e-24));
    double gu = 0;
    for (std::size_t i = 0; i < v.size(); ++i) gu += double(g[i]) * double(v[i]) / n;
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>((double(g[i]) - gu * double(v[i]) / n) / n);
    return out;
}

template <class T>
GaeOutput<T> gae_forward(const BasicGae<T>& gae, const BasicTensor<T>& input, const BasicTensor<T>& pixels,
                         typename Sequential<T>::Trace* trace = nullptr) {
    const auto feat = gae.net.forward(input, trace);
    const auto pooled = global_avg_pool(feat);
    GaeOutput<T> out;
    out.raw = pooled.values();
    out.f_g = l2_normalized(std::span<const T>(out.raw));
    const auto ev_in = ev_input(pixels);
    const auto ev = linear(gae.ev, BasicTensor<T>{}, ev_in.span());
    out.f_s.resize(kGaeDim);
    for (std::size_t i = 0; i < kGaeDim; ++i) out.f_s[i] = ev[i] + out.raw[i];
    return out;
}

GaeOutput<float> gae_embed(const Gae& gae, const Tensor& pixels);

// Nearest granularity label (1-based) by cosine similarity to the label table.
int gae_predict_label(const Gae& gae, std::span<const float> f_g);

// ---- MLRE -----------------------------------------------------------------

enum class MlreDomains { all, rgb_only };
std::string to_string(MlreDomains d);
MlreDomains parse_mlre_domains(const std::string& s);

enum class Domain { rgb = 0, srm = 1, dft = 2 };
inline constexpr std::array<std::size_t, 3> kDomainChannels = {3, 3, 1};

// The signal each branch encodes and reconstructs.
Tensor domain_signal(const Tensor& pixels, Domain d);

template <class T>
struct BasicMlre {
    std::array<Sequential<T>, 3> encoders;  // [C,64,64] -> [32,16,16]
    std::array<Sequential<T>, 3> decoders;  // dropped after pretraining
    MlreDomains domains = MlreDomains::all;
    bool frozen = false;
};
using Mlre = BasicMlre<float>;

std::vector<LayerSpec> mlre_encoder_specs(std::size_t channels);
std::vector<LayerSpec> mlre_decoder_specs(std::size_t channels);
Mlre make_mlre(std::uint64_t seed, MlreDomains domains = MlreDomains::all);
std::uint64_t mlre_encoder_digest(const Mlre& mlre);

// 96-dim latent: [RGB | SRM | DFT], each the GAP of its encoder output.
// In rgb_only mode the SRM and DFT segments are zero. Throws StateError
// unless the encoders are frozen.
std::vector<float> mlre_embed(const Mlre& mlre, const Tensor& pixels);
std::vector<float> mlre_embed_unchecked(const Mlre& mlre, const Tensor& pixels);

// ---- mapping nets, decision, fusion ----------------------------------------

template <class T>
struct BasicMappingNets {
    BasicTensor<T> mg_weight, mg_bias;  // M_g: [16,16], [16]
    BasicTensor<T> mm_weight, mm_bias;  // M_m: [8,96], [8]
    BasicTensor<T> fm_weight, fm_bias;  // uncertainty head: [1,8], [1]
    BasicGateParams<T> gm;              // G_m: [3,8]

    std::vector<BasicTensor<T>> params() const {
        return {mg_weight, mg_bias, mm_weight, mm_bias, fm_weight, fm_bias, gm.weight, gm.bias};
    }
    void set_params(std::span<const BasicTensor<T>> p) {
        mg_weight = p[0];
        mg_bias = p[1];
        mm_weight = p[2];
        mm_bias = p[3];
        fm_weight = p[4];
        fm_bias = p[5];
        gm.weight = p[6];
        gm.bias = p[7];
    }
    template <class U>
    BasicMappingNets<U> cast() const {
        BasicMappingNets<U> o;
        std::vector<BasicTensor<U>> ps;
        for (const auto& t : params()) ps.push_back(t.template cast<U>());
        o.set_params(ps);
        o.gm.noise_scale = gm.noise_scale;
        return o;
    }
};
using MappingNets = BasicMappingNets<float>;

MappingNets make_mapping_nets(Rng& rng);
inline const std::vector<std::string>& mapping_param_names() {
    static const std::vector<std::string> names = {"router.mg.weight", "router.mg.bias", "router.mm.weight",
                                                   "router.mm.bias",   "router.fm.weight", "router.fm.bias",
                                                   "router.gm.weight", "router.gm.bias"};
    return names;
}

template <class T>
struct RouterForward {
    std::vector<T> f_g;         // M_g output, GAE space
    std::vector<T> f_m_vec;     // M_m output
    T fm_pre = 0;               // uncertainty head pre-activation
    T f_m = 0;                  // softplus(fm_pre) + kFmFloor
    std::vector<T> gate_logits;
    std::vector<T> weights;     // dense manifold gate
};

template <class T>
RouterForward<T> router_forward(const BasicMappingNets<T>& nets, std::span<const T> gae_embedding,
                                std::span<const T> mlre_latent) {
    RouterForward<T> r;
    r.f_g = linear(nets.mg_weight, nets.mg_bias, gae_embedding).values();
    r.f_m_vec = linear(nets.mm_weight, nets.mm_bias, mlre_latent).values();
    r.fm_pre = linear(nets.fm_weight, nets.fm_bias, std::span<const T>(r.f_m_vec))[0];
    r.f_m = softplus(r.fm_pre) + T(kFmFloor);
    r.gate_logits = gate_logits(std::span<const T>(r.f_m_vec), nets.gm);
    r.weights = softmax(std::span<const T>(r.gate_logits));
    return r;
}

// Backward given dL/df_g, dL/df_m and dL/dweights. grads follow params() order.
template <class T>
void router_backward(const BasicMappingNets<T>& nets, const RouterForward<T>& r, std::span<const T> gae_embedding,
                     std::span<const T> mlre_latent, std::span<const T> grad_fg, T grad_fm,
                     std::span<const T> grad_w, std::vector<BasicTensor<T>>& grads) {
    if (grads.empty()) {
        for (const auto& p : nets.params()) grads.emplace_back(p.shape());
    }
    linear_backward(nets.mg_weight, gae_embedding, grad_fg, grads[0], &grads[1]);
    auto g_vec = gate_backward(std::span<const T>(r.f_m_vec), nets.gm, std::span<const T>(r.weights), grad_w,
                               grads[6], grads[7]);
    const T g_pre[1] = {grad_fm * sigmoid(r.fm_pre)};
    const auto g_vec2 = linear_backward(nets.fm_weight, std::span<const T>(r.f_m_vec), std::span<const T>(g_pre),
                                        grads[4], &grads[5]);
    for (std::size_t i = 0; i < g_vec.size(); ++i) g_vec[i] += g_vec2[i];
    linear_backward(nets.mm_weight, mlre_latent, std::span<const T>(g_vec), grads[2], &grads[3]);
}

struct GranularityClusters {
    Tensor centers;                // [6,16]
    std::vector<int> assignment;   // 0-based cluster per training image
    bool empty() const { return centers.empty(); }
};

struct RoutingDecision {
    int level = 1;                              // 1-based
    std::array<float, kNumManifolds> manifold_weights{};
    std::array<float, kNumLevels> gae_distances{};
    std::vector<float> gate_logits;
    float f_m = 0;
};

// Index of the nearest center (0-based); ties go to the lowest index.
int nearest_center(const Tensor& centers, std::span<const float> x, std::vector<double>* distances = nullptr);

RoutingDecision route_from_embeddings(std::span<const float> gae_embedding, std::span<const float> mlre_latent,
                                      const GranularityClusters& clusters, const MappingNets& nets);
RoutingDecision route(const Tensor& pixels, const Gae& gae, const Mlre& mlre, const GranularityClusters& clusters,
                      const MappingNets& nets);

// p = sum_i w_i p_i
float fuse_prediction(const RoutingDecision& decision, std::span<const float> outputs);

}  // namespace truemoe
