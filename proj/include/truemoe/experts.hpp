#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "truemoe/image.hpp"
#include "truemoe/nn.hpp"
#include "truemoe/sequential.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr int kNumManifolds = 3;
inline constexpr int kNumLevels = 6;
inline constexpr std::size_t kHeadHidden = 16;

// Frozen multi-scale feature pyramid. Stage j (1-based) produces 8*j channels
// at 64 / 2^(j-1) resolution. Each stage sees the average-pooled previous
// stage plus the image pyramid at its own resolution, through 3x3 kernels
// (replicate padding) used in +/- pairs before the ReLU. Taps on the image
// pyramid are zero-sum.
class Hge {
public:
    static constexpr std::uint64_t kDefaultSeed = 0x4E6E5EEDull;

    explicit Hge(std::uint64_t seed = kDefaultSeed);

    std::vector<Tensor> features(const Tensor& x) const;

    static std::size_t channels(int level) { return 8 * std::size_t(level); }
    static std::size_t resolution(int level) { return kImageSize >> (level - 1); }

    const std::vector<Tensor>& kernels() const { return kernels_; }
    const std::vector<Tensor>& biases() const { return biases_; }
    std::uint64_t digest() const;

private:
    std::vector<Tensor> kernels_;  // [8j, Cin_j, 3, 3]
    std::vector<Tensor> biases_;   // [8j]
};

// Encoder conv 3->16 s2, ReLU, conv 16->32 s2 (latent [32,16,16]); decoder is
// the transposed mirror. Reconstructions are clamped to [0,1].
class AutoencoderPair {
public:
    AutoencoderPair();

    void init(Rng& rng);

    // Unclamped forward used during pretraining.
    Tensor encode(const Tensor& x) const { return encoder_.forward(x); }
    Tensor decode(const Tensor& z) const { return decoder_.forward(z); }

    Sequential<float>& encoder() { return encoder_; }
    Sequential<float>& decoder() { return decoder_; }
    const Sequential<float>& encoder() const { return encoder_; }
    const Sequential<float>& decoder() const { return decoder_; }

    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }
    void unfreeze() { frozen_ = false; }

    std::uint64_t digest() const;

private:
    Sequential<float> encoder_;
    Sequential<float> decoder_;
    bool frozen_ = false;
};

// x' = D(E(x)) clamped to [0,1]. Throws StateError unless the pair is frozen.
Tensor autoencode(const AutoencoderPair& pair, const Tensor& x);

enum class GdfMode { residual, absolute, concat };

std::string to_string(GdfMode m);
GdfMode parse_gdf_mode(const std::string& s);

struct Gdf {
    int level = 1;
    Tensor map;
};

// Signed residual H(x)_j - H(x_rec)_j.
Gdf gdf(const Hge& hge, const Tensor& x, const Tensor& x_rec, int level);
Gdf gdf_from_features(const std::vector<Tensor>& hx, const std::vector<Tensor>& hrec, int level);

// Pooled head input for one level: GAP of the residual, of its magnitude, or
// of both feature maps side by side.
std::vector<float> pooled_gdf(const Tensor& hx, const Tensor& hrec, GdfMode mode);
std::size_t head_input_width(int level, GdfMode mode);

// Head: standardize -> linear(c->16) -> ReLU -> linear(16->1) -> sigmoid.
// params = {w1 [16,c], b1 [16], w2 [1,16], b2 [1]}. The standardizer
// (mean, scale) is fitted once on training features and never trained.
template <class T>
struct HeadTrace {
    std::vector<T> z;       // standardized input
    BasicTensor<T> hidden;  // post-ReLU
    T logit = 0;
    T prob = 0;
};

template <class T>
T head_forward(std::span<const BasicTensor<T>> params, std::span<const T> mean, std::span<const T> scale,
               std::span<const T> feature, HeadTrace<T>* trace = nullptr) {
    std::vector<T> z(feature.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = mean.empty() ? feature[i] : (feature[i] - mean[i]) * scale[i];
    }
    BasicTensor<T> h = linear(params[0], params[1], std::span<const T>(z));
    relu_inplace(h);
    const T logit = linear(params[2], params[3], std::span<const T>(h.span()))[0];
    const T p = sigmoid(logit);
    if (trace) {
        trace->z = std::move(z);
        trace->hidden = std::move(h);
        trace->logit = logit;
        trace->prob = p;
    }
    return p;
}

// Accumulates parameter gradients from dL/dlogit.
template <class T>
void head_backward(std::span<const BasicTensor<T>> params, const HeadTrace<T>& trace, T grad_logit,
                   std::vector<BasicTensor<T>>& grads) {
    if (grads.empty()) {
        for (const auto& p : params) grads.emplace_back(p.shape());
    }
    const T gy[1] = {grad_logit};
    auto gh = linear_backward(params[2], std::span<const T>(trace.hidden.span()), std::span<const T>(gy), grads[2], &grads[3]);
    for (std::size_t i = 0; i < gh.size(); ++i) {
        if (!(trace.hidden[i] > T(0))) gh[i] = T(0);
    }
    linear_backward(params[0], std::span<const T>(trace.z), std::span<const T>(gh), grads[0], &grads[1]);
}

struct ExpertHead {
    std::vector<Tensor> params;  // w1, b1, w2, b2
    std::vector<float> mean;     // standardizer, empty = identity
    std::vector<float> scale;

    explicit ExpertHead(std::size_t input_width = 0);
    void init(Rng& rng);
    float predict(std::span<const float> feature) const;
    std::uint64_t digest() const;
};

struct ExpertId {
    int manifold = 0;  // [0,3)
    int level = 1;     // [1,6]
};

// 3 manifolds x 6 levels of heads over a shared HGE and per-manifold
// autoencoders.
struct ExpertArray {
    Hge hge;
    std::array<AutoencoderPair, kNumManifolds> autoencoders;
    std::vector<ExpertHead> heads;  // manifold-major
    GdfMode mode = GdfMode::residual;

    explicit ExpertArray(GdfMode mode = GdfMode::residual);

    ExpertHead& head(ExpertId id);
    const ExpertHead& head(ExpertId id) const;
    static std::size_t index(ExpertId id);
    std::size_t size() const { return heads.size(); }
};

// Pooled GDF inputs of all 18 experts for one image, manifold-major.
using ExpertFeatures = std::vector<std::vector<float>>;

ExpertFeatures expert_features(const ExpertArray& array, const Tensor& x);

float expert_predict(const ExpertArray& array, ExpertId id, const Tensor& x);
float expert_predict(const ExpertArray& array, ExpertId id, const ExpertFeatures& features);

}  // namespace truemoe
