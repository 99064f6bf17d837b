#include "truemoe/experts.hpp"

#include <cmath>

#include "truemoe/digest.hpp"
#include "truemoe/errors.hpp"
#include "truemoe/rng.hpp"

namespace truemoe {
namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) throw DimensionError("concat: spatial size mismatch");
    Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.values().begin(), a.values().end(), out.data());
    std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
    return out;
}

std::size_t stage_inputs(int level) { return level == 1 ? kChannels : Hge::channels(level - 1) + kChannels; }

}  // namespace

Hge::Hge(std::uint64_t seed) {
    Rng rng(seed);
    for (int j = 1; j <= kNumLevels; ++j) {
        const std::size_t cin = stage_inputs(j), half = channels(j) / 2, dim = cin * 9;
        std::vector<std::vector<double>> rows;
        while (rows.size() < half) {
            std::vector<double> r(dim);
            for (auto& v : r) v = normal(rng);
            // Image-pyramid taps are zero-sum (band-pass); taps on the pooled
            // previous stage are not, so band energies carry to deeper stages.
            for (std::size_t c = cin - kChannels; c < cin; ++c) {
                double m = 0;
                for (std::size_t k = 0; k < 9; ++k) m += r[c * 9 + k];
                for (std::size_t k = 0; k < 9; ++k) r[c * 9 + k] -= m / 9.0;
            }
            for (const auto& q : rows) {
                double d = 0;
                for (std::size_t i = 0; i < dim; ++i) d += r[i] * q[i];
                for (std::size_t i = 0; i < dim; ++i) r[i] -= d * q[i];
            }
            double n = 0;
            for (double v : r) n += v * v;
            n = std::sqrt(n);
            if (n < 1e-6) continue;
            for (auto& v : r) v /= n;
            rows.push_back(std::move(r));
        }
        Tensor k({channels(j), cin, 3, 3});
        for (std::size_t o = 0; o < half; ++o)
            for (std::size_t i = 0; i < dim; ++i) {
                k[o * dim + i] = static_cast<float>(rows[o][i]);
                k[(o + half) * dim + i] = static_cast<float>(-rows[o][i]);
            }
        kernels_.push_back(std::move(k));
        biases_.emplace_back(Shape{channels(j)});
    }
}

std::vector<Tensor> Hge::features(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != kChannels || x.dim(1) != kImageSize || x.dim(2) != kImageSize) {
        throw DimensionError("HGE expects [3,64,64], got " + shape_str(x.shape()));
    }
    std::vector<Tensor> out;
    Tensor pyramid = x;
    for (int j = 1; j <= kNumLevels; ++j) {
        Tensor in = j == 1 ? x : concat_channels(avg_pool2(out.back()), pyramid);
        Tensor y = conv2d(replicate_pad(in, 1), kernels_[std::size_t(j - 1)], biases_[std::size_t(j - 1)], 1, 0);
        relu_inplace(y);
        out.push_back(std::move(y));
        if (j < kNumLevels) pyramid = avg_pool2(pyramid);
    }
    return out;
}

std::uint64_t Hge::digest() const {
    std::vector<Tensor> all = kernels_;
    all.insert(all.end(), biases_.begin(), biases_.end());
    return digest_tensors(all);
}

AutoencoderPair::AutoencoderPair()
    : encoder_({LayerSpec::conv(3, 16, 2), LayerSpec::relu(), LayerSpec::conv(16, 32, 2)}),
      decoder_({LayerSpec::up(32, 16), LayerSpec::relu(), LayerSpec::up(16, 3)}) {}

void AutoencoderPair::init(Rng& rng) {
    encoder_.init(rng);
    decoder_.init(rng);
    // Start the output layer near the mid-grey image so early steps are not
    // spent undoing a large random offset.
    auto& ps = decoder_.params();
    ps[ps.size() - 2] *= 0.1f;
    ps.back().fill(0.5f);
    frozen_ = false;
}

std::uint64_t AutoencoderPair::digest() const {
    std::vector<Tensor> all = encoder_.params();
    all.insert(all.end(), decoder_.params().begin(), decoder_.params().end());
    return digest_tensors(all);
}

Tensor autoencode(const AutoencoderPair& pair, const Tensor& x) {
    if (!pair.frozen()) throw StateError("autoencoder used for inference before it was frozen");
    Tensor y = pair.decode(pair.encode(x));
    for (auto& v : y.values()) v = std::clamp(v, 0.0f, 1.0f);
    return y;
}

std::string to_string(GdfMode m) {
    switch (m) {
        case GdfMode::residual: return "residual";
        case GdfMode::absolute: return "absolute";
        case GdfMode::concat: return "concat";
    }
    return "?";
}

GdfMode parse_gdf_mode(const std::string& s) {
    if (s == "residual") return GdfMode::residual;
    if (s == "absolute") return GdfMode::absolute;
    if (s == "concat") return GdfMode::concat;
    throw ConfigError("unknown gdf aggregation '" + s + "'");
}

Gdf gdf_from_features(const std::vector<Tensor>& hx, const std::vector<Tensor>& hrec, int level) {
    if (level < 1 || level > kNumLevels) throw DomainError("GDF level must lie in [1,6]");
    return {level, hx[std::size_t(level - 1)] - hrec[std::size_t(level - 1)]};
}

Gdf gdf(const Hge& hge, const Tensor& x, const Tensor& x_rec, int level) {
    if (level < 1 || level > kNumLevels) throw DomainError("GDF level must lie in [1,6]");
    return gdf_from_features(hge.features(x), hge.features(x_rec), level);
}

std::vector<float> pooled_gdf(const Tensor& hx, const Tensor& hrec, GdfMode mode) {
    hx.require_same_shape(hrec);
    const std::size_t C = hx.dim(0), n = hx.dim(1) * hx.dim(2);
    std::vector<float> out(mode == GdfMode::concat ? 2 * C : C);
    for (std::size_t c = 0; c < C; ++c) {
        const float* a = hx.data() + c * n;
        const float* b = hrec.data() + c * n;
        double s = 0, sa = 0, sb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            s += mode == GdfMode::absolute ? std::abs(double(a[i]) - double(b[i])) : double(a[i]) - double(b[i]);
            sa += a[i];
            sb += b[i];
        }
        if (mode == GdfMode::concat) {
            out[c] = static_cast<float>(sa / double(n));
            out[C + c] = static_cast<float>(sb / double(n));
        } else {
            out[c] = static_cast<float>(s / double(n));
        }
    }
    return out;
}

std::size_t head_input_width(int level, GdfMode mode) {
    return Hge::channels(level) * (mode == GdfMode::concat ? 2 : 1);
}

ExpertHead::ExpertHead(std::size_t input_width) {
    params.emplace_back(Shape{kHeadHidden, input_width});
    params.emplace_back(Shape{kHeadHidden});
    params.emplace_back(Shape{1, kHeadHidden});
    params.emplace_back(Shape{1});
}

void ExpertHead::init(Rng& rng) {
    const double s1 = std::sqrt(2.0 / double(params[0].dim(1)));
    for (auto& v : params[0].values()) v = static_cast<float>(normal(rng, 0.0, s1));
    params[1].fill(0.0f);
    const double s2 = std::sqrt(1.0 / double(kHeadHidden));
    for (auto& v : params[2].values()) v = static_cast<float>(normal(rng, 0.0, s2));
    params[3].fill(0.0f);
}

float ExpertHead::predict(std::span<const float> feature) const {
    return head_forward<float>(params, mean, scale, feature);
}

std::uint64_t ExpertHead::digest() const {
    std::vector<Tensor> all = params;
    all.emplace_back(Shape{mean.size()}, mean);
    all.emplace_back(Shape{scale.size()}, scale);
    return digest_tensors(all);
}

ExpertArray::ExpertArray(GdfMode m) : mode(m) {
    for (int i = 0; i < kNumManifolds; ++i)
        for (int j = 1; j <= kNumLevels; ++j) heads.emplace_back(head_input_width(j, mode));
}

std::size_t ExpertArray::index(ExpertId id) {
    if (id.manifold < 0 || id.manifold >= kNumManifolds || id.level < 1 || id.level > kNumLevels) {
        throw DomainError("expert id (" + std::to_string(id.manifold) + "," + std::to_string(id.level) +
                          ") outside the 3x6 grid");
    }
    return std::size_t(id.manifold * kNumLevels + id.level - 1);
}

ExpertHead& ExpertArray::head(ExpertId id) { return heads[index(id)]; }
const ExpertHead& ExpertArray::head(ExpertId id) const { return heads[index(id)]; }

ExpertFeatures expert_features(const ExpertArray& array, const Tensor& x) {
    const auto hx = array.hge.features(x);
    ExpertFeatures out;
    out.reserve(kNumManifolds * kNumLevels);
    for (const auto& pair : array.autoencoders) {
        const auto hrec = array.hge.features(autoencode(pair, x));
        for (int j = 0; j < kNumLevels; ++j) out.push_back(pooled_gdf(hx[std::size_t(j)], hrec[std::size_t(j)], array.mode));
    }
    return out;
}

float expert_predict(const ExpertArray& array, ExpertId id, const ExpertFeatures& features) {
    return array.head(id).predict(features[ExpertArray::index(id)]);
}

float expert_predict(const ExpertArray& array, ExpertId id, const Tensor& x) {
    const auto& pair = array.autoencoders[std::size_t(id.manifold)];
    const auto hx = array.hge.features(x);
    const auto hrec = array.hge.features(autoencode(pair, x));
    const auto f = pooled_gdf(hx[std::size_t(id.level - 1)], hrec[std::size_t(id.level - 1)], array.mode);
    return array.head(id).predict(f);
}

}  // namespace truemoe
