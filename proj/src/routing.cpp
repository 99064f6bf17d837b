#include "truemoe/routing.hpp"

#include <cmath>
#include <limits>

#include "truemoe/digest.hpp"
#include "truemoe/errors.hpp"

namespace truemoe {

GateParams make_gate(std::size_t feature_dim, std::size_t experts, Rng& rng, double noise_scale) {
    GateParams g;
    g.weight = Tensor({experts, feature_dim});
    const double s = 1.0 / std::sqrt(double(feature_dim));
    for (auto& v : g.weight.values()) v = static_cast<float>(normal(rng, 0.0, s));
    g.bias = Tensor({experts});
    g.noise_scale = noise_scale;
    return g;
}

Tensor gae_input(const Tensor& pixels, bool rgb_only) {
    if (rgb_only) return pixels;
    Tensor srm = srm_filter(pixels);
    srm *= kSrmGain;
    Tensor out({pixels.dim(0) + srm.dim(0), pixels.dim(1), pixels.dim(2)});
    std::copy(pixels.values().begin(), pixels.values().end(), out.data());
    std::copy(srm.values().begin(), srm.values().end(), out.data() + pixels.size());
    return out;
}

Gae make_gae(std::uint64_t seed, bool rgb_only) {
    Rng rng(seed);
    Gae g;
    const std::size_t cin = rgb_only ? 3 : 6;
    g.net = Sequential<float>({LayerSpec::conv(cin, 16, 2), LayerSpec::relu(), LayerSpec::conv(16, 32, 2),
                               LayerSpec::relu(), LayerSpec::conv(32, kGaeDim, 2)});
    g.net.init(rng);
    g.ev = Tensor({kGaeDim, 3 * 8 * 8});
    const double s = 1.0 / std::sqrt(192.0);
    for (auto& v : g.ev.values()) v = static_cast<float>(normal(rng, 0.0, s));
    g.caption_table = Tensor({std::size_t(kNumCategories), kGaeDim});
    g.granularity_table = Tensor({std::size_t(kNumGranularityLabels), kGaeDim});
    for (auto& v : g.caption_table.values()) v = static_cast<float>(normal(rng));
    for (auto& v : g.granularity_table.values()) v = static_cast<float>(normal(rng));
    g.rgb_only = rgb_only;
    return g;
}

std::uint64_t gae_digest(const Gae& gae) {
    std::vector<Tensor> all = gae.net.params();
    all.push_back(gae.ev);
    all.push_back(gae.caption_table);
    all.push_back(gae.granularity_table);
    return digest_tensors(all);
}

GaeOutput<float> gae_embed(const Gae& gae, const Tensor& pixels) {
    return gae_forward(gae, gae_input(pixels, gae.rgb_only), pixels);
}

int gae_predict_label(const Gae& gae, std::span<const float> f_g) {
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (int l = 0; l < kNumGranularityLabels; ++l) {
        const float* row = gae.granularity_table.data() + std::size_t(l) * kGaeDim;
        double dot = 0, n = 0;
        for (std::size_t k = 0; k < kGaeDim; ++k) {
            dot += double(row[k]) * f_g[k];
            n += double(row[k]) * row[k];
        }
        const double sim = dot / std::sqrt(std::max(n, 1e-24));
        if (sim > best_sim) {
            best_sim = sim;
            best = l;
        }
    }
    return best + 1;
}

std::string to_string(MlreDomains d) { return d == MlreDomains::all ? "all" : "rgb"; }

MlreDomains parse_mlre_domains(const std::string& s) {
    if (s == "all") return MlreDomains::all;
    if (s == "rgb") return MlreDomains::rgb_only;
    throw ConfigError("unknown MLRE domain set '" + s + "' (expected all or rgb)");
}

Tensor domain_signal(const Tensor& pixels, Domain d) {
    switch (d) {
        case Domain::rgb: return pixels;
        case Domain::srm: {
            Tensor s = srm_filter(pixels);
            s *= kSrmGain;
            return s;
        }
        case Domain::dft: {
            Tensor f = dft_features(pixels);
            f *= static_cast<float>(1.0 / std::log1p(double(kImageSize * kImageSize)));
            return f;
        }
    }
    throw DomainError("unknown domain");
}

std::vector<LayerSpec> mlre_encoder_specs(std::size_t channels) {
    return {LayerSpec::conv(channels, 16, 2), LayerSpec::relu(), LayerSpec::conv(16, kDomainLatent, 2),
            LayerSpec::relu()};
}

std::vector<LayerSpec> mlre_decoder_specs(std::size_t channels) {
    return {LayerSpec::up(kDomainLatent, 16), LayerSpec::relu(), LayerSpec::up(16, channels)};
}

Mlre make_mlre(std::uint64_t seed, MlreDomains domains) {
    Rng rng(seed);
    Mlre m;
    for (std::size_t d = 0; d < 3; ++d) {
        m.encoders[d] = Sequential<float>(mlre_encoder_specs(kDomainChannels[d]));
        m.decoders[d] = Sequential<float>(mlre_decoder_specs(kDomainChannels[d]));
        m.encoders[d].init(rng);
        m.decoders[d].init(rng);
    }
    m.domains = domains;
    return m;
}

std::uint64_t mlre_encoder_digest(const Mlre& mlre) {
    std::vector<Tensor> all;
    for (const auto& e : mlre.encoders) all.insert(all.end(), e.params().begin(), e.params().end());
    return digest_tensors(all);
}

std::vector<float> mlre_embed_unchecked(const Mlre& mlre, const Tensor& pixels) {
    std::vector<float> out(kMlreDim, 0.0f);
    const std::size_t used = mlre.domains == MlreDomains::all ? 3 : 1;
    for (std::size_t d = 0; d < used; ++d) {
        const Tensor z = mlre.encoders[d].forward(domain_signal(pixels, Domain(d)));
        const Tensor g = global_avg_pool(z);
        std::copy(g.values().begin(), g.values().end(), out.begin() + long(d * kDomainLatent));
    }
    return out;
}

std::vector<float> mlre_embed(const Mlre& mlre, const Tensor& pixels) {
    if (!mlre.frozen) throw StateError("MLRE encoders used for inference before they were frozen");
    return mlre_embed_unchecked(mlre, pixels);
}

MappingNets make_mapping_nets(Rng& rng) {
    MappingNets n;
    n.mg_weight = Tensor({kGaeDim, kGaeDim});
    for (std::size_t i = 0; i < kGaeDim; ++i) n.mg_weight[i * kGaeDim + i] = 1.0f;
    n.mg_bias = Tensor({kGaeDim});
    n.mm_weight = Tensor({kManifoldFeature, kMlreDim});
    const double s = 1.0 / std::sqrt(double(kMlreDim));
    for (auto& v : n.mm_weight.values()) v = static_cast<float>(normal(rng, 0.0, s));
    n.mm_bias = Tensor({kManifoldFeature});
    n.fm_weight = Tensor({1, kManifoldFeature});
    for (auto& v : n.fm_weight.values()) v = static_cast<float>(normal(rng, 0.0, 0.1));
    n.fm_bias = Tensor({1});
    n.gm = make_gate(kManifoldFeature, kNumManifolds, rng);
    return n;
}

int nearest_center(const Tensor& centers, std::span<const float> x, std::vector<double>* distances) {
    if (centers.rank() != 2 || centers.dim(1) != x.size()) throw DimensionError("nearest_center: dimension mismatch");
    const std::size_t k = centers.dim(0), D = centers.dim(1);
    if (distances) distances->assign(k, 0.0);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < D; ++i) {
            const double e = double(centers[c * D + i]) - double(x[i]);
            s += e * e;
        }
        const double d = std::sqrt(s);
        if (distances) (*distances)[c] = d;
        if (d < best_d) {
            best_d = d;
            best = int(c);
        }
    }
    return best;
}

RoutingDecision route_from_embeddings(std::span<const float> gae_embedding, std::span<const float> mlre_latent,
                                      const GranularityClusters& clusters, const MappingNets& nets) {
    if (clusters.empty()) throw StateError("routing requires granularity clusters (run the cluster phase)");
    if (clusters.centers.dim(0) != std::size_t(kNumLevels)) throw StateError("expected 6 granularity clusters");
    const auto r = router_forward(nets, gae_embedding, mlre_latent);
    RoutingDecision d;
    std::vector<double> dist;
    d.level = nearest_center(clusters.centers, r.f_g, &dist) + 1;
    for (int i = 0; i < kNumLevels; ++i) d.gae_distances[std::size_t(i)] = static_cast<float>(dist[std::size_t(i)]);
    for (int i = 0; i < kNumManifolds; ++i) d.manifold_weights[std::size_t(i)] = r.weights[std::size_t(i)];
    d.gate_logits = r.gate_logits;
    d.f_m = r.f_m;
    return d;
}

RoutingDecision route(const Tensor& pixels, const Gae& gae, const Mlre& mlre, const GranularityClusters& clusters,
                      const MappingNets& nets) {
    const auto g = gae_embed(gae, pixels);
    const auto m = mlre_embed(mlre, pixels);
    return route_from_embeddings(g.f_g, m, clusters, nets);
}

float fuse_prediction(const RoutingDecision& decision, std::span<const float> outputs) {
    if (outputs.size() != decision.manifold_weights.size()) {
        throw DimensionError("fuse_prediction: expected one output per manifold expert");
    }
    double p = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) p += double(decision.manifold_weights[i]) * outputs[i];
    return static_cast<float>(std::clamp(p, 0.0, 1.0));
}

}  // namespace truemoe
