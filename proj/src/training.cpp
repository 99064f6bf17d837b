#include "truemoe/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "truemoe/errors.hpp"
#include "truemoe/optim.hpp"
#include "truemoe/parallel.hpp"
#include "truemoe/rng.hpp"

namespace truemoe {
namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

std::span<const float> cs(std::span<const float> s) { return s; }

void scale_all(std::vector<Tensor>& ts, float s) {
    for (auto& t : ts) t *= s;
}

}  // namespace

std::string to_string(Phase p) {
    switch (p) {
        case Phase::pretrain_autoencoders: return "pretrain_autoencoders";
        case Phase::pretrain_mlre: return "pretrain_mlre";
        case Phase::pretrain_gae: return "pretrain_gae";
        case Phase::cluster: return "cluster";
        case Phase::experts_joint: return "experts_joint";
        case Phase::experts_finetune: return "experts_finetune";
        case Phase::routers: return "routers";
    }
    return "?";
}

Phase parse_phase(const std::string& s) {
    for (Phase p : kPhaseOrder) {
        if (to_string(p) == s) return p;
    }
    throw ConfigError("unknown phase '" + s + "'");
}

double reconstruction_error(const Sequential<float>& encoder, const Sequential<float>& decoder,
                            const std::vector<Tensor>& inputs) {
    std::vector<double> losses(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) {
        losses[i] = reconstruction_loss(inputs[i], decoder.forward(encoder.forward(inputs[i])));
    });
    return pairwise_sum(losses) / double(inputs.size());
}

std::pair<double, double> train_reconstruction(Sequential<float>& encoder, Sequential<float>& decoder,
                                               const std::vector<Tensor>& inputs, const TrainPlan& plan) {
    if (inputs.empty()) throw IoError("reconstruction pretraining needs at least one image");
    const double initial = reconstruction_error(encoder, decoder, inputs);
    auto opt_e = make_optimizer(encoder.params(), plan.lr, plan.momentum);
    auto opt_d = make_optimizer(decoder.params(), plan.lr, plan.momentum);
    const std::size_t B = std::size_t(plan.batch_size);
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto order = shuffled(inputs.size(), derive_seed(plan.seed, std::uint64_t(epoch)));
        for (std::size_t start = 0; start < order.size(); start += B) {
            const std::size_t end = std::min(order.size(), start + B);
            std::vector<Tensor> ge, gd;
            for (std::size_t k = start; k < end; ++k) {
                const Tensor& x = inputs[order[k]];
                Sequential<float>::Trace te, td;
                const Tensor z = encoder.forward(x, &te);
                const Tensor y = decoder.forward(z, &td);
                Tensor g;
                reconstruction_loss(x, y, &g);
                const Tensor gz = decoder.backward(td, g, gd, true);
                encoder.backward(te, gz, ge, false);
            }
            const float inv = 1.0f / float(end - start);
            scale_all(ge, inv);
            scale_all(gd, inv);
            sgd_step(encoder.params(), ge, opt_e);
            sgd_step(decoder.params(), gd, opt_d);
        }
    }
    for (const auto& p : encoder.params()) {
        if (!p.all_finite()) throw NumericError("reconstruction training diverged");
    }
    return {initial, reconstruction_error(encoder, decoder, inputs)};
}

BranchLosses pretrain_autoencoders(std::array<AutoencoderPair, kNumManifolds>& pairs,
                                   const std::array<std::vector<Tensor>, kNumManifolds>& corpora,
                                   const TrainPlan& plan) {
    BranchLosses out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Rng rng(derive_seed(plan.seed, 0xAE00 + i));
        pairs[i].init(rng);
        TrainPlan p = plan;
        p.seed = derive_seed(plan.seed, 0xAE10 + i);
        std::tie(out.initial[i], out.final[i]) = train_reconstruction(pairs[i].encoder(), pairs[i].decoder(), corpora[i], p);
        pairs[i].freeze();
    }
    return out;
}

BranchLosses pretrain_mlre(Mlre& mlre, const std::vector<Tensor>& images, const TrainPlan& plan) {
    if (images.empty()) throw IoError("MLRE pretraining found no images");
    BranchLosses out;
    for (std::size_t d = 0; d < 3; ++d) {
        std::vector<Tensor> signals(images.size());
        parallel_for(images.size(), [&](std::size_t i) { signals[i] = domain_signal(images[i], Domain(d)); });
        TrainPlan p = plan;
        p.seed = derive_seed(plan.seed, 0x3E00 + d);
        std::tie(out.initial[d], out.final[d]) = train_reconstruction(mlre.encoders[d], mlre.decoders[d], signals, p);
    }
    mlre.frozen = true;
    for (auto& dec : mlre.decoders) dec = Sequential<float>();
    return out;
}

LevelEnergies residual_energies(const std::vector<Tensor>& hx, const std::vector<Tensor>& hrec) {
    LevelEnergies r{};
    for (int j = 0; j < kNumLevels; ++j) {
        const Tensor& a = hx[std::size_t(j)];
        const Tensor& b = hrec[std::size_t(j)];
        a.require_same_shape(b);
        double num = 0;
        for (std::size_t i = 0; i < a.size(); ++i) num += std::abs(double(a[i]) - double(b[i]));
        r[std::size_t(j)] = a.empty() ? 0.0 : num / double(a.size());
    }
    return r;
}

LevelEnergies residual_energies(const Hge& hge, const AutoencoderPair& reference, const Tensor& x) {
    return residual_energies(hge.features(x), hge.features(autoencode(reference, x)));
}

GranularityCalibration fit_granularity_calibration(const std::vector<LevelEnergies>& energies) {
    GranularityCalibration c;
    for (int j = 0; j < kNumLevels; ++j) {
        std::vector<double> logs;
        for (const auto& r : energies)
            if (r[std::size_t(j)] > 0) logs.push_back(std::log(r[std::size_t(j)]));
        if (logs.size() < 2) continue;
        const double m = pairwise_sum(logs) / double(logs.size());
        std::vector<double> sq;
        for (double v : logs) sq.push_back((v - m) * (v - m));
        const double sd = std::sqrt(pairwise_sum(sq) / double(logs.size()));
        c.log_mean[std::size_t(j)] = m;
        c.log_std[std::size_t(j)] = sd > 1e-12 ? sd : 1.0;
    }
    return c;
}

int granularity_label(const LevelEnergies& energies, const GranularityCalibration& c) {
    int best = 1;
    double best_z = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < kNumLevels; ++j) {
        const double r = energies[std::size_t(j)];
        if (!(r > 0)) continue;
        const double z = (std::log(r) - c.log_mean[std::size_t(j)]) / c.log_std[std::size_t(j)];
        if (z > best_z) {
            best_z = z;
            best = j + 1;
        }
    }
    return best;
}

int assign_granularity_label(const Hge& hge, const AutoencoderPair& reference, const Tensor& x,
                             const GranularityCalibration& calibration) {
    return granularity_label(residual_energies(hge, reference, x), calibration);
}

namespace {

struct GaeBatch {
    Tensor s_img, s_txt, g_img, g_txt;  // [B,16] normalized rows
    std::vector<GaeOutput<float>> outs;
    std::vector<Sequential<float>::Trace> traces;
};

GaeBatch gae_batch_forward(const Gae& gae, const std::vector<Tensor>& images, const std::vector<int>& categories,
                           const std::vector<int>& labels, std::span<const std::size_t> idx, bool keep_traces) {
    const std::size_t B = idx.size(), D = kGaeDim;
    GaeBatch b;
    b.s_img = Tensor({B, D});
    b.s_txt = Tensor({B, D});
    b.g_img = Tensor({B, D});
    b.g_txt = Tensor({B, D});
    b.outs.resize(B);
    if (keep_traces) b.traces.resize(B);
    parallel_for(B, [&](std::size_t n) {
        const Tensor& x = images[idx[n]];
        b.outs[n] = gae_forward(gae, gae_input(x, gae.rgb_only), x, keep_traces ? &b.traces[n] : nullptr);
    });
    for (std::size_t n = 0; n < B; ++n) {
        const auto s = l2_normalized(std::span<const float>(b.outs[n].f_s));
        const auto cap = gae.caption_table.span().subspan(std::size_t(categories[idx[n]]) * D, D);
        const auto gran = gae.granularity_table.span().subspan(std::size_t(labels[idx[n]] - 1) * D, D);
        const auto ts = l2_normalized(cap);
        const auto tg = l2_normalized(gran);
        for (std::size_t k = 0; k < D; ++k) {
            b.s_img[n * D + k] = s[k];
            b.s_txt[n * D + k] = ts[k];
            b.g_img[n * D + k] = b.outs[n].f_g[k];
            b.g_txt[n * D + k] = tg[k];
        }
    }
    return b;
}

void check_gae_inputs(const std::vector<Tensor>& images, const std::vector<int>& categories,
                      const std::vector<int>& labels) {
    if (images.size() != categories.size() || images.size() != labels.size()) {
        throw DimensionError("GAE pretraining: images, categories and labels differ in length");
    }
    for (int c : categories) {
        if (c < 0 || c >= kNumCategories) throw DomainError("content category outside [0,7]");
    }
    for (int l : labels) {
        if (l < 1 || l > kNumGranularityLabels) throw DomainError("granularity label outside [1,6]");
    }
}

}  // namespace

std::pair<double, double> gae_losses(const Gae& gae, const std::vector<Tensor>& images,
                                     const std::vector<int>& categories, const std::vector<int>& labels,
                                     int batch_size, double tau) {
    check_gae_inputs(images, categories, labels);
    std::vector<std::size_t> idx(images.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    double cap = 0, gran = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += std::size_t(batch_size)) {
        const std::size_t end = std::min(idx.size(), start + std::size_t(batch_size));
        const auto b = gae_batch_forward(gae, images, categories, labels, std::span(idx).subspan(start, end - start), false);
        cap += contrastive_loss(b.s_img, b.s_txt, tau);
        gran += contrastive_loss(b.g_img, b.g_txt, tau);
        ++batches;
    }
    return {cap / double(batches), gran / double(batches)};
}

GaeLosses pretrain_gae(Gae& gae, const std::vector<Tensor>& images, const std::vector<int>& categories,
                       const std::vector<int>& labels, const TrainPlan& plan, double tau) {
    check_gae_inputs(images, categories, labels);
    std::vector<int> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) {
        throw ConfigError("GAE pretraining needs at least 2 distinct granularity labels, found " +
                          std::to_string(distinct.size()));
    }
    GaeLosses out;
    std::tie(out.caption_initial, out.granularity_initial) =
        gae_losses(gae, images, categories, labels, plan.batch_size, tau);

    const std::size_t D = kGaeDim;
    auto& net_params = gae.net.params();
    auto opt_net = make_optimizer(net_params, plan.lr, plan.momentum);
    std::vector<Tensor> tables = {gae.caption_table, gae.granularity_table};
    auto opt_tab = make_optimizer(tables, plan.lr, plan.momentum);
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto order = shuffled(images.size(), derive_seed(plan.seed, 0x6AE0 + std::uint64_t(epoch)));
        for (std::size_t start = 0; start < order.size(); start += std::size_t(plan.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(plan.batch_size));
            const auto idx = std::span(order).subspan(start, end - start);
            auto b = gae_batch_forward(gae, images, categories, labels, idx, true);
            Tensor g_s_img, g_s_txt, g_g_img, g_g_txt;
            contrastive_loss(b.s_img, b.s_txt, tau, &g_s_img, &g_s_txt);
            contrastive_loss(b.g_img, b.g_txt, tau, &g_g_img, &g_g_txt);

            std::vector<std::vector<Tensor>> per(idx.size());
            parallel_for(idx.size(), [&](std::size_t n) {
                const auto& o = b.outs[n];
                const auto gs = l2_normalize_backward(cs(o.f_s), cs(g_s_img.span().subspan(n * D, D)));
                const auto gg = l2_normalize_backward(cs(o.raw), cs(g_g_img.span().subspan(n * D, D)));
                Tensor g_raw({D});
                for (std::size_t k = 0; k < D; ++k) g_raw[k] = gs[k] + gg[k];
                const Tensor g_feat = global_avg_pool_backward(b.traces[n].output.shape(), g_raw);
                gae.net.backward(b.traces[n], g_feat, per[n], false);
            });
            std::vector<Tensor> g_net = std::move(per[0]);
            for (std::size_t n = 1; n < per.size(); ++n)
                for (std::size_t p = 0; p < g_net.size(); ++p) g_net[p] += per[n][p];

            std::vector<Tensor> g_tab = {Tensor(tables[0].shape()), Tensor(tables[1].shape())};
            for (std::size_t n = 0; n < idx.size(); ++n) {
                const std::size_t c = std::size_t(categories[idx[n]]), l = std::size_t(labels[idx[n]] - 1);
                const auto gc = l2_normalize_backward(cs(tables[0].span().subspan(c * D, D)), cs(g_s_txt.span().subspan(n * D, D)));
                const auto gl = l2_normalize_backward(cs(tables[1].span().subspan(l * D, D)), cs(g_g_txt.span().subspan(n * D, D)));
                for (std::size_t k = 0; k < D; ++k) {
                    g_tab[0][c * D + k] += gc[k];
                    g_tab[1][l * D + k] += gl[k];
                }
            }
            sgd_step(net_params, g_net, opt_net);
            sgd_step(tables, g_tab, opt_tab);
            gae.caption_table = tables[0];
            gae.granularity_table = tables[1];
        }
    }
    for (const auto& p : net_params) {
        if (!p.all_finite()) throw NumericError("GAE pretraining diverged");
    }
    std::tie(out.caption_final, out.granularity_final) = gae_losses(gae, images, categories, labels, plan.batch_size, tau);
    gae.frozen = true;
    return out;
}

double gae_label_accuracy(const Gae& gae, const std::vector<Tensor>& images, const std::vector<int>& labels) {
    if (images.empty() || images.size() != labels.size()) throw DimensionError("label accuracy: bad inputs");
    std::vector<int> hit(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        hit[i] = gae_predict_label(gae, gae_embed(gae, images[i]).f_g) == labels[i];
    });
    return double(std::accumulate(hit.begin(), hit.end(), 0)) / double(images.size());
}

GranularityClusters cluster_granularity(const Gae& gae, const std::vector<std::vector<float>>& embeddings,
                                        std::uint64_t seed) {
    auto km = kmeans_cluster(embeddings, kNumLevels, seed);
    const std::size_t K = kNumLevels, D = kGaeDim;
    double sim[kNumLevels][kNumLevels];
    for (std::size_t c = 0; c < K; ++c) {
        const auto cn = l2_normalized(cs(km.clusters.centers.span().subspan(c * D, D)));
        for (std::size_t l = 0; l < K; ++l) {
            const auto ln = l2_normalized(cs(gae.granularity_table.span().subspan(l * D, D)));
            double s = 0;
            for (std::size_t k = 0; k < D; ++k) s += double(cn[k]) * ln[k];
            sim[c][l] = s;
        }
    }
    // perm[l] = cluster that becomes level l+1
    std::array<std::size_t, kNumLevels> perm, best;
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    best = perm;
    double best_score = -1e300;
    do {
        double s = 0;
        for (std::size_t l = 0; l < K; ++l) s += sim[perm[l]][l];
        if (s > best_score + 1e-12) {
            best_score = s;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    GranularityClusters out;
    out.centers = Tensor({K, D});
    std::array<int, kNumLevels> new_index{};
    for (std::size_t l = 0; l < K; ++l) {
        new_index[best[l]] = int(l);
        std::copy_n(km.clusters.centers.data() + best[l] * D, D, out.centers.data() + l * D);
    }
    out.assignment.reserve(km.clusters.assignment.size());
    for (int a : km.clusters.assignment) out.assignment.push_back(new_index[std::size_t(a)]);
    return out;
}

void fit_standardizer(ExpertHead& head, const std::vector<std::span<const float>>& features) {
    if (features.empty()) throw DomainError("standardizer needs at least one feature vector");
    const std::size_t C = features[0].size();
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (const auto& f : features)
        for (std::size_t c = 0; c < C; ++c) mean[c] += f[c];
    for (auto& m : mean) m /= double(features.size());
    for (const auto& f : features)
        for (std::size_t c = 0; c < C; ++c) var[c] += (f[c] - mean[c]) * (f[c] - mean[c]);
    head.mean.resize(C);
    head.scale.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        head.mean[c] = static_cast<float>(mean[c]);
        const double sd = std::sqrt(var[c] / double(features.size()));
        head.scale[c] = static_cast<float>(sd > 1e-8 ? 1.0 / sd : 0.0);
    }
}

double head_bce(const ExpertHead& head, const std::vector<std::span<const float>>& features,
                const std::vector<int>& labels) {
    std::vector<double> l(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) l[i] = bce_loss(double(head.predict(features[i])), labels[i]);
    return pairwise_sum(l) / double(features.size());
}

double train_head(ExpertHead& head, const std::vector<std::span<const float>>& features, const std::vector<int>& labels,
                  const TrainPlan& plan) {
    if (features.size() != labels.size()) throw DimensionError("train_head: features and labels differ in length");
    if (features.empty()) return 0.0;
    auto opt = make_optimizer(head.params, plan.lr, plan.momentum);
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto order = shuffled(features.size(), derive_seed(plan.seed, std::uint64_t(epoch)));
        for (std::size_t start = 0; start < order.size(); start += std::size_t(plan.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(plan.batch_size));
            std::vector<Tensor> grads;
            for (std::size_t k = start; k < end; ++k) {
                HeadTrace<float> tr;
                head_forward<float>(head.params, head.mean, head.scale, features[order[k]], &tr);
                // d BCE / d logit = p - y
                head_backward<float>(head.params, tr, tr.prob - float(labels[order[k]]), grads);
            }
            scale_all(grads, 1.0f / float(end - start));
            sgd_step(head.params, grads, opt);
        }
    }
    return head_bce(head, features, labels);
}

RouterLosses router_batch_loss(const MappingNets& nets, const Tensor& centers, std::span<const RouterSample> batch,
                               const LossWeights& weights, std::vector<Tensor>* grads) {
    const std::size_t B = batch.size(), D = centers.dim(1);
    if (B == 0) throw DomainError("router batch is empty");
    std::vector<RouterForward<float>> fw(B);
    std::vector<int> level(B);
    std::vector<double> ld(B), lr(B), gp(B);
    std::vector<std::vector<float>> g_fg(B, std::vector<float>(D));
    std::vector<float> g_fm(B);
    std::array<double, kNumManifolds> usage{}, mean_w{};
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = batch[b];
        fw[b] = router_forward(nets, s.gae, s.mlre);
        level[b] = nearest_center(centers, fw[b].f_g);
        double fused = 0;
        for (int i = 0; i < kNumManifolds; ++i) {
            fused += double(fw[b].weights[std::size_t(i)]) * s.expert_probs[std::size_t(i * kNumLevels + level[b])];
        }
        ld[b] = bce_loss(fused, s.label, &gp[b]);
        const auto u = centers.span().subspan(std::size_t(s.cluster) * D, D);
        lr[b] = routing_loss<float>(u, fw[b].f_g, fw[b].f_m, g_fg[b], &g_fm[b]);
        const auto& w = fw[b].weights;
        const std::size_t top = std::size_t(std::max_element(w.begin(), w.end()) - w.begin());
        usage[top] += 1.0 / double(B);
        for (int i = 0; i < kNumManifolds; ++i) mean_w[std::size_t(i)] += double(w[std::size_t(i)]) / double(B);
    }
    double msum = 0;
    for (double v : mean_w) msum += v;
    for (auto& v : mean_w) v /= msum;
    std::array<double, kNumManifolds> g_mean{};
    RouterLosses out;
    out.detection = pairwise_sum(ld) / double(B);
    out.routing = pairwise_sum(lr) / double(B);
    out.balance = balance_loss<double>(usage, mean_w, g_mean);
    out.total = total_loss(out.detection, out.routing, out.balance, weights);
    if (!grads) return out;
    const float inv = 1.0f / float(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = batch[b];
        std::array<float, kNumManifolds> gw{};
        for (int i = 0; i < kNumManifolds; ++i) {
            gw[std::size_t(i)] = static_cast<float>(
                (gp[b] * s.expert_probs[std::size_t(i * kNumLevels + level[b])] + weights.beta * g_mean[std::size_t(i)]) /
                double(B));
        }
        std::vector<float> gfg(D);
        for (std::size_t k = 0; k < D; ++k) gfg[k] = static_cast<float>(weights.alpha) * g_fg[b][k] * inv;
        const float gfm = static_cast<float>(weights.alpha) * g_fm[b] * inv;
        router_backward<float>(nets, fw[b], s.gae, s.mlre, gfg, gfm, gw, *grads);
    }
    return out;
}

RouterReport train_routers(MappingNets& nets, const Tensor& centers, const std::vector<RouterSample>& samples,
                           const LossWeights& weights, const TrainPlan& plan) {
    if (samples.empty()) throw DomainError("router training needs samples");
    RouterReport rep;
    rep.initial = router_batch_loss(nets, centers, samples, weights, nullptr);
    auto params = nets.params();
    auto opt = make_optimizer(params, plan.lr, plan.momentum);
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto order = shuffled(samples.size(), derive_seed(plan.seed, 0x4070 + std::uint64_t(epoch)));
        for (std::size_t start = 0; start < order.size(); start += std::size_t(plan.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(plan.batch_size));
            std::vector<RouterSample> batch;
            for (std::size_t k = start; k < end; ++k) batch.push_back(samples[order[k]]);
            std::vector<Tensor> grads;
            router_batch_loss(nets, centers, batch, weights, &grads);
            clip_grad_norm(grads, kRouterClipNorm);
            sgd_step(params, grads, opt);
            nets.set_params(params);
        }
    }
    for (const auto& p : params) {
        if (!p.all_finite()) throw NumericError("router training diverged");
    }
    rep.final = router_batch_loss(nets, centers, samples, weights, nullptr);
    return rep;
}

double usage_entropy(const std::vector<std::array<float, kNumManifolds>>& weights) {
    if (weights.empty()) return 0.0;
    std::array<double, kNumManifolds> mean{};
    for (const auto& w : weights)
        for (int i = 0; i < kNumManifolds; ++i) mean[std::size_t(i)] += w[std::size_t(i)];
    double s = 0;
    for (double m : mean) s += m;
    double h = 0;
    for (double m : mean) {
        const double p = m / s;
        if (p > 0) h -= p * std::log(p);
    }
    return h;
}

}  // namespace truemoe
