#include "truemoe/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "truemoe/digest.hpp"
#include "truemoe/errors.hpp"
#include "truemoe/parallel.hpp"
#include "truemoe/rng.hpp"

namespace truemoe {
namespace {

constexpr Phase kLastPhase = kPhaseOrder.back();

// Seed tags for the independent streams of a run.
enum SeedTag : std::uint64_t {
    kAeCorpus = 0xAE0C0,
    kAeTrain = 0xAE7A,
    kMlreInit = 0x3E1,
    kMlreTrain = 0x3E7A,
    kGaeInit = 0x6AE1,
    kGaeTrain = 0x6AE7A,
    kCluster = 0xC1,
    kHeadInit = 0xE0000,
    kHeadTrain = 0xE1000,
    kFinetune = 0xF1000,
    kBaseline = 0xBA5E1,
    kRouterInit = 0x4047,
    kRouterTrain = 0x4047A,
    kPerturb = 0xE7A1,
};

void assign(Tensor& dst, const Checkpoint& c, const std::string& name) {
    const Tensor& src = c.get(name);
    if (!dst.empty() && dst.shape() != src.shape()) {
        throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                      shape_str(dst.shape()));
    }
    dst = src;
}

void put_seq(Checkpoint& c, const std::string& prefix, const Sequential<float>& s) {
    const auto names = s.param_names(prefix);
    for (std::size_t i = 0; i < names.size(); ++i) c.put(names[i], s.params()[i]);
}

void get_seq(const Checkpoint& c, const std::string& prefix, Sequential<float>& s) {
    const auto names = s.param_names(prefix);
    for (std::size_t i = 0; i < names.size(); ++i) assign(s.params()[i], c, names[i]);
}

Tensor vec_tensor(const std::vector<float>& v) { return Tensor({v.size()}, v); }

void put_head(Checkpoint& c, const std::string& prefix, const ExpertHead& h) {
    static const char* names[] = {"w1", "b1", "w2", "b2"};
    for (std::size_t i = 0; i < 4; ++i) c.put(prefix + "." + names[i], h.params[i]);
    c.put(prefix + ".mean", vec_tensor(h.mean));
    c.put(prefix + ".scale", vec_tensor(h.scale));
}

void get_head(const Checkpoint& c, const std::string& prefix, ExpertHead& h) {
    static const char* names[] = {"w1", "b1", "w2", "b2"};
    for (std::size_t i = 0; i < 4; ++i) assign(h.params[i], c, prefix + "." + names[i]);
    h.mean = c.get(prefix + ".mean").values();
    h.scale = c.get(prefix + ".scale").values();
    if (h.mean.size() != h.params[0].dim(1) || h.scale.size() != h.mean.size()) {
        throw IoError("checkpoint head '" + prefix + "' has a standardizer of the wrong width");
    }
}

const char* kDomainNames[] = {"rgb", "srm", "dft"};

std::string expert_prefix(int i, int j) { return "experts." + std::to_string(i) + "." + std::to_string(j); }

TrainPlan plan(int epochs, int batch, double lr, double momentum, std::uint64_t seed) {
    return TrainPlan{epochs, batch, float(lr), float(momentum), seed};
}

std::vector<std::span<const float>> expert_column(const std::vector<ExpertFeatures>& feats, std::size_t index,
                                                  const std::vector<std::size_t>* subset = nullptr) {
    std::vector<std::span<const float>> out;
    if (subset) {
        for (std::size_t i : *subset) out.emplace_back(feats[i][index]);
    } else {
        for (const auto& f : feats) out.emplace_back(f[index]);
    }
    return out;
}

std::vector<int> labels_of(const std::vector<Image>& images) {
    std::vector<int> y;
    y.reserve(images.size());
    for (const auto& im : images) y.push_back(im.meta.label == Label::fake ? 1 : 0);
    return y;
}

ImageScore score_from(const Model& m, const ExpertFeatures& feats, std::span<const float> g,
                      std::span<const float> r) {
    ImageScore s;
    s.decision = route_from_embeddings(g, r, m.clusters, m.nets);
    std::array<float, kNumManifolds> p{};
    for (int i = 0; i < kNumManifolds; ++i) p[std::size_t(i)] = expert_predict(m.experts, {i, s.decision.level}, feats);
    s.fused = fuse_prediction(s.decision, p);
    s.baseline = m.baseline.predict(feats[ExpertArray::index(m.baseline_id)]);
    return s;
}

void check_modes(const Config& ckpt, const Config& run) {
    if (ckpt.gdf_mode != run.gdf_mode || ckpt.mlre_domains != run.mlre_domains ||
        ckpt.gae_rgb_only != run.gae_rgb_only) {
        throw ConfigError("checkpoint was trained with gdf_mode=" + to_string(ckpt.gdf_mode) +
                          " mlre_domains=" + to_string(ckpt.mlre_domains) +
                          " gae_rgb_only=" + (ckpt.gae_rgb_only ? "true" : "false") +
                          ", which differs from the current config");
    }
}

std::string perturbation_tag(const std::optional<PerturbationSpec>& p) {
    if (!p) return "none";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s@%g", to_string(p->kind).c_str(), p->apply_probability);
    return buf;
}

}  // namespace

// ---- model -----------------------------------------------------------------

int phase_index(Phase p) {
    for (std::size_t i = 0; i < kPhaseOrder.size(); ++i)
        if (kPhaseOrder[i] == p) return int(i);
    throw DomainError("unknown phase");
}

bool Model::has(Phase p) const { return completed >= phase_index(p); }

Model make_model(const Config& config) {
    Model m;
    m.config = config;
    m.experts = ExpertArray(config.gdf_mode);
    m.mlre = make_mlre(derive_seed(config.seed, kMlreInit), config.mlre_domains);
    m.gae = make_gae(derive_seed(config.seed, kGaeInit), config.gae_rgb_only);
    Rng rng(derive_seed(config.seed, kRouterInit));
    m.nets = make_mapping_nets(rng);
    return m;
}

Checkpoint to_checkpoint(const Model& m) {
    if (m.completed < 0) throw StateError("no phase has completed; nothing to checkpoint");
    Checkpoint c;
    c.set_text("meta/phase", to_string(kPhaseOrder[std::size_t(m.completed)]));
    c.set_text("meta/config", format_config(m.config));
    if (m.has(Phase::pretrain_autoencoders)) {
        for (int i = 0; i < kNumManifolds; ++i) {
            const auto& ae = m.experts.autoencoders[std::size_t(i)];
            put_seq(c, "ae." + std::to_string(i) + ".encoder", ae.encoder());
            put_seq(c, "ae." + std::to_string(i) + ".decoder", ae.decoder());
        }
    }
    if (m.has(Phase::pretrain_mlre)) {
        for (std::size_t d = 0; d < 3; ++d) put_seq(c, std::string("mlre.") + kDomainNames[d] + ".encoder", m.mlre.encoders[d]);
    }
    if (m.has(Phase::pretrain_gae)) {
        put_seq(c, "gae.net", m.gae.net);
        c.put("gae.ev", m.gae.ev);
        c.put("gae.caption_table", m.gae.caption_table);
        c.put("gae.granularity_table", m.gae.granularity_table);
        Tensor cal({2, std::size_t(kNumLevels)});
        for (int j = 0; j < kNumLevels; ++j) {
            cal[std::size_t(j)] = static_cast<float>(m.calibration.log_mean[std::size_t(j)]);
            cal[std::size_t(kNumLevels + j)] = static_cast<float>(m.calibration.log_std[std::size_t(j)]);
        }
        c.put("gae.label_calibration", cal);
    }
    if (m.has(Phase::cluster)) {
        c.put("clusters/centers", m.clusters.centers);
        std::vector<float> a(m.clusters.assignment.begin(), m.clusters.assignment.end());
        c.put("clusters/assignment", vec_tensor(a));
    }
    if (m.has(Phase::experts_joint)) {
        for (int i = 0; i < kNumManifolds; ++i)
            for (int j = 1; j <= kNumLevels; ++j) put_head(c, expert_prefix(i, j), m.experts.head({i, j}));
        put_head(c, "baseline", m.baseline);
        c.put("baseline.id", Tensor({2}, {float(m.baseline_id.manifold), float(m.baseline_id.level)}));
    }
    if (m.has(Phase::routers)) {
        const auto ps = m.nets.params();
        for (std::size_t i = 0; i < ps.size(); ++i) c.put(mapping_param_names()[i], ps[i]);
    }
    return c;
}

Model from_checkpoint(const Checkpoint& c) {
    const Config config = parse_config(c.text("meta/config"));
    Model m = make_model(config);
    m.completed = phase_index(parse_phase(c.text("meta/phase")));
    if (m.has(Phase::pretrain_autoencoders)) {
        for (int i = 0; i < kNumManifolds; ++i) {
            auto& ae = m.experts.autoencoders[std::size_t(i)];
            get_seq(c, "ae." + std::to_string(i) + ".encoder", ae.encoder());
            get_seq(c, "ae." + std::to_string(i) + ".decoder", ae.decoder());
            ae.freeze();
        }
    }
    if (m.has(Phase::pretrain_mlre)) {
        for (std::size_t d = 0; d < 3; ++d) {
            get_seq(c, std::string("mlre.") + kDomainNames[d] + ".encoder", m.mlre.encoders[d]);
            m.mlre.decoders[d] = Sequential<float>();
        }
        m.mlre.frozen = true;
    }
    if (m.has(Phase::pretrain_gae)) {
        get_seq(c, "gae.net", m.gae.net);
        assign(m.gae.ev, c, "gae.ev");
        assign(m.gae.caption_table, c, "gae.caption_table");
        assign(m.gae.granularity_table, c, "gae.granularity_table");
        Tensor cal({2, std::size_t(kNumLevels)});
        assign(cal, c, "gae.label_calibration");
        for (int j = 0; j < kNumLevels; ++j) {
            m.calibration.log_mean[std::size_t(j)] = cal[std::size_t(j)];
            m.calibration.log_std[std::size_t(j)] = cal[std::size_t(kNumLevels + j)];
        }
        m.gae.frozen = true;
    }
    if (m.has(Phase::cluster)) {
        m.clusters.centers = c.get("clusters/centers");
        if (m.clusters.centers.shape() != Shape{std::size_t(kNumLevels), kGaeDim}) {
            throw IoError("checkpoint cluster centers have shape " + shape_str(m.clusters.centers.shape()));
        }
        for (float v : c.get("clusters/assignment").values()) m.clusters.assignment.push_back(int(v));
    }
    if (m.has(Phase::experts_joint)) {
        for (int i = 0; i < kNumManifolds; ++i)
            for (int j = 1; j <= kNumLevels; ++j) get_head(c, expert_prefix(i, j), m.experts.head({i, j}));
        const Tensor& id = c.get("baseline.id");
        if (id.size() != 2) throw IoError("checkpoint baseline.id must hold 2 values");
        m.baseline_id = {int(id[0]), int(id[1])};
        ExpertArray::index(m.baseline_id);
        m.baseline = ExpertHead(head_input_width(m.baseline_id.level, config.gdf_mode));
        get_head(c, "baseline", m.baseline);
    }
    if (m.has(Phase::routers)) {
        auto ps = m.nets.params();
        for (std::size_t i = 0; i < ps.size(); ++i) assign(ps[i], c, mapping_param_names()[i]);
        m.nets.set_params(ps);
    }
    return m;
}

std::filesystem::path checkpoint_path(const Config& config, Phase p) {
    return config.work_dir / (to_string(p) + ".tmoe");
}

// ---- scoring ---------------------------------------------------------------

ImageScore score_image(const Model& m, const Tensor& pixels) {
    const auto feats = expert_features(m.experts, pixels);
    const auto g = gae_embed(m.gae, pixels).f_g;
    const auto r = mlre_embed(m.mlre, pixels);
    return score_from(m, feats, g, r);
}

std::uint64_t perturbation_seed(std::uint64_t base, std::size_t index) { return derive_seed(base, index); }

std::optional<PerturbationSpec> perturbation_from_config(const Config& c) {
    if (c.perturbation == "none") return std::nullopt;
    PerturbationSpec s;
    s.kind = parse_perturbation(c.perturbation);
    s.apply_probability = c.perturb_probability;
    s.crop_max_fraction = c.crop_max_fraction;
    s.rng_seed = derive_seed(c.seed, kPerturb + std::uint64_t(s.kind));
    validate(s);
    return s;
}

namespace {

Evaluation finish_evaluation(const Model& m, const std::vector<Image>& images, std::vector<ImageScore> scores,
                             const std::optional<PerturbationSpec>& perturbation) {
    Evaluation ev;
    std::vector<float> fused, base;
    std::vector<Provenance> meta;
    std::vector<std::array<float, kNumManifolds>> weights;
    for (std::size_t i = 0; i < images.size(); ++i) {
        fused.push_back(scores[i].fused);
        base.push_back(scores[i].baseline);
        meta.push_back(images[i].meta);
        weights.push_back(scores[i].decision.manifold_weights);
    }
    const std::uint64_t digest = fnv1a(format_config(m.config));
    ev.truemoe = compute_report(fused, meta);
    ev.baseline = compute_report(base, meta);
    for (auto* r : {&ev.truemoe, &ev.baseline}) {
        r->perturbation = perturbation_tag(perturbation);
        r->seed = m.config.seed;
        r->config_digest = digest;
    }
    ev.baseline.model = "baseline";
    ev.usage_entropy = usage_entropy(weights);
    ev.scores = std::move(scores);
    return ev;
}

void require_complete(const Model& m) {
    if (!m.has(kLastPhase)) {
        const std::string last = m.completed < 0 ? "none" : to_string(kPhaseOrder[std::size_t(m.completed)]);
        throw StateError("evaluation needs a complete model; last completed phase: " + last);
    }
}

}  // namespace

Evaluation evaluate(const Model& m, const std::vector<Image>& images,
                    const std::optional<PerturbationSpec>& perturbation) {
    require_complete(m);
    if (perturbation) validate(*perturbation);
    std::vector<ImageScore> scores(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        if (perturbation) {
            PerturbationSpec s = *perturbation;
            s.rng_seed = perturbation_seed(perturbation->rng_seed, i);
            scores[i] = score_image(m, perturb(images[i].pixels, s));
        } else {
            scores[i] = score_image(m, images[i].pixels);
        }
    });
    return finish_evaluation(m, images, std::move(scores), perturbation);
}

std::string format_route_record(const std::string& path, const ImageScore& s) {
    std::ostringstream os;
    os.precision(9);
    os << path << '\t' << s.decision.level;
    for (float d : s.decision.gae_distances) os << '\t' << d;
    for (float w : s.decision.manifold_weights) os << '\t' << w;
    os << '\t' << s.fused;
    return os.str();
}

void write_routes(const std::vector<std::string>& paths, const std::vector<ImageScore>& scores,
                  const std::filesystem::path& file) {
    if (paths.size() != scores.size()) throw DimensionError("route records and paths differ in length");
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write routes " + file.string());
    out << "#path\tt\td1\td2\td3\td4\td5\td6\tw1\tw2\tw3\tfused\n";
    for (std::size_t i = 0; i < paths.size(); ++i) out << format_route_record(paths[i], scores[i]) << '\n';
    if (!out) throw IoError("failed writing routes " + file.string());
}

// ---- session ---------------------------------------------------------------

Session::Session(Config config) : config_(std::move(config)), model_(make_model(config_)) { validate(config_); }

void Session::set_config(Config config) {
    validate(config);
    check_modes(model_.config, config);
    config_ = std::move(config);
}

void Session::set_images(Split split, std::vector<Image> images, std::vector<std::string> paths) {
    if (paths.empty()) {
        for (std::size_t i = 0; i < images.size(); ++i) paths.push_back(to_string(split) + "/" + std::to_string(i));
    }
    if (paths.size() != images.size()) throw DimensionError("image and path lists differ in length");
    SplitData d;
    d.loaded = true;
    d.images = std::move(images);
    d.paths = std::move(paths);
    splits_[std::size_t(split)] = std::move(d);
}

Session::SplitData& Session::data(Split split) {
    auto& d = splits_[std::size_t(split)];
    if (d.loaded) return d;
    const auto file = config_.data_root / to_string(split) / "manifest.tsv";
    if (!std::filesystem::exists(file)) {
        throw IoError("missing manifest " + file.string() + " (run gen-data first)");
    }
    const auto manifest = load_manifest(file);
    d.images = load_images(manifest);
    for (const auto& e : manifest.entries) d.paths.push_back(e.path);
    d.loaded = true;
    return d;
}

bool Session::have_split(Split split) const {
    return splits_[std::size_t(split)].loaded ||
           std::filesystem::exists(config_.data_root / to_string(split) / "manifest.tsv");
}

const std::vector<Image>& Session::images(Split split) { return data(split).images; }
const std::vector<std::string>& Session::paths(Split split) { return data(split).paths; }

const std::vector<ExpertFeatures>& Session::features(Split split) {
    auto& d = data(split);
    if (d.features.size() != d.images.size()) {
        d.features.assign(d.images.size(), {});
        parallel_for(d.images.size(), [&](std::size_t i) { d.features[i] = expert_features(model_.experts, d.images[i].pixels); });
    }
    return d.features;
}

const std::vector<std::vector<float>>& Session::gae_embeddings(Split split) {
    auto& d = data(split);
    if (d.gae.size() != d.images.size()) {
        d.gae.assign(d.images.size(), {});
        parallel_for(d.images.size(), [&](std::size_t i) { d.gae[i] = gae_embed(model_.gae, d.images[i].pixels).f_g; });
    }
    return d.gae;
}

const std::vector<std::vector<float>>& Session::mlre_latents(Split split) {
    auto& d = data(split);
    if (d.mlre.size() != d.images.size()) {
        d.mlre.assign(d.images.size(), {});
        parallel_for(d.images.size(), [&](std::size_t i) { d.mlre[i] = mlre_embed(model_.mlre, d.images[i].pixels); });
    }
    return d.mlre;
}

const std::vector<LevelEnergies>& Session::level_energies(Split split) {
    auto& d = data(split);
    if (d.energies.size() != d.images.size()) {
        d.energies.assign(d.images.size(), {});
        const auto& ref = model_.experts.autoencoders[std::size_t(config_.granularity_reference)];
        parallel_for(d.images.size(), [&](std::size_t i) {
            d.energies[i] = residual_energies(model_.experts.hge, ref, d.images[i].pixels);
        });
    }
    return d.energies;
}

const std::vector<int>& Session::granularity_labels(Split split) {
    auto& d = data(split);
    if (d.granularity_labels.size() != d.images.size()) {
        const auto& r = level_energies(split);
        d.granularity_labels.resize(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) d.granularity_labels[i] = granularity_label(r[i], model_.calibration);
    }
    return d.granularity_labels;
}

void Session::invalidate_after(Phase p) {
    for (auto& d : splits_) {
        switch (p) {
            case Phase::pretrain_autoencoders:
                d.features.clear();
                d.energies.clear();
                d.granularity_labels.clear();
                break;
            case Phase::pretrain_mlre: d.mlre.clear(); break;
            case Phase::pretrain_gae:
                d.gae.clear();
                d.granularity_labels.clear();
                break;
            default: break;
        }
    }
}

void Session::load(Phase p) {
    const auto file = checkpoint_path(config_, p);
    if (!std::filesystem::exists(file)) {
        throw StateError("phase '" + to_string(p) + "' has not been run: missing checkpoint " + file.string());
    }
    Model m = from_checkpoint(load_checkpoint(file));
    check_modes(m.config, config_);
    if (m.completed != phase_index(p)) {
        throw StateError("checkpoint " + file.string() + " records phase '" +
                         to_string(kPhaseOrder[std::size_t(m.completed)]) + "'");
    }
    model_ = std::move(m);
    for (auto& d : splits_) {
        d.features.clear();
        d.gae.clear();
        d.mlre.clear();
        d.energies.clear();
        d.granularity_labels.clear();
    }
}

void Session::require(Phase p) {
    if (model_.has(p)) return;
    load(p);
}

PhaseStats Session::run_phase(Phase p) {
    const int idx = phase_index(p);
    if (idx > 0) require(kPhaseOrder[std::size_t(idx - 1)]);
    PhaseStats stats;
    switch (p) {
        case Phase::pretrain_autoencoders: stats = pretrain_autoencoders_phase(); break;
        case Phase::pretrain_mlre: stats = pretrain_mlre_phase(); break;
        case Phase::pretrain_gae: stats = pretrain_gae_phase(); break;
        case Phase::cluster: stats = cluster_phase(); break;
        case Phase::experts_joint: stats = experts_joint_phase(); break;
        case Phase::experts_finetune: stats = experts_finetune_phase(); break;
        case Phase::routers: stats = routers_phase(); break;
    }
    model_.completed = idx;
    model_.config = config_;
    invalidate_after(p);
    if (write_checkpoints) {
        std::error_code ec;
        std::filesystem::create_directories(config_.work_dir, ec);
        save_checkpoint(to_checkpoint(model_), checkpoint_path(config_, p));
    }
    return stats;
}

PhaseStats Session::run_all() {
    PhaseStats all;
    for (Phase p : kPhaseOrder) {
        auto s = run_phase(p);
        all.insert(all.end(), s.begin(), s.end());
    }
    return all;
}

Evaluation Session::evaluate(Split split, const std::optional<PerturbationSpec>& perturbation) {
    require_complete(model_);
    if (perturbation) return truemoe::evaluate(model_, images(split), perturbation);
    const auto& feats = features(split);
    const auto& g = gae_embeddings(split);
    const auto& r = mlre_latents(split);
    std::vector<ImageScore> scores(feats.size());
    parallel_for(feats.size(), [&](std::size_t i) { scores[i] = score_from(model_, feats[i], g[i], r[i]); });
    return finish_evaluation(model_, images(split), std::move(scores), std::nullopt);
}

// ---- phases ----------------------------------------------------------------

PhaseStats Session::pretrain_autoencoders_phase() {
    std::array<std::vector<Tensor>, kNumManifolds> corpora;
    const std::optional<int> pinned = config_.pinned_scale ? std::optional<int>(config_.pinned_scale) : std::nullopt;
    for (int f = 0; f < kNumManifolds; ++f) {
        SplitCounts counts;
        counts.fake[std::size_t(f)] = config_.ae_images_per_family;
        for (auto& im : generate_split(counts, Split::train, derive_seed(config_.seed, kAeCorpus + std::uint64_t(f)), pinned)) {
            corpora[std::size_t(f)].push_back(std::move(im.pixels));
        }
    }
    const auto losses = pretrain_autoencoders(
        model_.experts.autoencoders, corpora,
        plan(config_.ae_epochs, config_.pretrain_batch_size, config_.ae_lr, config_.momentum,
             derive_seed(config_.seed, kAeTrain)));
    PhaseStats s;
    for (int f = 0; f < kNumManifolds; ++f) {
        const std::string n = "ae." + to_string(Family(f));
        s.emplace_back(n + ".initial", losses.initial[std::size_t(f)]);
        s.emplace_back(n + ".final", losses.final[std::size_t(f)]);
    }
    return s;
}

PhaseStats Session::pretrain_mlre_phase() {
    const auto& all = images(Split::train);
    std::size_t n = all.size();
    if (config_.mlre_images > 0) n = std::min(n, std::size_t(config_.mlre_images));
    std::vector<Tensor> px;
    for (std::size_t i = 0; i < n; ++i) px.push_back(all[i].pixels);
    model_.mlre = make_mlre(derive_seed(config_.seed, kMlreInit), config_.mlre_domains);
    const auto losses = pretrain_mlre(model_.mlre, px,
                                      plan(config_.mlre_epochs, config_.pretrain_batch_size, config_.mlre_lr,
                                           config_.momentum, derive_seed(config_.seed, kMlreTrain)));
    PhaseStats s;
    s.emplace_back("mlre.images", double(n));
    for (std::size_t d = 0; d < 3; ++d) {
        s.emplace_back(std::string("mlre.") + kDomainNames[d] + ".initial", losses.initial[d]);
        s.emplace_back(std::string("mlre.") + kDomainNames[d] + ".final", losses.final[d]);
    }
    return s;
}

PhaseStats Session::pretrain_gae_phase() {
    const auto& all = images(Split::train);
    {
        // Calibrate on the training reals (every image when there are none).
        const auto& r = level_energies(Split::train);
        std::vector<LevelEnergies> ref;
        for (std::size_t i = 0; i < r.size(); ++i)
            if (all[i].meta.label == Label::real) ref.push_back(r[i]);
        model_.calibration = fit_granularity_calibration(ref.empty() ? r : ref);
        // Stored as f32; round now so a reloaded model labels identically.
        for (int j = 0; j < kNumLevels; ++j) {
            model_.calibration.log_mean[std::size_t(j)] = float(model_.calibration.log_mean[std::size_t(j)]);
            model_.calibration.log_std[std::size_t(j)] = float(model_.calibration.log_std[std::size_t(j)]);
        }
        for (auto& d : splits_) d.granularity_labels.clear();
    }
    const auto& labels_all = granularity_labels(Split::train);
    std::size_t n = all.size();
    if (config_.gae_images > 0) n = std::min(n, std::size_t(config_.gae_images));
    std::vector<Tensor> px;
    std::vector<int> cats, labels;
    for (std::size_t i = 0; i < n; ++i) {
        px.push_back(all[i].pixels);
        cats.push_back(all[i].meta.content_category);
        labels.push_back(labels_all[i]);
    }
    model_.gae = make_gae(derive_seed(config_.seed, kGaeInit), config_.gae_rgb_only);
    const auto l = pretrain_gae(model_.gae, px, cats, labels,
                                plan(config_.gae_epochs, config_.batch_size, config_.gae_lr, config_.momentum,
                                     derive_seed(config_.seed, kGaeTrain)),
                                config_.gae_tau);
    PhaseStats s;
    s.emplace_back("gae.caption.initial", l.caption_initial);
    s.emplace_back("gae.caption.final", l.caption_final);
    s.emplace_back("gae.granularity.initial", l.granularity_initial);
    s.emplace_back("gae.granularity.final", l.granularity_final);
    std::array<int, kNumLevels> hist{};
    for (int v : labels) ++hist[std::size_t(v - 1)];
    for (int j = 0; j < kNumLevels; ++j) s.emplace_back("gae.labels.level" + std::to_string(j + 1), hist[std::size_t(j)]);
    s.emplace_back("gae.label_accuracy.train", gae_label_accuracy(model_.gae, px, labels));
    // Held-out accuracy on the validation split when one exists.
    if (have_split(Split::val)) {
        const auto& val = images(Split::val);
        if (!val.empty()) {
            std::vector<Tensor> vpx;
            for (const auto& im : val) vpx.push_back(im.pixels);
            s.emplace_back("gae.label_accuracy.val", gae_label_accuracy(model_.gae, vpx, granularity_labels(Split::val)));
        }
    }
    return s;
}

PhaseStats Session::cluster_phase() {
    const auto& emb = gae_embeddings(Split::train);
    model_.clusters = cluster_granularity(model_.gae, emb, derive_seed(config_.seed, kCluster));
    PhaseStats s;
    std::array<int, kNumLevels> sizes{};
    for (int a : model_.clusters.assignment) ++sizes[std::size_t(a)];
    for (int t = 0; t < kNumLevels; ++t) s.emplace_back("cluster.size" + std::to_string(t + 1), sizes[std::size_t(t)]);
    return s;
}

PhaseStats Session::experts_joint_phase() {
    const auto& feats = features(Split::train);
    const auto labels = labels_of(images(Split::train));
    std::vector<double> bce(model_.experts.size());
    auto& experts = model_.experts;
    parallel_for(experts.size(), [&](std::size_t k) {
        auto& head = experts.heads[k];
        const auto col = expert_column(feats, k);
        fit_standardizer(head, col);
        Rng rng(derive_seed(config_.seed, kHeadInit + k));
        head.init(rng);
        bce[k] = train_head(head, col, labels,
                            plan(config_.epochs, config_.batch_size, config_.head_lr, config_.momentum,
                                 derive_seed(config_.seed, kHeadTrain + k)));
    });
    // Baseline: one expert (the configured one, or the lowest validation BCE),
    // trained further on the full split for the epochs the grid spends
    // fine-tuning.
    std::size_t bk = 0;
    if (config_.baseline_level > 0) {
        bk = ExpertArray::index({config_.baseline_manifold, config_.baseline_level});
    } else if (have_split(Split::val)) {
        const auto& vf = features(Split::val);
        const auto vy = labels_of(images(Split::val));
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < experts.size(); ++k) {
            const double b = head_bce(experts.heads[k], expert_column(vf, k), vy);
            if (b < best) {
                best = b;
                bk = k;
            }
        }
    } else {
        bk = std::size_t(std::min_element(bce.begin(), bce.end()) - bce.begin());
    }
    model_.baseline_id = {int(bk) / kNumLevels, int(bk) % kNumLevels + 1};
    model_.baseline = experts.heads[bk];
    const double base_bce =
        train_head(model_.baseline, expert_column(feats, bk), labels,
                   plan(config_.finetune_epochs, config_.batch_size, config_.finetune_lr, config_.momentum,
                        derive_seed(config_.seed, kBaseline)));
    PhaseStats s;
    double mean = 0;
    for (std::size_t k = 0; k < bce.size(); ++k) {
        const ExpertId id{int(k) / kNumLevels, int(k) % kNumLevels + 1};
        s.emplace_back("experts.bce." + std::to_string(id.manifold) + "." + std::to_string(id.level), bce[k]);
        mean += bce[k] / double(bce.size());
    }
    s.emplace_back("experts.bce.mean", mean);
    s.emplace_back("baseline.manifold", model_.baseline_id.manifold);
    s.emplace_back("baseline.level", model_.baseline_id.level);
    s.emplace_back("baseline.bce", base_bce);
    return s;
}

PhaseStats Session::experts_finetune_phase() {
    const auto& feats = features(Split::train);
    const auto labels = labels_of(images(Split::train));
    const auto& assignment = model_.clusters.assignment;
    if (assignment.size() != feats.size()) {
        throw StateError("cluster assignment covers " + std::to_string(assignment.size()) +
                         " images but the train split has " + std::to_string(feats.size()));
    }
    // Validation images go to the cluster of their nearest center.
    std::vector<std::vector<std::size_t>> val_members(kNumLevels);
    std::vector<ExpertFeatures> val_feats;
    std::vector<int> val_labels;
    if (have_split(Split::val) && !images(Split::val).empty()) {
        val_feats = features(Split::val);
        val_labels = labels_of(images(Split::val));
        const auto& g = gae_embeddings(Split::val);
        for (std::size_t i = 0; i < g.size(); ++i) val_members[std::size_t(nearest_center(model_.clusters.centers, g[i]))].push_back(i);
    }
    auto group_bce = [&](int t) {
        const auto& members = val_members[std::size_t(t)];
        if (members.empty()) return 0.0;
        double sum = 0;
        for (int i = 0; i < kNumManifolds; ++i) {
            const std::size_t k = ExpertArray::index({i, t + 1});
            std::vector<int> y;
            for (std::size_t m : members) y.push_back(val_labels[m]);
            sum += head_bce(model_.experts.heads[k], expert_column(val_feats, k, &members), y);
        }
        return sum / kNumManifolds;
    };
    std::array<double, kNumLevels> before{}, after{};
    for (int t = 0; t < kNumLevels; ++t) before[std::size_t(t)] = group_bce(t);

    std::vector<std::vector<std::size_t>> members(kNumLevels);
    for (std::size_t i = 0; i < assignment.size(); ++i) members[std::size_t(assignment[i])].push_back(i);
    parallel_for(std::size_t(kNumManifolds * kNumLevels), [&](std::size_t k) {
        const int t = int(k) % kNumLevels;
        const auto& idx = members[std::size_t(t)];
        if (idx.empty()) return;
        std::vector<int> y;
        for (std::size_t i : idx) y.push_back(labels[i]);
        train_head(model_.experts.heads[k], expert_column(feats, k, &idx), y,
                   plan(config_.finetune_epochs, config_.batch_size, config_.finetune_lr, config_.momentum,
                        derive_seed(config_.seed, kFinetune + k)));
    });
    PhaseStats s;
    int improved = 0, compared = 0;
    for (int t = 0; t < kNumLevels; ++t) {
        after[std::size_t(t)] = group_bce(t);
        s.emplace_back("finetune.train_size" + std::to_string(t + 1), double(members[std::size_t(t)].size()));
        if (val_members[std::size_t(t)].empty()) continue;
        s.emplace_back("finetune.val_bce_before" + std::to_string(t + 1), before[std::size_t(t)]);
        s.emplace_back("finetune.val_bce_after" + std::to_string(t + 1), after[std::size_t(t)]);
        ++compared;
        improved += after[std::size_t(t)] < before[std::size_t(t)];
    }
    s.emplace_back("finetune.clusters_compared", compared);
    s.emplace_back("finetune.clusters_improved", improved);
    return s;
}

PhaseStats Session::routers_phase() {
    const auto& feats = features(Split::train);
    const auto& g = gae_embeddings(Split::train);
    const auto& r = mlre_latents(Split::train);
    const auto labels = labels_of(images(Split::train));
    const auto& assignment = model_.clusters.assignment;
    if (assignment.size() != feats.size()) throw StateError("cluster assignment does not match the train split");
    std::vector<RouterSample> samples(feats.size());
    parallel_for(feats.size(), [&](std::size_t i) {
        auto& s = samples[i];
        s.gae = g[i];
        s.mlre = r[i];
        for (std::size_t k = 0; k < model_.experts.size(); ++k) s.expert_probs[k] = model_.experts.heads[k].predict(feats[i][k]);
        s.label = labels[i];
        s.cluster = assignment[i];
    });
    Rng rng(derive_seed(config_.seed, kRouterInit));
    model_.nets = make_mapping_nets(rng);
    const auto rep = train_routers(model_.nets, model_.clusters.centers, samples,
                                   LossWeights{config_.alpha, config_.beta},
                                   plan(config_.router_epochs, config_.batch_size, config_.router_lr, config_.momentum,
                                        derive_seed(config_.seed, kRouterTrain)));
    std::vector<std::array<float, kNumManifolds>> w(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto f = router_forward(model_.nets, samples[i].gae, samples[i].mlre);
        std::copy(f.weights.begin(), f.weights.end(), w[i].begin());
    }
    PhaseStats s;
    s.emplace_back("router.total.initial", rep.initial.total);
    s.emplace_back("router.total.final", rep.final.total);
    s.emplace_back("router.detection.final", rep.final.detection);
    s.emplace_back("router.routing.final", rep.final.routing);
    s.emplace_back("router.balance.final", rep.final.balance);
    s.emplace_back("router.usage_entropy", usage_entropy(w));
    return s;
}

}  // namespace truemoe
