#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "truemoe/checkpoint.hpp"
#include "truemoe/config.hpp"
#include "truemoe/experts.hpp"
#include "truemoe/metrics.hpp"
#include "truemoe/routing.hpp"
#include "truemoe/signal.hpp"
#include "truemoe/training.hpp"

namespace truemoe {

// Everything a run learns. completed is the index in kPhaseOrder of the last
// finished phase, -1 before any.
struct Model {
    Config config;
    int completed = -1;
    ExpertArray experts;
    Mlre mlre;
    Gae gae;
    GranularityCalibration calibration;  // granularity labels, fit with the GAE
    GranularityClusters clusters;
    ExpertHead baseline;
    ExpertId baseline_id;
    MappingNets nets;

    bool has(Phase p) const;
};

int phase_index(Phase p);
Model make_model(const Config& config);

// Cumulative: every tensor learned up to model.completed, plus meta/phase and
// meta/config. Mode flags come back from the config echo.
Checkpoint to_checkpoint(const Model& model);
Model from_checkpoint(const Checkpoint& ckpt);

std::filesystem::path checkpoint_path(const Config& config, Phase p);

// Named scalars a phase reports (losses, accuracies, counts).
using PhaseStats = std::vector<std::pair<std::string, double>>;

// Per-image outputs of the full model.
struct ImageScore {
    float fused = 0;
    float baseline = 0;
    RoutingDecision decision;
};

ImageScore score_image(const Model& model, const Tensor& pixels);

struct Evaluation {
    MetricsReport truemoe;
    MetricsReport baseline;
    std::vector<ImageScore> scores;
    double usage_entropy = 0;
};

// Per-image perturbation seed used by evaluate().
std::uint64_t perturbation_seed(std::uint64_t base, std::size_t index);

// Scores every image (perturbed with a per-image seed derived from the spec's
// rng_seed when a spec is given) and builds both reports. Throws StateError
// unless the model has completed every phase.
Evaluation evaluate(const Model& model, const std::vector<Image>& images,
                    const std::optional<PerturbationSpec>& perturbation);

// Perturbation spec described by the config (nullopt for "none").
std::optional<PerturbationSpec> perturbation_from_config(const Config& config);

// path, t, six distances, three weights, fused probability.
std::string format_route_record(const std::string& path, const ImageScore& s);
void write_routes(const std::vector<std::string>& paths, const std::vector<ImageScore>& scores,
                  const std::filesystem::path& file);

// Phase runner with in-memory caches of images and per-image features.
// Images come from <data_root>/<split>/manifest.tsv unless set directly.
class Session {
public:
    explicit Session(Config config);

    const Config& config() const { return config_; }
    // Replaces the run config (e.g. a different beta) keeping data caches.
    void set_config(Config config);

    Model& model() { return model_; }
    const Model& model() const { return model_; }

    void set_images(Split split, std::vector<Image> images, std::vector<std::string> paths = {});
    const std::vector<Image>& images(Split split);
    const std::vector<std::string>& paths(Split split);

    // Runs one phase; earlier phases must be complete in memory or present as
    // checkpoints under work_dir (StateError otherwise). Writes the phase's
    // checkpoint when write_checkpoints is set.
    PhaseStats run_phase(Phase p);
    PhaseStats run_all();

    // Loads the checkpoint of phase p from work_dir.
    void load(Phase p);

    Evaluation evaluate(Split split, const std::optional<PerturbationSpec>& perturbation = std::nullopt);

    bool write_checkpoints = true;

private:
    struct SplitData {
        bool loaded = false;
        std::vector<Image> images;
        std::vector<std::string> paths;
        std::vector<ExpertFeatures> features;
        std::vector<std::vector<float>> gae;
        std::vector<std::vector<float>> mlre;
        std::vector<LevelEnergies> energies;
        std::vector<int> granularity_labels;
    };

    SplitData& data(Split split);
    bool have_split(Split split) const;
    const std::vector<ExpertFeatures>& features(Split split);
    const std::vector<std::vector<float>>& gae_embeddings(Split split);
    const std::vector<std::vector<float>>& mlre_latents(Split split);
    const std::vector<LevelEnergies>& level_energies(Split split);
    const std::vector<int>& granularity_labels(Split split);
    void require(Phase p);
    void invalidate_after(Phase p);

    PhaseStats pretrain_autoencoders_phase();
    PhaseStats pretrain_mlre_phase();
    PhaseStats pretrain_gae_phase();
    PhaseStats cluster_phase();
    PhaseStats experts_joint_phase();
    PhaseStats experts_finetune_phase();
    PhaseStats routers_phase();

    Config config_;
    Model model_;
    std::array<SplitData, 3> splits_;
};

}  // namespace truemoe
