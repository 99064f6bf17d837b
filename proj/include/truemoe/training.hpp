#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "truemoe/experts.hpp"
#include "truemoe/kmeans.hpp"
#include "truemoe/losses.hpp"
#include "truemoe/routing.hpp"

namespace truemoe {

enum class Phase { pretrain_autoencoders, pretrain_mlre, pretrain_gae, cluster, experts_joint, experts_finetune, routers };

inline constexpr std::array<Phase, 7> kPhaseOrder = {Phase::pretrain_autoencoders, Phase::pretrain_mlre,
                                                    Phase::pretrain_gae,          Phase::cluster,
                                                    Phase::experts_joint,         Phase::experts_finetune,
                                                    Phase::routers};

std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainPlan {
    int epochs = 10;
    int batch_size = 64;
    float lr = 1e-4f;
    float momentum = 0.9f;
    std::uint64_t seed = 0;
};

// Mean loss over the corpus before and after training, per branch.
struct BranchLosses {
    std::array<double, 3> initial{};
    std::array<double, 3> final{};
};

// Reconstruction MSE training of an encoder/decoder pair on inputs that are
// also the targets.
std::pair<double, double> train_reconstruction(Sequential<float>& encoder, Sequential<float>& decoder,
                                               const std::vector<Tensor>& inputs, const TrainPlan& plan);
double reconstruction_error(const Sequential<float>& encoder, const Sequential<float>& decoder,
                            const std::vector<Tensor>& inputs);

// Trains pair i on corpora[i] and freezes all three.
BranchLosses pretrain_autoencoders(std::array<AutoencoderPair, kNumManifolds>& pairs,
                                   const std::array<std::vector<Tensor>, kNumManifolds>& corpora,
                                   const TrainPlan& plan);

// Trains each domain branch on its own signal, freezes the encoders and
// drops the decoders.
BranchLosses pretrain_mlre(Mlre& mlre, const std::vector<Tensor>& images, const TrainPlan& plan);

using LevelEnergies = std::array<double, kNumLevels>;

// mean|GDF_j| per level.
LevelEnergies residual_energies(const std::vector<Tensor>& hx, const std::vector<Tensor>& hrec);
LevelEnergies residual_energies(const Hge& hge, const AutoencoderPair& reference, const Tensor& x);

// Per-level location/scale of log residual energy. Levels differ in energy by
// orders of magnitude, so each is normalized by its spread over a reference
// corpus before comparing. The default is the identity.
struct GranularityCalibration {
    LevelEnergies log_mean{};
    LevelEnergies log_std{1, 1, 1, 1, 1, 1};
};

// Fit on a reference corpus (normally the training reals).
GranularityCalibration fit_granularity_calibration(const std::vector<LevelEnergies>& energies);

// argmax_j (ln e_j - mean_j) / std_j, 1-based, ties to the lowest level. Zero
// energies count as -inf, so an exact reconstruction yields level 1.
int granularity_label(const LevelEnergies& energies, const GranularityCalibration& calibration = {});

int assign_granularity_label(const Hge& hge, const AutoencoderPair& reference, const Tensor& x,
                             const GranularityCalibration& calibration = {});

struct GaeLosses {
    double caption_initial = 0, caption_final = 0;
    double granularity_initial = 0, granularity_final = 0;
};

// Joint minimisation of the caption and granularity contrastive terms; the
// GAE is frozen afterwards. categories in [0,8), labels in [1,6].
GaeLosses pretrain_gae(Gae& gae, const std::vector<Tensor>& images, const std::vector<int>& categories,
                       const std::vector<int>& labels, const TrainPlan& plan, double tau);

// Both contrastive terms over fixed consecutive batches, without training.
std::pair<double, double> gae_losses(const Gae& gae, const std::vector<Tensor>& images,
                                     const std::vector<int>& categories, const std::vector<int>& labels,
                                     int batch_size, double tau);

double gae_label_accuracy(const Gae& gae, const std::vector<Tensor>& images, const std::vector<int>& labels);

// k-means (k=6) on GAE embeddings. Cluster indices are then permuted so that
// center t is matched to granularity label t of the GAE label table.
GranularityClusters cluster_granularity(const Gae& gae, const std::vector<std::vector<float>>& embeddings,
                                        std::uint64_t seed);

// ---- heads ------------------------------------------------------------------

void fit_standardizer(ExpertHead& head, const std::vector<std::span<const float>>& features);
double head_bce(const ExpertHead& head, const std::vector<std::span<const float>>& features,
                const std::vector<int>& labels);
// Mini-batch SGD on mean BCE. Returns the mean BCE after training.
double train_head(ExpertHead& head, const std::vector<std::span<const float>>& features, const std::vector<int>& labels,
                  const TrainPlan& plan);

// ---- routers ----------------------------------------------------------------

struct RouterSample {
    std::span<const float> gae;   // f_g^I, 16
    std::span<const float> mlre;  // r_m, 96
    std::array<float, kNumManifolds * kNumLevels> expert_probs{};  // frozen head outputs, manifold-major
    int label = 0;
    int cluster = 0;  // 0-based assignment from the cluster phase
};

struct RouterLosses {
    double total = 0, detection = 0, routing = 0, balance = 0;
};

// Total router objective over a batch, with gradients accumulated into grads when given.
RouterLosses router_batch_loss(const MappingNets& nets, const Tensor& centers, std::span<const RouterSample> batch,
                               const LossWeights& weights, std::vector<Tensor>* grads);

struct RouterReport {
    RouterLosses initial, final;
};

// Global gradient-norm clip applied at every router step.
inline constexpr double kRouterClipNorm = 1.0;

RouterReport train_routers(MappingNets& nets, const Tensor& centers, const std::vector<RouterSample>& samples,
                           const LossWeights& weights, const TrainPlan& plan);

// Entropy (nats) of the mean manifold-gate distribution.
double usage_entropy(const std::vector<std::array<float, kNumManifolds>>& weights);

}  // namespace truemoe
