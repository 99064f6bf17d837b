#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "truemoe/experts.hpp"
#include "truemoe/forge.hpp"
#include "truemoe/routing.hpp"

namespace truemoe {

// Every tunable of a run. Files use `key = value` lines with `#` comments;
// unknown keys are errors. format_config() writes every key in a fixed
// order and is what checkpoints echo.
struct Config {
    std::filesystem::path data_root = "data";
    std::filesystem::path work_dir = "work";
    std::filesystem::path report_path;  // empty: <work_dir>/report.tsv
    std::filesystem::path route_path;   // empty: <work_dir>/routes.tsv
    std::uint64_t seed = 0;

    std::array<SplitCounts, 3> splits{{
        {1024, {512, 512, 0}},  // train: A+B only
        {256, {128, 128, 0}},   // val
        {256, {0, 0, 256}},     // test: held-out family C
    }};
    int pinned_scale = 0;  // 0: uniform in [1,6]

    // Shared plan.
    int epochs = 10;
    int batch_size = 64;
    double momentum = 0.9;
    int pretrain_batch_size = 16;  // autoencoder / MLRE reconstruction batches

    int ae_images_per_family = 256;
    int ae_epochs = 5;
    double ae_lr = 0.2;

    int mlre_images = 512;  // 0: whole train split
    int mlre_epochs = 5;
    double mlre_lr = 0.02;
    MlreDomains mlre_domains = MlreDomains::all;

    int gae_images = 0;  // 0: whole train split
    int gae_epochs = 10;
    double gae_lr = 0.005;
    double gae_tau = 0.07;
    bool gae_rgb_only = false;
    int granularity_reference = 0;

    GdfMode gdf_mode = GdfMode::residual;
    double head_lr = 0.05;
    int finetune_epochs = 10;
    double finetune_lr = 0.02;

    int router_epochs = 10;
    double router_lr = 0.01;
    double alpha = 0.5;
    double beta = 1e-2;

    // Single-expert baseline; -1 / 0 pick the expert with the lowest
    // validation BCE after joint training.
    int baseline_manifold = -1;
    int baseline_level = 0;

    std::string eval_split = "test";
    std::string perturbation = "none";  // none|blur|crop|jpeg|noise
    double perturb_probability = 0.5;
    double crop_max_fraction = 0.25;

    std::filesystem::path report_file() const { return report_path.empty() ? work_dir / "report.tsv" : report_path; }
    std::filesystem::path route_file() const { return route_path.empty() ? work_dir / "routes.tsv" : route_path; }
};

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& file);
std::string format_config(const Config& config);
void validate(const Config& config);

}  // namespace truemoe
