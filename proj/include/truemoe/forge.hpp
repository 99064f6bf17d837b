#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "truemoe/image.hpp"

namespace truemoe {

// Procedural stand-in for a natural photo: value-noise texture, a linear
// gradient and anti-aliased shapes. The category picks palette and layout.
Tensor synth_real(int category, std::uint64_t seed);

// Forges a fake from a real base image. Each family imprints its own
// signature and the artifact scale moves it to a coarser perceptual level.
Tensor synth_fake(const Tensor& base, Family family, int artifact_scale, std::uint64_t seed);

// Family A: number of principal components kept per 8x8x3 patch.
int family_a_bottleneck(int artifact_scale);
// Family B: period of the injected grid, 2^(scale-1) * 2 pixels.
int family_b_period(int artifact_scale);
// Family C: [lo, hi] radius of the zeroed spectral annulus, in frequency bins.
std::pair<double, double> family_c_band(int artifact_scale, std::uint64_t seed);

enum class Split { train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    Provenance meta;
};

struct DatasetManifest {
    Split split = Split::train;
    std::vector<ManifestEntry> entries;
    std::uint64_t content_hash = 0;
    std::filesystem::path directory;  // where relative paths resolve; not serialized

    std::filesystem::path resolve(const ManifestEntry& e) const { return directory / e.path; }
};

// FNV-1a 64 over the serialized record lines.
std::uint64_t manifest_hash(const std::vector<ManifestEntry>& entries);
std::string format_manifest_record(const ManifestEntry& e);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

struct SplitCounts {
    int real = 0;
    std::array<int, kNumFamilies> fake{};  // indexed by Family
};

struct DatasetConfig {
    std::filesystem::path root;
    std::array<SplitCounts, 3> splits{};  // indexed by Split
    std::optional<int> pinned_scale;
    std::uint64_t seed = 0;
};

// Writes <root>/<split>/<real|fake>/<family?>/<index>.ppm plus
// <root>/<split>/manifest.tsv for every split with a non-zero count.
std::vector<DatasetManifest> build_dataset(const DatasetConfig& config);

// In-memory variant of build_dataset for one split (no files written).
std::vector<Image> generate_split(const SplitCounts& counts, Split split, std::uint64_t seed,
                                  std::optional<int> pinned_scale = std::nullopt);

// Builds a manifest over <dir>/real/* and <dir>/fake/* image files; fakes get
// no family or scale.
DatasetManifest ingest_directory(const std::filesystem::path& dir);

Image load_image(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<Image> load_images(const DatasetManifest& manifest);

}  // namespace truemoe
