#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kChannels = 3;
inline constexpr int kNumCategories = 8;
inline constexpr int kNumScales = 6;

enum class Label { real, fake };
enum class Family { A, B, C };

inline constexpr int kNumFamilies = 3;

std::string to_string(Family f);
Family parse_family(const std::string& s);  // throws ConfigError

// Where an image came from. Generated fakes carry family and artifact scale;
// reals carry neither. Ingested fakes may leave both unknown.
struct Provenance {
    Label label = Label::real;
    std::optional<Family> family;
    std::optional<int> artifact_scale;
    int content_category = 0;
    std::uint64_t seed = 0;

    bool operator==(const Provenance&) const = default;
};

void validate(const Provenance& p, bool allow_unknown_family = false);

struct Image {
    Tensor pixels;  // [3,64,64], values in [0,1]
    Provenance meta;
};

// Throws DomainError unless the tensor is [3,64,64] with every value in [0,1].
void validate_pixels(const Tensor& pixels);

Tensor grayscale(const Tensor& pixels);  // channel mean, [H,W]

}  // namespace truemoe
