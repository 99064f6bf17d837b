#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "truemoe/image.hpp"
#include "truemoe/image_io.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

// Bilinear resampling with half-pixel centres and clamped borders. [C,H,W].
Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width);

// Raw 8-bit RGB -> 64x64 pixels in [0,1]. Both sides must be at least 8.
Image preprocess(const RawImage& raw);
// Float [C,H,W] (C in {1,3}) -> 64x64, clamped to [0,1]. A 64x64 input in
// range is returned unchanged.
Image preprocess(const Tensor& pixels);

inline constexpr std::size_t kSrmFilters = 3;

// Linear SRM subset with edge-replicated "same" padding, averaged over colour
// channels: [-1 1] horizontal, [1 -2 1] horizontal, and the 3x3 KV kernel / 4.
Tensor srm_filter(const Tensor& pixels);

// log(1 + |DFT(gray)|), zero frequency shifted to (32, 32). Output [1,64,64].
Tensor dft_features(const Tensor& pixels);

enum class PerturbationKind { blur, crop, jpeg, noise };

std::string to_string(PerturbationKind k);
PerturbationKind parse_perturbation(const std::string& s);

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::blur;
    double apply_probability = 0.5;
    std::uint64_t rng_seed = 0;
    double crop_max_fraction = 0.25;
};

void validate(const PerturbationSpec& spec);

// Pure in (pixels, spec). With probability apply_probability the distortion
// is applied with parameters drawn from the spec's seed; otherwise the input
// is returned as-is.
Tensor perturb(const Tensor& pixels, const PerturbationSpec& spec);

// The individual distortions with explicit parameters.
Tensor gaussian_blur(const Tensor& pixels, int kernel_size, double sigma);
Tensor crop_and_resize(const Tensor& pixels, std::size_t top, std::size_t left, std::size_t height,
                       std::size_t width);
Tensor jpeg_surrogate(const Tensor& pixels, int quality);
Tensor add_gaussian_noise(const Tensor& pixels, double variance_255, Rng& rng);

}  // namespace truemoe
