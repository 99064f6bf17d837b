#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "truemoe/tensor.hpp"

namespace truemoe {

// Interleaved 8-bit RGB, row-major.
struct RawImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;
};

// Accepts PNG and binary PPM (P6, maxval 255). Anything else is a DecodeError
// naming the signature that was found.
RawImage decode_image(std::span<const std::uint8_t> bytes);
RawImage read_image_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_ppm(const Tensor& pixels);  // [3,H,W] in [0,1]
void write_ppm(const std::filesystem::path& path, const Tensor& pixels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace truemoe
