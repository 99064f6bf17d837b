#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
    return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), h);
}

// Digest of shapes and raw float bytes, in order.
inline std::uint64_t digest_tensors(std::span<const Tensor> tensors, std::uint64_t h = kFnvOffset) {
    for (const auto& t : tensors) {
        for (std::size_t d : t.shape()) {
            const std::uint64_t v = d;
            h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(&v), sizeof v), h);
        }
        h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(t.data()), t.size() * sizeof(float)), h);
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace truemoe
