#include "truemoe/image.hpp"

namespace truemoe {

std::string to_string(Family f) {
    switch (f) {
        case Family::A: return "A";
        case Family::B: return "B";
        case Family::C: return "C";
    }
    return "?";
}

Family parse_family(const std::string& s) {
    if (s == "A") return Family::A;
    if (s == "B") return Family::B;
    if (s == "C") return Family::C;
    throw ConfigError("unknown generator family '" + s + "'");
}

void validate(const Provenance& p, bool allow_unknown_family) {
    if (p.content_category < 0 || p.content_category >= kNumCategories) {
        throw DomainError("content category out of range: " + std::to_string(p.content_category));
    }
    if (p.artifact_scale && (*p.artifact_scale < 1 || *p.artifact_scale > kNumScales)) {
        throw DomainError("artifact scale out of range: " + std::to_string(*p.artifact_scale));
    }
    if (p.label == Label::real) {
        if (p.family || p.artifact_scale) throw DomainError("real image carries generator provenance");
        return;
    }
    const bool complete = p.family.has_value() && p.artifact_scale.has_value();
    const bool unknown = !p.family.has_value() && !p.artifact_scale.has_value();
    if (!complete && !(allow_unknown_family && unknown)) {
        throw DomainError("fake image needs both family and artifact scale");
    }
}

void validate_pixels(const Tensor& pixels) {
    if (pixels.shape() != Shape{kChannels, kImageSize, kImageSize}) {
        throw DomainError("image must be [3,64,64], got " + shape_str(pixels.shape()));
    }
    for (float v : pixels.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("pixel value outside [0,1]");
    }
}

Tensor grayscale(const Tensor& pixels) {
    const std::size_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
    Tensor g({H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += pixels[c * H * W + i];
        g[i] = static_cast<float>(s / double(C));
    }
    return g;
}

}  // namespace truemoe
