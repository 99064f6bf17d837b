#include "truemoe/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "truemoe/fft.hpp"

namespace truemoe {

Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H == height && W == width) return x;
    Tensor out({C, height, width});
    const double sy = double(H) / double(height), sx = double(W) / double(width);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(H - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(H - 1, y0 + 1);
        const double wy = fy - double(y0);
        for (std::size_t xx = 0; xx < width; ++xx) {
            const double fx = std::clamp((double(xx) + 0.5) * sx - 0.5, 0.0, double(W - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(W - 1, x0 + 1);
            const double wx = fx - double(x0);
            for (std::size_t c = 0; c < C; ++c) {
                const double top = x.at(c, y0, x0) * (1 - wx) + x.at(c, y0, x1) * wx;
                const double bot = x.at(c, y1, x0) * (1 - wx) + x.at(c, y1, x1) * wx;
                out.at(c, y, xx) = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Image preprocess(const RawImage& raw) {
    if (raw.width < 8 || raw.height < 8) throw DomainError("image must be at least 8x8");
    if (raw.rgb.size() != raw.width * raw.height * 3) throw DecodeError("raw pixel buffer has the wrong length");
    Tensor t({3, raw.height, raw.width});
    for (std::size_t y = 0; y < raw.height; ++y)
        for (std::size_t x = 0; x < raw.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = raw.rgb[(y * raw.width + x) * 3 + c] / 255.0f;
    return preprocess(t);
}

Image preprocess(const Tensor& pixels) {
    if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3)) {
        throw DecodeError("expected a [1|3,H,W] pixel grid, got " + shape_str(pixels.shape()));
    }
    if (pixels.dim(1) < 8 || pixels.dim(2) < 8) throw DomainError("image must be at least 8x8");
    Tensor rgb = pixels;
    if (pixels.dim(0) == 1) {
        const std::size_t n = pixels.dim(1) * pixels.dim(2);
        rgb = Tensor({3, pixels.dim(1), pixels.dim(2)});
        for (std::size_t c = 0; c < 3; ++c) std::copy(pixels.data(), pixels.data() + n, rgb.data() + c * n);
    }
    Tensor out = resize_bilinear(rgb, kImageSize, kImageSize);
    for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
    return Image{std::move(out), {}};
}

Tensor srm_filter(const Tensor& pixels) {
    const std::size_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
    Tensor out({kSrmFilters, H, W});
    auto px = [&](std::size_t c, long y, long x) {
        y = std::clamp<long>(y, 0, long(H) - 1);
        x = std::clamp<long>(x, 0, long(W) - 1);
        return double(pixels.at(c, std::size_t(y), std::size_t(x)));
    };
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            double first = 0, second = 0, kv = 0;
            const long yy = long(y), xx = long(x);
            for (std::size_t c = 0; c < C; ++c) {
                const double ctr = px(c, yy, xx);
                const double l = px(c, yy, xx - 1), r = px(c, yy, xx + 1);
                const double u = px(c, yy - 1, xx), d = px(c, yy + 1, xx);
                first += -ctr + r;
                second += l - 2.0 * ctr + r;
                const double corners = px(c, yy - 1, xx - 1) + px(c, yy - 1, xx + 1) + px(c, yy + 1, xx - 1) +
                                       px(c, yy + 1, xx + 1);
                const double edges = l + r + u + d;
                kv += (2.0 * edges - corners - 4.0 * ctr) / 4.0;
            }
            out.at(0, y, x) = static_cast<float>(first / double(C));
            out.at(1, y, x) = static_cast<float>(second / double(C));
            out.at(2, y, x) = static_cast<float>(kv / double(C));
        }
    return out;
}

Tensor dft_features(const Tensor& pixels) {
    const Spectrum s = fft2(grayscale(pixels));
    Tensor mag(s.real.shape());
    for (std::size_t i = 0; i < mag.size(); ++i) {
        mag[i] = static_cast<float>(std::log1p(std::hypot(double(s.real[i]), double(s.imag[i]))));
    }
    return fftshift(mag).reshaped({1, mag.dim(0), mag.dim(1)});
}

std::string to_string(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::blur: return "blur";
        case PerturbationKind::crop: return "crop";
        case PerturbationKind::jpeg: return "jpeg";
        case PerturbationKind::noise: return "noise";
    }
    return "?";
}

PerturbationKind parse_perturbation(const std::string& s) {
    if (s == "blur") return PerturbationKind::blur;
    if (s == "crop") return PerturbationKind::crop;
    if (s == "jpeg") return PerturbationKind::jpeg;
    if (s == "noise") return PerturbationKind::noise;
    throw ConfigError("unknown perturbation '" + s + "'");
}

void validate(const PerturbationSpec& spec) {
    if (!(spec.apply_probability >= 0.0 && spec.apply_probability <= 1.0)) {
        throw DomainError("apply_probability must lie in [0,1]");
    }
    if (!(spec.crop_max_fraction >= 0.0 && spec.crop_max_fraction < 1.0)) {
        throw DomainError("crop fraction must lie in [0,1)");
    }
}

Tensor gaussian_blur(const Tensor& pixels, int kernel_size, double sigma) {
    if (kernel_size < 1 || kernel_size % 2 == 0 || !(sigma > 0)) throw DomainError("invalid blur kernel");
    const int r = kernel_size / 2;
    std::vector<double> k(kernel_size);
    double s = 0;
    for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= s;
    const std::size_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
    std::vector<double> tmp(C * H * W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) {
                    const long xx = std::clamp<long>(long(x) + i, 0, long(W) - 1);
                    acc += k[i + r] * pixels.at(c, y, std::size_t(xx));
                }
                tmp[(c * H + y) * W + x] = acc;
            }
    Tensor out(pixels.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) {
                    const long yy = std::clamp<long>(long(y) + i, 0, long(H) - 1);
                    acc += k[i + r] * tmp[(c * H + std::size_t(yy)) * W + x];
                }
                out.at(c, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

Tensor crop_and_resize(const Tensor& pixels, std::size_t top, std::size_t left, std::size_t height,
                       std::size_t width) {
    const std::size_t C = pixels.dim(0);
    if (top + height > pixels.dim(1) || left + width > pixels.dim(2) || height == 0 || width == 0) {
        throw DomainError("crop window outside the image");
    }
    Tensor crop({C, height, width});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) crop.at(c, y, x) = pixels.at(c, top + y, left + x);
    return resize_bilinear(crop, pixels.dim(1), pixels.dim(2));
}

namespace {

constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40, 57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> b{};
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
                b[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        return b;
    }();
    return basis;
}

}  // namespace

Tensor jpeg_surrogate(const Tensor& pixels, int quality) {
    if (quality < 1 || quality > 100) throw DomainError("jpeg quality must lie in [1,100]");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> q{};
    for (int i = 0; i < 64; ++i) q[i] = std::max(1, (kLuminanceTable[i] * scale + 50) / 100);
    const auto& B = dct_basis();
    const std::size_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
    Tensor out = pixels;
    double block[8][8], coef[8][8], tmp[8][8];
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t by = 0; by + 8 <= H; by += 8)
            for (std::size_t bx = 0; bx + 8 <= W; bx += 8) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) block[y][x] = pixels.at(c, by + y, bx + x) * 255.0 - 128.0;
                for (int u = 0; u < 8; ++u)
                    for (int x = 0; x < 8; ++x) {
                        double s = 0;
                        for (int y = 0; y < 8; ++y) s += B[u][y] * block[y][x];
                        tmp[u][x] = s;
                    }
                for (int u = 0; u < 8; ++u)
                    for (int v = 0; v < 8; ++v) {
                        double s = 0;
                        for (int x = 0; x < 8; ++x) s += tmp[u][x] * B[v][x];
                        coef[u][v] = std::round(s / q[u * 8 + v]) * q[u * 8 + v];
                    }
                for (int y = 0; y < 8; ++y)
                    for (int v = 0; v < 8; ++v) {
                        double s = 0;
                        for (int u = 0; u < 8; ++u) s += B[u][y] * coef[u][v];
                        tmp[y][v] = s;
                    }
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        double s = 0;
                        for (int v = 0; v < 8; ++v) s += tmp[y][v] * B[v][x];
                        out.at(c, by + y, bx + x) = static_cast<float>(std::clamp((s + 128.0) / 255.0, 0.0, 1.0));
                    }
            }
    return out;
}

Tensor add_gaussian_noise(const Tensor& pixels, double variance_255, Rng& rng) {
    const double sigma = std::sqrt(variance_255) / 255.0;
    Tensor out(pixels.shape());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        out[i] = static_cast<float>(std::clamp(double(pixels[i]) + normal(rng, 0.0, sigma), 0.0, 1.0));
    }
    return out;
}

Tensor perturb(const Tensor& pixels, const PerturbationSpec& spec) {
    validate(spec);
    Rng rng(spec.rng_seed);
    if (!(uniform01(rng) < spec.apply_probability)) return pixels;
    switch (spec.kind) {
        case PerturbationKind::blur: {
            static constexpr int sizes[] = {3, 5, 7, 9};
            const int size = sizes[uniform_int(rng, 0, 3)];
            return gaussian_blur(pixels, size, size / 6.0);
        }
        case PerturbationKind::crop: {
            const std::size_t H = pixels.dim(1), W = pixels.dim(2);
            const double fy = uniform(rng, 0.0, spec.crop_max_fraction);
            const double fx = uniform(rng, 0.0, spec.crop_max_fraction);
            const std::size_t h = std::max<std::size_t>(1, H - std::size_t(std::lround(fy * double(H))));
            const std::size_t w = std::max<std::size_t>(1, W - std::size_t(std::lround(fx * double(W))));
            const std::size_t top = std::size_t(uniform_int(rng, 0, int(H - h)));
            const std::size_t left = std::size_t(uniform_int(rng, 0, int(W - w)));
            return crop_and_resize(pixels, top, left, h, w);
        }
        case PerturbationKind::jpeg:
            return jpeg_surrogate(pixels, uniform_int(rng, 30, 95));
        case PerturbationKind::noise: {
            const double variance = uniform(rng, 5.0, 20.0);
            return add_gaussian_noise(pixels, variance, rng);
        }
    }
    return pixels;
}

}  // namespace truemoe
