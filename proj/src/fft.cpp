#include "truemoe/fft.hpp"

#include <cmath>
#include <numbers>

namespace truemoe {
namespace {

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

void radix2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / double(len) * (inverse ? 1.0 : -1.0);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // Twiddles from the exact angle rather than by repeated products.
                const std::complex<double> w(std::cos(ang * double(k)), std::sin(ang * double(k)));
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void naive_dft(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = sign * 2.0 * std::numbers::pi * double((k * t) % n) / double(n);
            acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    a = std::move(out);
}

Spectrum transform(const Tensor& re, const Tensor& im, bool inverse) {
    if (re.rank() != 2 || re.dim(0) == 0 || re.dim(1) == 0) throw DimensionError("fft2 expects a non-empty [H,W] tensor");
    re.require_same_shape(im);
    const std::size_t H = re.dim(0), W = re.dim(1);
    std::vector<std::complex<double>> grid(H * W);
    for (std::size_t i = 0; i < H * W; ++i) grid[i] = {double(re[i]), double(im[i])};
    std::vector<std::complex<double>> line;
    line.resize(W);
    for (std::size_t y = 0; y < H; ++y) {
        std::copy(grid.begin() + y * W, grid.begin() + (y + 1) * W, line.begin());
        fft1d(line, inverse);
        std::copy(line.begin(), line.end(), grid.begin() + y * W);
    }
    line.resize(H);
    for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t y = 0; y < H; ++y) line[y] = grid[y * W + x];
        fft1d(line, inverse);
        for (std::size_t y = 0; y < H; ++y) grid[y * W + x] = line[y];
    }
    const double scale = inverse ? 1.0 / double(H * W) : 1.0;
    Spectrum out{Tensor({H, W}), Tensor({H, W})};
    for (std::size_t i = 0; i < H * W; ++i) {
        out.real[i] = static_cast<float>(grid[i].real() * scale);
        out.imag[i] = static_cast<float>(grid[i].imag() * scale);
    }
    return out;
}

}  // namespace

void fft1d(std::vector<std::complex<double>>& data, bool inverse) {
    if (is_pow2(data.size())) {
        radix2(data, inverse);
    } else {
        naive_dft(data, inverse);
    }
}

Spectrum fft2(const Tensor& input) { return transform(input, Tensor(input.shape()), false); }

Spectrum fft2(const Spectrum& input) { return transform(input.real, input.imag, false); }

Spectrum ifft2(const Spectrum& spectrum) { return transform(spectrum.real, spectrum.imag, true); }

Tensor fftshift(const Tensor& x) {
    const std::size_t H = x.dim(0), W = x.dim(1);
    Tensor out({H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) out[((y + H / 2) % H) * W + (xx + W / 2) % W] = x[y * W + xx];
    return out;
}

}  // namespace truemoe
