#pragma once

#include <complex>
#include <vector>

#include "truemoe/tensor.hpp"

namespace truemoe {

struct Spectrum {
    Tensor real;  // [H,W]
    Tensor imag;  // [H,W]
};

// Unnormalized 2-D DFT. Power-of-two sides use radix-2 Cooley-Tukey; other
// sizes fall back to the direct O(n^2) transform per axis.
Spectrum fft2(const Tensor& input);
Spectrum fft2(const Spectrum& input);

// Inverse transform including the 1/(H*W) factor.
Spectrum ifft2(const Spectrum& spectrum);

// In-place 1-D transform on complex<double>; inverse omits the 1/n scale.
void fft1d(std::vector<std::complex<double>>& data, bool inverse);

// Moves the zero-frequency bin to (H/2, W/2).
Tensor fftshift(const Tensor& x);

}  // namespace truemoe
