#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "truemoe/errors.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

struct GradCheckOptions {
    // 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

// Central-difference check. Returns max over checked coordinates of
// |fd - an| / max(1e-8, |fd| + |an|).
template <class T>
double grad_check(const std::function<double(std::span<const BasicTensor<T>>)>& loss_fn,
                  std::vector<BasicTensor<T>> params, std::span<const BasicTensor<T>> analytic, double eps,
                  const GradCheckOptions& options = {}) {
    if (!(eps > 0.0)) throw DomainError("grad_check eps must be positive");
    if (params.size() != analytic.size()) throw DimensionError("grad_check: params/gradient count mismatch");
    Rng rng(options.seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        params[t].require_same_shape(analytic[t]);
        std::vector<std::size_t> coords(params[t].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
        }
        for (std::size_t idx : coords) {
            const T orig = params[t][idx];
            params[t][idx] = static_cast<T>(orig + eps);
            const double up = loss_fn(params);
            params[t][idx] = static_cast<T>(orig - eps);
            const double down = loss_fn(params);
            params[t][idx] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
            const double fd = (up - down) / (2.0 * eps);
            const double an = static_cast<double>(analytic[t][idx]);
            const double rel = std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace truemoe
