#pragma once

// Training objectives with analytic gradients. Templated so the gradient
// checks can run in double precision.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "truemoe/errors.hpp"
#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr double kBceEps = 1e-7;

struct LossWeights {
    double alpha = 0.5;
    double beta = 1e-2;
};

// -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]. The gradient is
// zero where the clamp is active.
template <class T>
T bce_loss(T p, int y, T* grad_p = nullptr) {
    const T lo = T(kBceEps), hi = T(1) - T(kBceEps);
    const T q = std::clamp(p, lo, hi);
    if (grad_p) *grad_p = (p < lo || p > hi) ? T(0) : (y ? -T(1) / q : T(1) / (T(1) - q));
    return y ? -std::log(q) : -std::log(T(1) - q);
}

// Image-to-text InfoNCE over N matched rows:
// -(1/N) sum_i log softmax_j(fI_i . fT_j / tau)[i].
template <class T>
T contrastive_loss(const BasicTensor<T>& fI, const BasicTensor<T>& fT, double tau, BasicTensor<T>* grad_fI = nullptr,
                   BasicTensor<T>* grad_fT = nullptr) {
    if (!(tau > 0)) throw DomainError("contrastive temperature must be positive");
    fI.require_same_shape(fT);
    if (fI.rank() != 2 || fI.dim(0) == 0) throw DimensionError("contrastive loss expects [N,D] with N >= 1");
    const std::size_t N = fI.dim(0), D = fI.dim(1);
    if (grad_fI) *grad_fI = BasicTensor<T>(fI.shape());
    if (grad_fT) *grad_fT = BasicTensor<T>(fT.shape());
    double total = 0;
    std::vector<double> s(N);
    for (std::size_t i = 0; i < N; ++i) {
        const T* a = fI.data() + i * D;
        double m = -1e300;
        for (std::size_t j = 0; j < N; ++j) {
            const T* b = fT.data() + j * D;
            double d = 0;
            for (std::size_t k = 0; k < D; ++k) d += double(a[k]) * double(b[k]);
            s[j] = d / tau;
            m = std::max(m, s[j]);
        }
        double z = 0;
        for (double v : s) z += std::exp(v - m);
        const double lse = m + std::log(z);
        total += lse - s[i];
        if (!grad_fI && !grad_fT) continue;
        for (std::size_t j = 0; j < N; ++j) {
            const double g = (std::exp(s[j] - lse) - (i == j ? 1.0 : 0.0)) / (double(N) * tau);
            if (g == 0.0) continue;
            const T* b = fT.data() + j * D;
            for (std::size_t k = 0; k < D; ++k) {
                if (grad_fI) (*grad_fI)[i * D + k] += static_cast<T>(g * double(b[k]));
                if (grad_fT) (*grad_fT)[j * D + k] += static_cast<T>(g * double(a[k]));
            }
        }
    }
    return static_cast<T>(total / double(N));
}

// Mean squared error; gradient is w.r.t. the reconstruction.
template <class T>
T reconstruction_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_tilde, BasicTensor<T>* grad = nullptr) {
    x.require_same_shape(x_tilde);
    if (x.empty()) throw DimensionError("reconstruction loss of an empty tensor");
    const double n = double(x.size());
    double s = 0;
    if (grad) *grad = BasicTensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = double(x_tilde[i]) - double(x[i]);
        s += d * d;
        if (grad) (*grad)[i] = static_cast<T>(2.0 * d / n);
    }
    return static_cast<T>(s / n);
}

// ||u - f_g||^2 / (2 f_m) + 0.5 ln f_m.
template <class T>
T routing_loss(std::span<const T> u, std::span<const T> f_g, T f_m, std::span<T> grad_fg = {}, T* grad_fm = nullptr) {
    if (u.size() != f_g.size()) throw DimensionError("routing loss: center and feature lengths differ");
    if (!(f_m > T(0))) throw DomainError("routing loss uncertainty f_m must be positive");
    double sq = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = double(u[i]) - double(f_g[i]);
        sq += d * d;
    }
    if (!grad_fg.empty()) {
        for (std::size_t i = 0; i < u.size(); ++i) grad_fg[i] = static_cast<T>((double(f_g[i]) - double(u[i])) / double(f_m));
    }
    if (grad_fm) *grad_fm = static_cast<T>(-sq / (2.0 * double(f_m) * double(f_m)) + 0.5 / double(f_m));
    return static_cast<T>(sq / (2.0 * double(f_m)) + 0.5 * std::log(double(f_m)));
}

namespace detail {
template <class T>
void require_simplex(std::span<const T> v, const char* what) {
    double s = 0;
    for (T x : v) {
        if (!(x >= T(0))) throw DomainError(std::string(what) + " has a negative entry");
        s += double(x);
    }
    if (std::abs(s - 1.0) > 1e-6) throw DomainError(std::string(what) + " does not sum to 1");
}
}  // namespace detail

// n * sum_i d_i p_i. d is treated as a constant.
template <class T>
T balance_loss(std::span<const T> d, std::span<const T> p, std::span<T> grad_p = {}) {
    if (d.size() != p.size() || d.empty()) throw DimensionError("balance loss: distributions differ in length");
    detail::require_simplex(d, "balance loss d");
    detail::require_simplex(p, "balance loss p");
    const double n = double(d.size());
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        s += double(d[i]) * double(p[i]);
        if (!grad_p.empty()) grad_p[i] = static_cast<T>(n * double(d[i]));
    }
    return static_cast<T>(n * s);
}

inline double total_loss(double l_d, double l_router, double l_balance, const LossWeights& w) {
    if (!std::isfinite(l_d) || !std::isfinite(l_router) || !std::isfinite(l_balance)) {
        throw NumericError("non-finite loss component");
    }
    if (w.alpha < 0 || w.beta < 0) throw ConfigError("loss weights must be non-negative");
    return l_d + w.alpha * l_router + w.beta * l_balance;
}

}  // namespace truemoe
