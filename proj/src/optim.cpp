#include "truemoe/optim.hpp"

#include <cmath>
#include <string>

namespace truemoe {

OptimizerState make_optimizer(std::span<const Tensor> params, float learning_rate, float momentum) {
    if (!(learning_rate >= 0.0f)) throw DomainError("learning rate must be non-negative");
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw DomainError("momentum must lie in [0,1)");
    OptimizerState state{learning_rate, momentum, {}};
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.shape());
    return state;
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.velocity.size()) {
        throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params, " +
                             std::to_string(grads.size()) + " grads, " + std::to_string(state.velocity.size()) +
                             " velocity slots");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].require_same_shape(grads[i]);
        params[i].require_same_shape(state.velocity[i]);
    }
    const float mu = state.momentum, lr = state.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i].data();
        float* v = state.velocity[i].data();
        const float* g = grads[i].data();
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            v[j] = mu * v[j] + g[j];
            p[j] -= lr * v[j];
        }
    }
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
    if (!(max_norm > 0.0)) throw DomainError("clip norm must be positive");
    double sq = 0.0;
    for (const auto& g : grads) sq += sum_sq(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& g : grads) g *= s;
    }
    return norm;
}

}  // namespace truemoe
