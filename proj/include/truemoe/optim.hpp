#pragma once

#include <span>
#include <vector>

#include "truemoe/tensor.hpp"

namespace truemoe {

// SGD with heavy-ball momentum: v <- mu*v + g; theta <- theta - lr*v.
struct OptimizerState {
    float learning_rate = 1e-4f;
    float momentum = 0.9f;
    std::vector<Tensor> velocity;
};

OptimizerState make_optimizer(std::span<const Tensor> params, float learning_rate, float momentum);

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state);

// Rescales grads so their joint L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

}  // namespace truemoe
