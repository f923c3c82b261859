#pragma once

#include "lvo/autograd.hpp"
#include "lvo/tensor.hpp"

#include <vector>

namespace lvo {

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers for one parameter tensor.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const std::vector<int>& shape) : m_(shape), v_(shape) {}

    /// param -= lr * m_hat / (sqrt(v_hat) + eps). Pass the negated gradient to ascend.
    void step(Tensor& param, const Tensor& grad, const AdamSettings& s);
    int steps_taken() const { return t_; }

private:
    Tensor m_, v_;
    int t_ = 0;
};

/// Adam over a set of autograd leaves; gradients are read from and then cleared on each leaf.
class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamSettings settings);

    void step();
    void zero_grad();
    AdamSettings& settings() { return settings_; }

private:
    std::vector<ag::Var> params_;
    std::vector<AdamState> state_;
    AdamSettings settings_;
};

} // namespace lvo
