#include "lvo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lvo {

void AdamState::step(Tensor& param, const Tensor& grad, const AdamSettings& s) {
    if (m_.size() != param.size()) {
        m_ = Tensor(param.shape());
        v_ = Tensor(param.shape());
    }
    if (!grad.same_shape(param)) throw std::invalid_argument("adam: gradient shape mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(s.beta1, t_);
    const double c2 = 1.0 - std::pow(s.beta2, t_);
    for (std::size_t i = 0; i < param.size(); ++i) {
        m_[i] = s.beta1 * m_[i] + (1.0 - s.beta1) * grad[i];
        v_[i] = s.beta2 * v_[i] + (1.0 - s.beta2) * grad[i] * grad[i];
        param[i] -= s.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + s.eps);
    }
}

Adam::Adam(std::vector<ag::Var> params, AdamSettings settings)
    : params_(std::move(params)), state_(params_.size()), settings_(settings) {}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        state_[i].step(params_[i].mutable_value(), params_[i].grad(), settings_);
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace lvo
