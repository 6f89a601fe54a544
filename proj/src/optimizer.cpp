#include "scasnn/optimizer.hpp"

#include <cmath>

#include "scasnn/errors.hpp"

namespace scasnn {

void AdamConfig::validate() const {
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
        throw ConfigError("optimizer: need lr > 0, betas in [0, 1), eps > 0");
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Adam::step(std::size_t slot, Tensor& param, const Tensor& grad, const Tensor* trainable) {
    require_same_shape(param, grad, "Adam::step gradient");
    if (trainable) require_same_shape(param, *trainable, "Adam::step trainable mask");
    if (slot >= slots_.size()) slots_.resize(slot + 1);
    Slot& s = slots_[slot];
    if (s.m.shape() != param.shape()) s = {Tensor::zeros_like(param), Tensor::zeros_like(param), 0};
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (trainable && (*trainable)[i] == 0.0) continue;
        const double g = grad[i];
        s.m[i] = cfg_.beta1 * s.m[i] + (1 - cfg_.beta1) * g;
        s.v[i] = cfg_.beta2 * s.v[i] + (1 - cfg_.beta2) * g * g;
        param[i] -= cfg_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.eps);
    }
}

}  // namespace scasnn
