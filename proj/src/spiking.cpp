#include "scasnn/spiking.hpp"

#include <cmath>
#include <string>

#include "scasnn/errors.hpp"

namespace scasnn {

void LIFConfig::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("lif: tau must be in (0,1], got " + std::to_string(tau));
    if (!(v_th > 0.0)) throw ConfigError("lif: v_th must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lif: lambda must be positive");
    if (window < 1) throw ConfigError("lif: window must be at least 1");
}

SpikeState resting_state(const Shape& shape) {
    return {Var::constant(Tensor(shape)), Var::constant(Tensor(shape))};
}

SpikeState lif_step(const SpikeState& prev, const Var& input_current, const LIFConfig& cfg) {
    require_same_shape(prev.membrane.value(), input_current.value(), "lif_step");
    Var membrane;
    if (cfg.reset == ResetMode::Hard) {
        // tau * U * (1 - O) + I
        Var keep = add_scalar(scale(prev.spikes, -1.0), 1.0);
        membrane = add(scale(mul(prev.membrane, keep), cfg.tau), input_current);
    } else {
        membrane = add(add_scalar(scale(prev.membrane, -cfg.tau), cfg.tau), input_current);
    }
    return {membrane, spike(membrane, cfg)};
}

double surrogate_grad(double u, double lambda) {
    const double a = std::abs(u);
    if (a > 1.0 / lambda) return 0.0;
    return -lambda * lambda * a + lambda;
}

Tensor surrogate_grad(const Tensor& u_centered, double lambda) {
    Tensor out(u_centered.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = surrogate_grad(u_centered[i], lambda);
    return out;
}

namespace {

double smoothed_step(double u, double lambda) {
    const double edge = 1.0 / lambda;
    if (u < -edge) return 0.0;
    if (u > edge) return 1.0;
    const double q = 0.5 * lambda * lambda * u * u;
    return u <= 0.0 ? 0.5 + lambda * u + q : 0.5 + lambda * u - q;
}

}  // namespace

Var spike(const Var& membrane, const LIFConfig& cfg) {
    const double th = cfg.v_th, lambda = cfg.lambda;
    auto derivative = [th, lambda](double u) { return surrogate_grad(u - th, lambda); };
    if (cfg.spike == SpikeForward::Smoothed)
        return custom_unary(membrane, [th, lambda](double u) { return smoothed_step(u - th, lambda); }, derivative);
    return custom_unary(membrane, [th](double u) { return u >= th ? 1.0 : 0.0; }, derivative);
}

Var run_window(const std::function<Var(const Var&)>& step, const Var& input, const LIFConfig& cfg) {
    cfg.validate();
    Var total = step(input);
    for (std::size_t t = 1; t < cfg.window; ++t) total = add(total, step(input));
    return scale(total, 1.0 / static_cast<double>(cfg.window));
}

}  // namespace scasnn
