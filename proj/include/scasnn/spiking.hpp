#pragma once

#include <cstddef>
#include <functional>

#include "scasnn/autodiff.hpp"

namespace scasnn {

enum class ResetMode {
    /// U_t = tau * U_{t-1} * (1 - O_{t-1}) + I_t
    Hard,
    /// U_t = tau * (1 - U_{t-1}) + I_t, kept for fidelity comparisons.
    Literal,
};

enum class SpikeForward {
    Heaviside,
    /// Antiderivative of the surrogate, so finite differences can see the
    /// same derivative that backward() injects. Only for gradient checks.
    Smoothed,
};

struct LIFConfig {
    double tau = 0.2;
    double v_th = 0.5;
    double lambda = 2.0;
    std::size_t window = 4;
    ResetMode reset = ResetMode::Hard;
    SpikeForward spike = SpikeForward::Heaviside;

    /// Throws ConfigError unless tau in (0,1], v_th > 0, lambda > 0, window >= 1.
    void validate() const;
};

struct SpikeState {
    Var membrane;
    Var spikes;
};

/// Zero membrane and no spikes.
SpikeState resting_state(const Shape& shape);

SpikeState lif_step(const SpikeState& prev, const Var& input_current, const LIFConfig& cfg);

/// Surrogate spike derivative at a threshold-centered potential u:
/// lambda - lambda^2 |u| inside |u| <= 1/lambda, zero outside.
double surrogate_grad(double u_centered, double lambda);
Tensor surrogate_grad(const Tensor& u_centered, double lambda);

/// Spike nonlinearity on the raw membrane; backward uses surrogate_grad(U - v_th).
Var spike(const Var& membrane, const LIFConfig& cfg);

/// Unrolls `step` for cfg.window timesteps, presenting the same input each
/// time, and returns the mean of the step outputs. `step` owns its layer state.
Var run_window(const std::function<Var(const Var&)>& step, const Var& input, const LIFConfig& cfg);

}  // namespace scasnn
