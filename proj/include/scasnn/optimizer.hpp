#pragma once

#include <cstddef>
#include <vector>

#include "scasnn/tensor.hpp"

namespace scasnn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Adam with per-slot moment state. Entries whose trainable mask is 0 are
/// skipped entirely, so their values stay bit-identical.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    void step(std::size_t slot, Tensor& param, const Tensor& grad, const Tensor* trainable = nullptr);

private:
    struct Slot {
        Tensor m;
        Tensor v;
        std::size_t t = 0;
    };
    AdamConfig cfg_;
    std::vector<Slot> slots_;
};

}  // namespace scasnn
