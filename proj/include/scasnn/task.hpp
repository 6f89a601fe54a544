#pragma once

#include <vector>

#include "scasnn/tensor.hpp"

namespace scasnn {

struct Sample {
    Tensor input;  // C x H x W, values in [0, 1]
    int label = 0;
    int task = 0;
};

struct TaskDescriptor {
    int id = 0;
    std::vector<int> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;
    /// Labels are scoped to this task (permuted and rotated streams reuse
    /// the same label set under distinct task ids).
    bool namespaced_labels = false;
};

}  // namespace scasnn
