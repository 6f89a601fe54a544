#pragma once

#include "scasnn/tensor.hpp"

namespace scasnn {

/// Per-class mean feature vectors of a completed task: means is
/// classes x feature-width, row k belonging to the task's k-th class.
struct FeatureAnchor {
    int task = 0;
    Tensor means;

    friend bool operator==(const FeatureAnchor&, const FeatureAnchor&) = default;
};

}  // namespace scasnn
