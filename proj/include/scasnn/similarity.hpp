#pragma once

// Task similarity from stored per-class feature anchors.

#include <cstddef>
#include <span>
#include <vector>

#include "scasnn/feature_anchor.hpp"
#include "scasnn/network.hpp"
#include "scasnn/task.hpp"

namespace scasnn {

enum class SimilarityMap {
    /// clamp(1 - exp(-2 max(kl, 0)), 0, 1)
    Clamped,
    /// min(kl, 1 - exp(2 kl)), kept for fidelity comparisons.
    Literal,
};

struct SimilarityConfig {
    double gamma = 0.999;
    SimilarityMap map = SimilarityMap::Clamped;
    /// New-task training samples fed through each old mask; 0 uses all of
    /// them, which keeps the new class means on the same sample set as the
    /// stored anchors when a task repeats.
    std::size_t probe = 0;

    void validate() const;
};

struct SimilarityRecord {
    int new_task = 0;
    int old_task = 0;
    double kl = 0.0;
    double s = 0.0;
    double gamma = 0.0;
    SimilarityMap map = SimilarityMap::Clamped;
    bool degenerate = false;
};

struct KLEstimate {
    double kl = 0.0;
    /// Every sample sat on both its nearest old anchor and its own class mean.
    bool degenerate = false;
};

/// Per-class means of `features` (N x width); class_index[i] < classes.
/// Throws DataError naming an empty class.
FeatureAnchor compute_anchors(int task, const Tensor& features, std::span<const std::size_t> class_index,
                              std::size_t classes);

/// K log(D / (gamma d)) for the K classes present, where D is the mean
/// distance of a sample to its nearest old anchor and d the mean distance to
/// its own class mean in anchors_tp. Both are floored at 1e-9. Old anchors
/// narrower than the features are zero-padded.
KLEstimate kl_estimate(const Tensor& new_features, std::span<const std::size_t> class_index,
                       const FeatureAnchor& anchors_p, const Tensor& anchors_tp, double gamma);

double similarity_score(double kl, SimilarityMap map = SimilarityMap::Clamped);

/// One record per old task p < t, computed from a strided probe subset of
/// the new task's training data under mask p. Empty when t has no
/// predecessors.
std::vector<SimilarityRecord> similarity_vector(const DynamicNetwork& net, const TaskDescriptor& task,
                                                const SimilarityConfig& cfg, const LIFConfig& lif);

/// Indices of the class of every sample in task.classes.
std::vector<std::size_t> class_indices(const TaskDescriptor& task, std::span<const Sample* const> samples);

/// Evenly strided subset of at most `limit` samples (0: all).
std::vector<const Sample*> probe_subset(std::span<const Sample> samples, std::size_t limit);

}  // namespace scasnn
