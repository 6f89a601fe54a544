#include "scasnn/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

constexpr double kFloor = 1e-9;

double distance(const double* x, const double* a, std::size_t a_width, std::size_t width) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
        const double d = x[j] - (j < a_width ? a[j] : 0.0);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

void SimilarityConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("similarity: gamma must lie in (0, 1)");
}

FeatureAnchor compute_anchors(int task, const Tensor& features, std::span<const std::size_t> class_index,
                              std::size_t classes) {
    if (features.rank() != 2 || features.dim(0) != class_index.size())
        throw DimensionError("compute_anchors: " + shape_string(features.shape()) + " features for " +
                             std::to_string(class_index.size()) + " labels");
    if (classes == 0) throw DataError("compute_anchors: task has no classes");
    const std::size_t w = features.dim(1);
    Tensor sums({classes, w});
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < class_index.size(); ++i) {
        const std::size_t c = class_index[i];
        if (c >= classes) throw DataError("compute_anchors: class index " + std::to_string(c) + " out of range");
        ++counts[c];
        for (std::size_t j = 0; j < w; ++j) sums[c * w + j] += features[i * w + j];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) throw DataError("compute_anchors: class " + std::to_string(c) + " has no samples");
        for (std::size_t j = 0; j < w; ++j) sums[c * w + j] /= static_cast<double>(counts[c]);
    }
    if (!sums.all_finite()) throw DataError("compute_anchors: non-finite features");
    return {task, std::move(sums)};
}

KLEstimate kl_estimate(const Tensor& new_features, std::span<const std::size_t> class_index,
                       const FeatureAnchor& anchors_p, const Tensor& anchors_tp, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0 + 1e-15)) throw ConfigError("kl_estimate: gamma must lie in (0, 1]");
    if (anchors_p.means.empty() || anchors_tp.empty()) throw ContractError("kl_estimate: empty anchor set");
    if (new_features.rank() != 2 || new_features.dim(0) != class_index.size())
        throw DimensionError("kl_estimate: features do not match labels");
    const std::size_t w = new_features.dim(1);
    if (anchors_tp.rank() != 2 || anchors_tp.dim(1) != w || anchors_p.means.rank() != 2 ||
        anchors_p.means.dim(1) > w)
        throw DimensionError("kl_estimate: anchor widths " + shape_string(anchors_p.means.shape()) + ", " +
                             shape_string(anchors_tp.shape()) + " for feature width " + std::to_string(w));
    const std::size_t kp = anchors_p.means.dim(0), pw = anchors_p.means.dim(1), kt = anchors_tp.dim(0);

    // Distances are pooled over all samples before the log: rate features
    // often collapse a whole class onto one spike pattern, which would make a
    // per-class ratio hinge on the floor.
    double near_sum = 0.0, own_sum = 0.0;
    std::vector<std::uint8_t> present(kt, 0);
    for (std::size_t i = 0; i < class_index.size(); ++i) {
        const std::size_t c = class_index[i];
        if (c >= kt) throw DataError("kl_estimate: class index " + std::to_string(c) + " has no anchor");
        const double* x = new_features.data() + i * w;
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kp; ++k)
            nearest = std::min(nearest, distance(x, anchors_p.means.data() + k * pw, pw, w));
        near_sum += nearest;
        own_sum += distance(x, anchors_tp.data() + c * w, w, w);
        present[c] = 1;
    }
    KLEstimate out;
    const double n = static_cast<double>(class_index.size());
    const double near = n ? near_sum / n : 0.0, own = n ? own_sum / n : 0.0;
    if (near < kFloor && own < kFloor) {
        out.degenerate = true;
        return out;
    }
    const auto classes = static_cast<double>(std::count(present.begin(), present.end(), 1));
    out.kl = classes * std::log(std::max(near, kFloor) / (gamma * std::max(own, kFloor)));
    return out;
}

double similarity_score(double kl, SimilarityMap map) {
    if (map == SimilarityMap::Literal) return std::min(kl, 1.0 - std::exp(2.0 * kl));
    return std::clamp(1.0 - std::exp(-2.0 * std::max(kl, 0.0)), 0.0, 1.0);
}

std::vector<std::size_t> class_indices(const TaskDescriptor& task, std::span<const Sample* const> samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) {
        auto it = std::find(task.classes.begin(), task.classes.end(), s->label);
        if (it == task.classes.end())
            throw DataError("label " + std::to_string(s->label) + " is not a class of task " +
                            std::to_string(task.id));
        out.push_back(static_cast<std::size_t>(it - task.classes.begin()));
    }
    return out;
}

std::vector<const Sample*> probe_subset(std::span<const Sample> samples, std::size_t limit) {
    std::vector<const Sample*> out;
    const std::size_t n = samples.size(), k = limit == 0 ? n : std::min(n, limit);
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(&samples[i * n / k]);
    return out;
}

std::vector<SimilarityRecord> similarity_vector(const DynamicNetwork& net, const TaskDescriptor& task,
                                                const SimilarityConfig& cfg, const LIFConfig& lif) {
    cfg.validate();
    std::vector<SimilarityRecord> out;
    const int old_tasks = std::min(task.id, static_cast<int>(net.task_count()));
    if (old_tasks <= 0) return out;
    if (task.train.empty()) throw DataError("similarity_vector: task " + std::to_string(task.id) + " has no data");

    const auto probe = probe_subset(task.train, cfg.probe);
    const auto labels = class_indices(task, probe);
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < task.classes.size(); ++c)
        if (std::find(labels.begin(), labels.end(), c) != labels.end()) present.push_back(c);
    // Renumber so anchors_tp only holds classes the probe actually contains.
    std::vector<std::size_t> local(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        local[i] = static_cast<std::size_t>(std::find(present.begin(), present.end(), labels[i]) - present.begin());

    for (int p = 0; p < old_tasks; ++p) {
        const Tensor feats = extract_features(net, probe, p, lif);
        const FeatureAnchor tp = compute_anchors(task.id, feats, local, present.size());
        const KLEstimate est = kl_estimate(feats, local, net.anchor(p), tp.means, cfg.gamma);
        out.push_back({task.id, p, est.kl, similarity_score(est.kl, cfg.map), cfg.gamma, cfg.map, est.degenerate});
    }
    return out;
}

}  // namespace scasnn
