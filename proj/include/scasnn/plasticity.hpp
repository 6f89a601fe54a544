#pragma once

// Expansion sizing and relatedness-driven reuse of old units.

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "scasnn/network.hpp"
#include "scasnn/similarity.hpp"

namespace scasnn {

struct ExpansionPolicy {
    double alpha = 5.0;
    /// Maximum new units per feature layer.
    std::vector<std::size_t> max_per_layer;

    void validate() const;
};

struct ReuseConfig {
    double beta = 1.0;
    double bias0 = 0.2;
    double bias_slope = 0.1;
    /// bias(l) is clipped to [-bias_clip, bias_clip].
    double bias_clip = 1.0;

    double bias(std::size_t layer) const;
    void validate() const;
};

/// Minimum similarity over old tasks. Throws ContractError when empty.
double association(std::span<const SimilarityRecord> sims);

/// floor(M_l (1 - exp(-alpha A))) per layer.
std::vector<std::size_t> expansion_counts(double association, const ExpansionPolicy& policy);

/// Min-max scaling to [0, 1]; a constant vector maps to 0.5.
std::vector<double> min_max_normalize(std::span<const double> values);

struct UnitRelatedness {
    int population = 0;  // owning task
    std::size_t layer = 0;
    std::size_t unit = 0;
    double r = 0.0;
    double grad_accum = 0.0;
    double rho = 0.0;
    bool pruned = false;
};

struct PruneRate {
    int population = 0;
    std::size_t units = 0;
    std::size_t pruned = 0;
    double rate() const { return units ? static_cast<double>(pruned) / static_cast<double>(units) : 0.0; }
};

/// Relatedness of every old feature unit to the task being learned.
class RelatednessState {
public:
    RelatednessState() = default;
    /// One entry per old unit active under `task`'s mask, R = 0 and
    /// rho = beta - S(owner) + bias(layer).
    RelatednessState(const DynamicNetwork& net, int task, std::span<const SimilarityRecord> sims,
                     const ReuseConfig& cfg);

    int task() const { return task_; }
    std::vector<UnitRelatedness>& units() { return units_; }
    const std::vector<UnitRelatedness>& units() const { return units_; }

    /// Adds sum |g| of each unit's input synapses under the task mask.
    /// `layer_grads[l]` is the gradient of feature layer l's weights.
    void accumulate(const DynamicNetwork& net, std::span<const Tensor> layer_grads);

    /// Normalized accumulators of the unpruned units of `layer`, in units() order.
    std::vector<double> normalize_gradients(std::size_t layer) const;

    /// R = 0.99 R - exp(-epoch / 2) (2 Norm(G) - rho) for every unpruned unit;
    /// returns those with R < 0 and clears the accumulators.
    std::vector<std::size_t> update(std::size_t epoch);

    /// Per owning population: old units and how many are pruned.
    std::vector<PruneRate> prune_rates(const DynamicNetwork& net) const;

private:
    int task_ = 0;
    std::vector<UnitRelatedness> units_;
};

/// Disconnects the listed entries (indices into state.units()) from the
/// task's own units and head, and marks them pruned.
void apply_pruning(DynamicNetwork& net, RelatednessState& state, std::span<const std::size_t> doomed);

}  // namespace scasnn
