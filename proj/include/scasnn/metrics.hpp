#pragma once

// Active-structure counts, FLOPs, energy and forgetting.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "scasnn/network.hpp"

namespace scasnn {

struct ActiveCounts {
    /// Weights reachable under the mask, head included.
    std::uint64_t connections = 0;
    /// Active feature units plus the task's output units.
    std::uint64_t neurons = 0;
};

ActiveCounts count_active(const DynamicNetwork& net, const TaskMask& mask, std::size_t classes);
ActiveCounts count_active(const DynamicNetwork& net, int task);

/// Multiply-accumulates of one forward step, per feature layer and then the
/// head. Convolutions count every output position.
std::vector<std::uint64_t> layer_flops(const DynamicNetwork& net, const TaskMask& mask, std::size_t classes);
std::uint64_t flops_estimate(const DynamicNetwork& net, const TaskMask& mask, std::size_t classes);
std::uint64_t flops_estimate(const DynamicNetwork& net, int task);

enum class EnergyMode { Snn, Dnn };

struct EnergyConfig {
    double e_ac = 0.9;   // pJ per accumulate
    double e_mac = 4.6;  // pJ per multiply-accumulate
    std::size_t window = 4;
};

/// snn: flops * e_ac * window; dnn: flops * e_mac. In pJ.
double energy(std::uint64_t flops, EnergyMode mode, const EnergyConfig& cfg);

struct EnergyReport {
    int task = 0;
    std::uint64_t connections = 0;
    std::uint64_t neurons = 0;
    std::uint64_t flops = 0;
    double energy_pj = 0.0;
    EnergyMode mode = EnergyMode::Snn;
    double e_ac = 0.0;
    double e_mac = 0.0;
    std::size_t window = 0;
    double pruning_rate = 0.0;
};

EnergyReport energy_report(const DynamicNetwork& net, int task, EnergyMode mode, const EnergyConfig& cfg,
                           double pruning_rate);

/// entries[i][j]: accuracy on task j after learning task i, j <= i.
using AccuracyMatrix = std::vector<std::vector<double>>;

struct Forgetting {
    std::vector<double> per_task;
    double average = 0.0;
};

/// Best earlier accuracy minus final accuracy for every task but the last.
Forgetting forgetting(const AccuracyMatrix& m);

}  // namespace scasnn
