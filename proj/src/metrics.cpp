#include "scasnn/metrics.hpp"

#include <algorithm>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

std::uint64_t ones(const Bits& b) { return static_cast<std::uint64_t>(std::count(b.begin(), b.end(), 1)); }

// Output positions per feature layer.
std::vector<std::uint64_t> output_positions(const Architecture& arch) {
    std::vector<std::uint64_t> out;
    std::size_t h = arch.input[1], w = arch.input[2];
    for (const auto& l : arch.layers) {
        if (l.kind == LayerKind::Conv) {
            h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
            w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        } else {
            h = w = 1;
        }
        out.push_back(h * w);
    }
    return out;
}

void check_mask(const DynamicNetwork& net, const TaskMask& m) {
    const std::size_t L = net.layer_count();
    if (m.active.size() != L || m.connections.size() != L || m.head.size() != net.layer_units(L - 1))
        throw DimensionError("mask does not match the network's layers");
    for (std::size_t l = 0; l < L; ++l)
        if (m.active[l].size() != net.layer_units(l) ||
            m.connections[l].size() != net.layer_units(l) * net.input_units(l))
            throw DimensionError("mask layer " + std::to_string(l) + " does not match the network");
}

}  // namespace

ActiveCounts count_active(const DynamicNetwork& net, const TaskMask& m, std::size_t classes) {
    check_mask(net, m);
    ActiveCounts c;
    const std::size_t L = net.layer_count();
    for (std::size_t l = 0; l < L; ++l) {
        c.connections += ones(m.connections[l]) * net.fan(l);
        c.neurons += ones(m.active[l]);
    }
    c.connections += ones(m.head) * net.feature_fan() * classes;
    c.neurons += classes;
    return c;
}

ActiveCounts count_active(const DynamicNetwork& net, int task) {
    return count_active(net, net.mask(task), net.head(task).classes.size());
}

std::vector<std::uint64_t> layer_flops(const DynamicNetwork& net, const TaskMask& m, std::size_t classes) {
    check_mask(net, m);
    const auto pos = output_positions(net.architecture());
    std::vector<std::uint64_t> out;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const bool conv = net.architecture().layers[l].kind == LayerKind::Conv;
        out.push_back(ones(m.connections[l]) * net.fan(l) * (conv ? pos[l] : 1));
    }
    out.push_back(ones(m.head) * net.feature_fan() * classes);
    return out;
}

std::uint64_t flops_estimate(const DynamicNetwork& net, const TaskMask& m, std::size_t classes) {
    std::uint64_t total = 0;
    for (auto f : layer_flops(net, m, classes)) total += f;
    return total;
}

std::uint64_t flops_estimate(const DynamicNetwork& net, int task) {
    return flops_estimate(net, net.mask(task), net.head(task).classes.size());
}

double energy(std::uint64_t flops, EnergyMode mode, const EnergyConfig& cfg) {
    const double f = static_cast<double>(flops);
    return mode == EnergyMode::Snn ? f * cfg.e_ac * static_cast<double>(cfg.window) : f * cfg.e_mac;
}

EnergyReport energy_report(const DynamicNetwork& net, int task, EnergyMode mode, const EnergyConfig& cfg,
                           double pruning_rate) {
    if (!(pruning_rate >= 0.0 && pruning_rate <= 1.0)) throw ContractError("energy_report: pruning rate outside [0, 1]");
    const auto counts = count_active(net, task);
    EnergyReport r;
    r.task = task;
    r.connections = counts.connections;
    r.neurons = counts.neurons;
    r.flops = flops_estimate(net, task);
    r.energy_pj = energy(r.flops, mode, cfg);
    r.mode = mode;
    r.e_ac = cfg.e_ac;
    r.e_mac = cfg.e_mac;
    r.window = cfg.window;
    r.pruning_rate = pruning_rate;
    return r;
}

Forgetting forgetting(const AccuracyMatrix& m) {
    Forgetting f;
    if (m.size() < 2) return f;
    const auto& last = m.back();
    for (std::size_t j = 0; j + 1 < m.size(); ++j) {
        double best = 0.0;
        for (std::size_t i = j; i + 1 < m.size(); ++i) {
            if (m[i].size() <= j) throw DimensionError("accuracy matrix row " + std::to_string(i) + " is too short");
            best = std::max(best, m[i][j]);
        }
        f.per_task.push_back(best - last.at(j));
    }
    for (double v : f.per_task) f.average += v;
    f.average /= static_cast<double>(f.per_task.size());
    return f;
}

}  // namespace scasnn
