#include "scasnn/plasticity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scasnn/errors.hpp"

namespace scasnn {

void ExpansionPolicy::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("expansion: alpha must be positive");
}

double ReuseConfig::bias(std::size_t layer) const {
    return std::clamp(bias0 - bias_slope * static_cast<double>(layer), -bias_clip, bias_clip);
}

void ReuseConfig::validate() const {
    if (!std::isfinite(beta) || !std::isfinite(bias0) || !std::isfinite(bias_slope) || !(bias_clip >= 0.0))
        throw ConfigError("reuse: beta, bias0, bias_slope and bias_clip must be finite");
}

double association(std::span<const SimilarityRecord> sims) {
    if (sims.empty()) throw ContractError("association: no old tasks to compare against");
    double a = sims[0].s;
    for (const auto& r : sims) a = std::min(a, r.s);
    return a;
}

std::vector<std::size_t> expansion_counts(double association, const ExpansionPolicy& policy) {
    policy.validate();
    const double a = std::clamp(association, 0.0, 1.0);
    const double share = 1.0 - std::exp(-policy.alpha * a);
    std::vector<std::size_t> out;
    for (std::size_t m : policy.max_per_layer)
        out.push_back(static_cast<std::size_t>(std::floor(static_cast<double>(m) * share)));
    return out;
}

std::vector<double> min_max_normalize(std::span<const double> values) {
    if (values.empty()) return {};
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    std::vector<double> out(values.size(), 0.5);
    if (*hi > *lo)
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / (*hi - *lo);
    return out;
}

RelatednessState::RelatednessState(const DynamicNetwork& net, int task, std::span<const SimilarityRecord> sims,
                                   const ReuseConfig& cfg)
    : task_(task) {
    cfg.validate();
    const TaskMask& m = net.mask(task);
    for (const auto& p : net.populations()) {
        if (p.task >= task || p.layer >= net.layer_count()) continue;
        auto rec = std::find_if(sims.begin(), sims.end(), [&](const auto& r) { return r.old_task == p.task; });
        if (rec == sims.end())
            throw ContractError("relatedness: no similarity record for task " + std::to_string(p.task));
        for (std::size_t u = p.begin; u < p.end; ++u)
            if (m.active[p.layer][u]) units_.push_back({p.task, p.layer, u, 0.0, 0.0, cfg.beta - rec->s + cfg.bias(p.layer)});
    }
}

void RelatednessState::accumulate(const DynamicNetwork& net, std::span<const Tensor> layer_grads) {
    if (layer_grads.size() != net.layer_count()) throw ContractError("relatedness: one gradient per layer expected");
    const TaskMask& m = net.mask(task_);
    for (auto& u : units_) {
        if (u.pruned) continue;
        const std::size_t in = net.input_units(u.layer), f = net.fan(u.layer);
        const Tensor& g = layer_grads[u.layer];
        const Bits& bits = m.connections[u.layer];
        double s = 0.0;
        for (std::size_t c = 0; c < in; ++c) {
            if (!bits[u.unit * in + c]) continue;
            const double* p = g.data() + (u.unit * in + c) * f;
            for (std::size_t r = 0; r < f; ++r) s += std::abs(p[r]);
        }
        u.grad_accum += s;
    }
}

std::vector<double> RelatednessState::normalize_gradients(std::size_t layer) const {
    std::vector<double> acc;
    for (const auto& u : units_)
        if (!u.pruned && u.layer == layer) acc.push_back(u.grad_accum);
    return min_max_normalize(acc);
}

std::vector<std::size_t> RelatednessState::update(std::size_t epoch) {
    std::vector<std::size_t> doomed;
    const double decay = std::exp(-static_cast<double>(epoch) / 2.0);
    std::size_t layers = 0;
    for (const auto& u : units_) layers = std::max(layers, u.layer + 1);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto norm = normalize_gradients(l);
        std::size_t k = 0;
        for (std::size_t i = 0; i < units_.size(); ++i) {
            auto& u = units_[i];
            if (u.pruned || u.layer != l) continue;
            u.r = 0.99 * u.r - decay * (2.0 * norm[k++] - u.rho);
            if (u.r < 0.0) doomed.push_back(i);
        }
    }
    for (auto& u : units_) u.grad_accum = 0.0;
    std::sort(doomed.begin(), doomed.end());
    return doomed;
}

std::vector<PruneRate> RelatednessState::prune_rates(const DynamicNetwork& net) const {
    std::vector<PruneRate> out;
    for (const auto& p : net.populations()) {
        if (p.task >= task_ || p.layer >= net.layer_count()) continue;
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& r) { return r.population == p.task; });
        if (it == out.end()) it = out.insert(out.end(), PruneRate{p.task, 0, 0});
        it->units += p.size();
    }
    for (const auto& u : units_)
        if (u.pruned)
            for (auto& r : out)
                if (r.population == u.population) ++r.pruned;
    return out;
}

void apply_pruning(DynamicNetwork& net, RelatednessState& state, std::span<const std::size_t> doomed) {
    if (doomed.empty()) return;
    std::vector<Connection> edges;
    for (std::size_t i : doomed) {
        auto& u = state.units().at(i);
        if (u.population >= state.task())
            throw ContractError("apply_pruning: unit " + std::to_string(u.unit) + " is not an old unit");
        if (u.pruned) continue;
        auto out = net.outgoing_to_task(state.task(), u.layer, u.unit);
        edges.insert(edges.end(), out.begin(), out.end());
        u.pruned = true;
    }
    net.prune_connections(state.task(), edges);
    // Units left without any route to the head are disconnected as well.
    const TaskMask& m = net.mask(state.task());
    for (auto& u : state.units())
        if (!m.active[u.layer][u.unit]) u.pruned = true;
}

}  // namespace scasnn
