#include "scasnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scasnn/errors.hpp"

namespace scasnn {

void Architecture::validate() const {
    if (input.size() != 3 || shape_size(input) == 0)
        throw ConfigError("architecture: input must be C x H x W with positive extents");
    if (layers.empty()) throw ConfigError("architecture: at least one feature layer is required");
    std::size_t h = input[1], w = input[2];
    bool seen_dense = false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& spec = layers[l];
        const std::string where = "architecture: layer " + std::to_string(l);
        if (spec.units == 0) throw ConfigError(where + " has zero units");
        if (spec.kind == LayerKind::Dense) {
            seen_dense = true;
            h = w = 1;
            continue;
        }
        if (seen_dense) throw ConfigError(where + " is convolutional after a dense layer");
        if (spec.kernel == 0 || spec.stride == 0) throw ConfigError(where + " needs positive kernel and stride");
        const std::size_t sh = h + 2 * spec.padding, sw = w + 2 * spec.padding;
        if (sh < spec.kernel || sw < spec.kernel || (sh - spec.kernel) % spec.stride ||
            (sw - spec.kernel) % spec.stride)
            throw ConfigError(where + " has a non-integral output extent");
        h = (sh - spec.kernel) / spec.stride + 1;
        w = (sw - spec.kernel) / spec.stride + 1;
    }
    if (!(init_gain > 0.0) || !(head_init_std >= 0.0)) throw ConfigError("architecture: bad init scales");
}

Tensor stack_inputs(std::span<const Sample* const> samples) {
    if (samples.empty()) throw ContractError("stack_inputs: empty batch");
    const Shape& s = samples[0]->input.shape();
    Shape batch{samples.size()};
    batch.insert(batch.end(), s.begin(), s.end());
    Tensor out(batch);
    const std::size_t per = samples[0]->input.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->input.shape() != s)
            throw DimensionError("stack_inputs: sample shapes differ, " + shape_string(s) + " vs " +
                                 shape_string(samples[i]->input.shape()));
        std::copy_n(samples[i]->input.data(), per, out.data() + i * per);
    }
    return out;
}

Tensor extract_features(const DynamicNetwork& net, std::span<const Sample* const> samples, int task,
                        const LIFConfig& cfg, std::size_t batch) {
    if (batch == 0 || samples.empty()) throw ContractError("extract_features: empty batch");
    const std::size_t fw = net.feature_width();
    Tensor out({samples.size(), fw});
    for (std::size_t i = 0; i < samples.size(); i += batch) {
        const auto part = samples.subspan(i, std::min(batch, samples.size() - i));
        const Tensor f = net.extract_features(stack_inputs(part), task, cfg);
        std::copy(f.values().begin(), f.values().end(), out.data() + i * fw);
    }
    return out;
}

// --- construction --------------------------------------------------------------

void DynamicNetwork::recompute_fans() {
    fan_.clear();
    std::size_t h = arch_.input[1], w = arch_.input[2];
    for (const auto& spec : arch_.layers) {
        if (spec.kind == LayerKind::Conv) {
            fan_.push_back(spec.kernel * spec.kernel);
            h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        } else {
            fan_.push_back(h * w);
            h = w = 1;
        }
    }
    fan_.push_back(h * w);
}

Tensor DynamicNetwork::init_rows(std::size_t rows, std::size_t cols, double std) {
    Tensor t({rows * cols});
    std::normal_distribution<double> nd(0.0, std);
    for (auto& v : t.values()) v = nd(rng_);
    return t;
}

DynamicNetwork DynamicNetwork::init_first_task(const Architecture& arch, int task, std::span<const int> classes,
                                               std::uint64_t seed) {
    arch.validate();
    if (task != 0) throw ContractError("the first task must have id 0, got " + std::to_string(task));
    DynamicNetwork net;
    net.arch_ = arch;
    net.units_.assign(arch.layers.size(), 0);
    net.weights_.resize(arch.layers.size());
    net.trainable_.resize(arch.layers.size());
    net.seed_ = seed;
    net.rng_.seed(seed);
    net.recompute_fans();
    std::vector<std::size_t> counts;
    for (const auto& l : arch.layers) counts.push_back(l.units);
    net.expand(task, counts, classes);
    return net;
}

std::size_t DynamicNetwork::input_units(std::size_t layer) const {
    return layer == 0 ? arch_.input[0] : units_.at(layer - 1);
}

std::size_t DynamicNetwork::feature_width() const { return units_.back() * fan_.back(); }

void DynamicNetwork::expand(int task, std::span<const std::size_t> counts, std::span<const int> classes) {
    const std::size_t L = layer_count();
    if (task < static_cast<int>(task_count()))
        throw ContractError("expand: task " + std::to_string(task) + " is already present");
    if (task != static_cast<int>(task_count()))
        throw ContractError("expand: tasks must be added in order, expected " + std::to_string(task_count()) +
                            ", got " + std::to_string(task));
    if (counts.size() != L)
        throw ContractError("expand: " + std::to_string(counts.size()) + " counts for " + std::to_string(L) +
                            " layers");
    if (classes.empty()) throw ContractError("expand: task has no classes");

    const std::vector<std::size_t> old_units = units_;
    std::vector<std::size_t> new_units(L);
    for (std::size_t l = 0; l < L; ++l) new_units[l] = old_units[l] + counts[l];
    if (task == 0)
        for (std::size_t l = 0; l < L; ++l)
            if (new_units[l] == 0) throw ConfigError("expand: the first task needs units in every layer");

    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t f = fan_[l];
        const std::size_t in_old = l == 0 ? arch_.input[0] : old_units[l - 1];
        const std::size_t in_new = l == 0 ? arch_.input[0] : new_units[l - 1];
        const std::size_t rows_old = old_units[l], rows_new = new_units[l];
        Shape shape = arch_.layers[l].kind == LayerKind::Conv
                          ? Shape{rows_new, in_new, arch_.layers[l].kernel, arch_.layers[l].kernel}
                          : Shape{rows_new, in_new * f};
        Tensor w(shape), tr(shape);
        for (std::size_t o = 0; o < rows_old; ++o)
            for (std::size_t c = 0; c < in_old; ++c)
                std::copy_n(weights_[l].data() + (o * in_old + c) * f, f, w.data() + (o * in_new + c) * f);
        const std::size_t row_len = in_new * f;
        const double std = arch_.init_gain / std::sqrt(static_cast<double>(row_len));
        if (rows_new > rows_old) {
            Tensor fresh = init_rows(rows_new - rows_old, row_len, std);
            std::copy(fresh.values().begin(), fresh.values().end(), w.data() + rows_old * row_len);
            std::fill(tr.data() + rows_old * row_len, tr.data() + rows_new * row_len, 1.0);
        }
        weights_[l] = std::move(w);
        trainable_[l] = std::move(tr);
    }

    // Heads read the final feature layer; appended units get zero columns.
    const std::size_t hf = fan_.back();
    const std::size_t f_old = old_units.back() * hf, f_new = new_units.back() * hf;
    auto pad_head = [&](TaskHead& h) {
        const std::size_t k = h.classes.size();
        Tensor w({k, f_new});
        for (std::size_t r = 0; r < k; ++r) std::copy_n(h.weights.data() + r * f_old, f_old, w.data() + r * f_new);
        h.weights = std::move(w);
    };
    for (auto& h : heads_) pad_head(h);
    for (auto& h : cil_heads_) pad_head(h);

    for (auto& m : masks_) {
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t in_old = l == 0 ? arch_.input[0] : old_units[l - 1];
            const std::size_t in_new = l == 0 ? arch_.input[0] : new_units[l - 1];
            Bits conn(new_units[l] * in_new, 0);
            for (std::size_t o = 0; o < old_units[l]; ++o)
                std::copy_n(m.connections[l].begin() + o * in_old, in_old, conn.begin() + o * in_new);
            m.connections[l] = std::move(conn);
            m.active[l].resize(new_units[l], 0);
        }
        m.head.resize(new_units.back(), 0);
    }

    std::size_t class_offset = 0;
    for (const auto& h : heads_) class_offset += h.classes.size();
    for (auto& p : populations_) p.frozen = true;

    TaskMask m;
    m.task = task;
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in_new = l == 0 ? arch_.input[0] : new_units[l - 1];
        m.active.emplace_back(new_units[l], 1);
        Bits conn(new_units[l] * in_new, 1);
        for (std::size_t o = 0; o < old_units[l]; ++o) {
            // Old units keep exactly the input wiring of the task that owns them.
            const Bits& src = masks_.at(static_cast<std::size_t>(owner(l, o))).connections[l];
            std::copy_n(src.begin() + o * in_new, in_new, conn.begin() + o * in_new);
        }
        m.connections.push_back(std::move(conn));
        populations_.push_back({task, l, old_units[l], new_units[l], false});
    }
    m.head.assign(new_units.back(), 1);
    populations_.push_back({task, L, class_offset, class_offset + classes.size(), false});

    units_ = new_units;
    refresh_active(m);
    masks_.push_back(std::move(m));

    TaskHead h;
    h.task = task;
    h.classes.assign(classes.begin(), classes.end());
    h.weights = init_rows(classes.size(), f_new, arch_.head_init_std).reshaped({classes.size(), f_new});
    h.bias = Tensor({classes.size()});
    heads_.push_back(h);
    cil_heads_.push_back(std::move(h));
}

// --- lookup -------------------------------------------------------------------

void DynamicNetwork::check_task(int task) const {
    if (task < 0 || task >= static_cast<int>(task_count()))
        throw LookupError("unknown task " + std::to_string(task) + " (network has " + std::to_string(task_count()) +
                          " tasks)");
}

int DynamicNetwork::owner(std::size_t layer, std::size_t unit) const {
    for (const auto& p : populations_)
        if (p.layer == layer && unit >= p.begin && unit < p.end) return p.task;
    throw LookupError("no population holds unit " + std::to_string(unit) + " of layer " + std::to_string(layer));
}

const TaskMask& DynamicNetwork::mask(int task) const {
    check_task(task);
    return masks_[static_cast<std::size_t>(task)];
}

const TaskHead& DynamicNetwork::head(int task, HeadSet set) const {
    check_task(task);
    return set == HeadSet::TaskIncremental ? heads_[static_cast<std::size_t>(task)]
                                           : cil_heads_[static_cast<std::size_t>(task)];
}

TaskHead& DynamicNetwork::head_mut(int task) {
    check_task(task);
    return heads_[static_cast<std::size_t>(task)];
}

TaskHead& DynamicNetwork::cil_head(int task) {
    check_task(task);
    return cil_heads_[static_cast<std::size_t>(task)];
}

void DynamicNetwork::set_anchor(FeatureAnchor anchor) {
    check_task(anchor.task);
    anchors_[anchor.task] = std::move(anchor);
}

const FeatureAnchor& DynamicNetwork::anchor(int task) const {
    auto it = anchors_.find(task);
    if (it == anchors_.end()) throw LookupError("no feature anchor stored for task " + std::to_string(task));
    return it->second;
}

// --- masks --------------------------------------------------------------------

void DynamicNetwork::refresh_active(TaskMask& m) const {
    const std::size_t L = layer_count();
    for (std::size_t l = L; l-- > 0;) {
        Bits& act = m.active[l];
        if (l == L - 1) {
            for (std::size_t j = 0; j < act.size(); ++j) act[j] = act[j] && m.head[j];
        } else {
            const std::size_t out = units_[l + 1];
            const Bits& up = m.connections[l + 1];
            for (std::size_t j = 0; j < act.size(); ++j) {
                bool feeds = false;
                for (std::size_t i = 0; i < out && !feeds; ++i) feeds = up[i * units_[l] + j] != 0;
                act[j] = act[j] && feeds;
            }
        }
        const std::size_t in = input_units(l);
        for (std::size_t i = 0; i < act.size(); ++i)
            if (!act[i]) std::fill_n(m.connections[l].begin() + i * in, in, 0);
    }
    for (std::size_t j = 0; j < m.head.size(); ++j) m.head[j] = m.head[j] && m.active[L - 1][j];
}

Tensor DynamicNetwork::expanded_mask(int task, std::size_t layer) const {
    const TaskMask& m = mask(task);
    const std::size_t L = layer_count();
    if (layer == L) {
        const auto& h = heads_[static_cast<std::size_t>(task)];
        const std::size_t k = h.classes.size(), fw = feature_width(), hf = fan_.back();
        Tensor out({k, fw});
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < units_.back(); ++j)
                if (m.head[j]) std::fill_n(out.data() + r * fw + j * hf, hf, 1.0);
        return out;
    }
    Tensor out(weights_.at(layer).shape());
    const std::size_t f = fan_[layer];
    const Bits& bits = m.connections[layer];
    for (std::size_t e = 0; e < bits.size(); ++e)
        if (bits[e]) std::fill_n(out.data() + e * f, f, 1.0);
    return out;
}

Tensor DynamicNetwork::feature_mask(int task) const {
    const TaskMask& m = mask(task);
    const std::size_t hf = fan_.back();
    Tensor out({feature_width()});
    for (std::size_t j = 0; j < units_.back(); ++j)
        if (m.active.back()[j]) std::fill_n(out.data() + j * hf, hf, 1.0);
    return out;
}

// --- forward ------------------------------------------------------------------

BoundParameters DynamicNetwork::bind_parameters(int task) const {
    check_task(task);
    BoundParameters b;
    b.task = task;
    for (const auto& w : weights_) b.layers.push_back(Var::parameter(w));
    const auto& h = heads_[static_cast<std::size_t>(task)];
    b.head_weights = Var::parameter(h.weights);
    b.head_bias = Var::parameter(h.bias);
    return b;
}

TaskForward DynamicNetwork::forward_task(const Tensor& x, int task, const LIFConfig& cfg,
                                         const BoundParameters* bound) const {
    check_task(task);
    cfg.validate();
    if (bound && bound->task != task) throw ContractError("forward_task: parameters bound for another task");
    Tensor batch = x;
    if (x.rank() == 3) batch = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != arch_.input)
        throw DimensionError("forward_task: input " + shape_string(x.shape()) + " does not match network input " +
                             shape_string(arch_.input));
    const std::size_t n = batch.dim(0), L = layer_count(), fw = feature_width();
    const TaskMask& m = mask(task);

    // Only units active under the mask take part. Inactive units have no
    // input synapses, so under the hard reset they never spike and dropping
    // them leaves every sum unchanged.
    std::vector<std::vector<std::size_t>> act(L);
    bool empty = false;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t u = 0; u < units_[l]; ++u)
            if (m.active[l][u]) act[l].push_back(u);
        empty = empty || act[l].empty();
    }

    Var features, rate_flat;
    if (empty) {
        features = Var::constant(Tensor({n, fw}));
    } else {
        std::vector<Var> eff(L);
        std::vector<std::size_t> inputs(arch_.input[0]);
        for (std::size_t c = 0; c < inputs.size(); ++c) inputs[c] = c;
        for (std::size_t l = 0; l < L; ++l) {
            const auto& in = l ? act[l - 1] : inputs;
            const std::size_t f = fan_[l], in_units = input_units(l);
            std::vector<std::size_t> index;
            index.reserve(act[l].size() * in.size() * f);
            Tensor sub_mask({act[l].size() * in.size() * f});
            for (std::size_t o : act[l])
                for (std::size_t c : in) {
                    const std::size_t e = o * in_units + c;
                    if (m.connections[l][e]) std::fill_n(sub_mask.data() + index.size(), f, 1.0);
                    for (std::size_t r = 0; r < f; ++r) index.push_back(e * f + r);
                }
            const auto& spec = arch_.layers[l];
            Shape shape = spec.kind == LayerKind::Conv ? Shape{act[l].size(), in.size(), spec.kernel, spec.kernel}
                                                       : Shape{act[l].size(), in.size() * f};
            sub_mask = sub_mask.reshaped(shape);
            Var w = bound ? bound->layers.at(l) : Var::constant(weights_[l]);
            eff[l] = mul(gather(w, std::move(index), std::move(shape)), Var::constant(std::move(sub_mask)));
            if (spec.kind == LayerKind::Dense) eff[l] = transpose(eff[l]);
        }

        std::vector<SpikeState> states(L);
        auto step = [&](const Var& in) {
            Var h = in;
            for (std::size_t l = 0; l < L; ++l) {
                const auto& spec = arch_.layers[l];
                Var current;
                if (spec.kind == LayerKind::Conv) {
                    current = conv2d(h, eff[l], spec.stride, spec.padding);
                } else {
                    current = matmul(reshape(h, {n, h.value().size() / n}), eff[l]);
                }
                if (!states[l].membrane.valid()) states[l] = resting_state(current.shape());
                states[l] = lif_step(states[l], current, cfg);
                h = states[l].spikes;
            }
            return h;
        };
        Var rate = run_window(step, Var::constant(batch), cfg);
        rate_flat = rate;

        // Back to full feature width, zero outside the active final units.
        const std::size_t hf = fan_.back(), k = act.back().size();
        std::vector<std::size_t> index;
        index.reserve(n * k * hf);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j : act.back())
                for (std::size_t r = 0; r < hf; ++r) index.push_back(i * fw + j * hf + r);
        features = scatter(rate, std::move(index), {n, fw});
    }

    const auto& h = heads_[static_cast<std::size_t>(task)];
    Var hw = bound ? bound->head_weights : Var::constant(h.weights);
    Var hb = bound ? bound->head_bias : Var::constant(h.bias);
    if (empty) {
        Var eff_head = transpose(mul(hw, Var::constant(expanded_mask(task, L))));
        return {add_bias(matmul(features, eff_head), hb), features};
    }
    // The head reads only the active final units too. A full-width product
    // would regroup the sums whenever later tasks widen the layer.
    const std::size_t hf = fan_.back(), k = act.back().size() * hf, classes = h.classes.size();
    const Tensor full_mask = expanded_mask(task, L);
    std::vector<std::size_t> index;
    index.reserve(classes * k);
    Tensor sub_mask({classes, k});
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t j : act.back())
            for (std::size_t r = 0; r < hf; ++r) {
                sub_mask.data()[index.size()] = full_mask.data()[c * fw + j * hf + r];
                index.push_back(c * fw + j * hf + r);
            }
    Var eff_head = transpose(mul(gather(hw, std::move(index), {classes, k}), Var::constant(std::move(sub_mask))));
    return {add_bias(matmul(reshape(rate_flat, {n, k}), eff_head), hb), features};
}

Tensor DynamicNetwork::extract_features(const Tensor& x, int task, const LIFConfig& cfg) const {
    return forward_task(x, task, cfg).features.value();
}

Tensor DynamicNetwork::head_logits(const Tensor& features, int task, HeadSet set) const {
    const TaskHead& h = head(task, set);
    const std::size_t fw = feature_width(), k = h.classes.size();
    if (features.rank() != 2 || features.dim(1) != fw)
        throw DimensionError("head_logits: features " + shape_string(features.shape()) + " for width " +
                             std::to_string(fw));
    const Tensor m = expanded_mask(task, layer_count());
    const std::size_t n = features.dim(0);
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < k; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < fw; ++j) s += features[i * fw + j] * (h.weights[r * fw + j] * m[r * fw + j]);
            out[i * k + r] = s + h.bias[r];
        }
    return out;
}

// --- pruning ------------------------------------------------------------------

void DynamicNetwork::prune_connections(int task, std::span<const Connection> doomed) {
    check_task(task);
    if (task != current_task())
        throw ContractError("prune_connections: task " + std::to_string(task) +
                            " is complete; its own mask cannot be pruned");
    const std::size_t L = layer_count();
    TaskMask& m = masks_[static_cast<std::size_t>(task)];
    for (const auto& c : doomed) {
        if (c.layer == 0 || c.layer > L)
            throw ContractError("prune_connections: layer " + std::to_string(c.layer) + " has no unit sources");
        if (owner(c.layer - 1, c.src) >= task)
            throw ContractError("prune_connections: source unit " + std::to_string(c.src) + " of layer " +
                                std::to_string(c.layer - 1) + " is not an old unit");
        if (c.layer == L) {
            m.head.at(c.src) = 0;
            continue;
        }
        if (owner(c.layer, c.dst) != task)
            throw ContractError("prune_connections: destination unit " + std::to_string(c.dst) + " of layer " +
                                std::to_string(c.layer) + " belongs to an older task");
        const std::size_t in = input_units(c.layer), f = fan_[c.layer];
        m.connections[c.layer].at(c.dst * in + c.src) = 0;
        std::fill_n(trainable_[c.layer].data() + (c.dst * in + c.src) * f, f, 0.0);
    }
    refresh_active(m);
}

std::vector<Connection> DynamicNetwork::outgoing_to_task(int task, std::size_t layer, std::size_t unit) const {
    const TaskMask& m = mask(task);
    const std::size_t L = layer_count();
    std::vector<Connection> out;
    if (layer + 1 == L) {
        if (m.head.at(unit)) out.push_back({L, unit, 0});
        return out;
    }
    const std::size_t in = units_.at(layer);
    for (const auto& p : populations_) {
        if (p.task != task || p.layer != layer + 1) continue;
        for (std::size_t d = p.begin; d < p.end; ++d)
            if (m.connections[layer + 1][d * in + unit]) out.push_back({layer + 1, unit, d});
    }
    return out;
}

}  // namespace scasnn
