#pragma once

// Expandable layered SNN with per-task populations, connectivity masks and heads.
//
// Units are channels for convolutional layers and neurons for dense layers.
// Every feature layer stores one dense weight tensor covering all units ever
// created; a task sees it through its TaskMask. Units of a task never gain
// input synapses after that task completes, so an old task's pathway is
// bit-identical no matter what later tasks do.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "scasnn/autodiff.hpp"
#include "scasnn/binary_io.hpp"
#include "scasnn/feature_anchor.hpp"
#include "scasnn/spiking.hpp"
#include "scasnn/task.hpp"

namespace scasnn {

enum class LayerKind { Conv, Dense };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t units = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
    Shape input;  // C x H x W
    std::vector<LayerSpec> layers;
    /// Std of new input synapses is init_gain / sqrt(fan-in).
    double init_gain = 2.0;
    double head_init_std = 0.05;

    void validate() const;
    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NeuronPopulation {
    int task = 0;
    /// Feature layers are 0..L-1; layer L is the head layer.
    std::size_t layer = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool frozen = false;

    std::size_t size() const { return end - begin; }
    friend bool operator==(const NeuronPopulation&, const NeuronPopulation&) = default;
};

using Bits = std::vector<std::uint8_t>;

struct TaskMask {
    int task = 0;
    /// Per feature layer, one bit per unit.
    std::vector<Bits> active;
    /// Per feature layer, out_units x in_units bits; layer 0's inputs are the
    /// input channels.
    std::vector<Bits> connections;
    /// Final feature layer units wired into this task's head.
    Bits head;

    friend bool operator==(const TaskMask&, const TaskMask&) = default;
};

struct TaskHead {
    int task = 0;
    std::vector<int> classes;
    Tensor weights;  // classes x feature-width
    Tensor bias;     // classes

    friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

/// Connection from an old unit to a unit owned by the task being pruned.
/// `layer` is the destination layer; layer == layer_count() means the head,
/// in which case `dst` is ignored.
struct Connection {
    std::size_t layer = 0;
    std::size_t src = 0;
    std::size_t dst = 0;

    friend bool operator<(const Connection& a, const Connection& b) {
        return std::tie(a.layer, a.src, a.dst) < std::tie(b.layer, b.src, b.dst);
    }
};

/// Parameter leaves for one graph-recording forward pass.
struct BoundParameters {
    int task = 0;
    std::vector<Var> layers;
    Var head_weights;
    Var head_bias;
};

struct TaskForward {
    Var logits;    // N x |C_t|
    Var features;  // N x feature-width, zero outside the task's active units
};

enum class HeadSet { TaskIncremental, ClassIncremental };

class DynamicNetwork {
public:
    /// One population per feature layer plus the task-0 head, all trainable,
    /// mask 0 fully dense.
    static DynamicNetwork init_first_task(const Architecture& arch, int task, std::span<const int> classes,
                                          std::uint64_t seed);

    /// Adds `counts[l]` units to every feature layer for a new task, fully
    /// connected to all units of the layer below, and a head. Older units
    /// are frozen.
    void expand(int task, std::span<const std::size_t> counts, std::span<const int> classes);

    TaskForward forward_task(const Tensor& x, int task, const LIFConfig& cfg,
                             const BoundParameters* bound = nullptr) const;
    /// Untaped features under `task`'s mask.
    Tensor extract_features(const Tensor& x, int task, const LIFConfig& cfg) const;
    /// Head logits on precomputed features.
    Tensor head_logits(const Tensor& features, int task, HeadSet set = HeadSet::TaskIncremental) const;

    BoundParameters bind_parameters(int task) const;

    /// Clears connection bits of `task`'s mask, then drops units that no
    /// longer reach the head. Only the newest task may be pruned and only
    /// connections from older units into units the task owns.
    void prune_connections(int task, std::span<const Connection> doomed);
    /// Every connection from old unit `unit` of feature layer `layer` into
    /// `task`-owned units of the next layer (or the head).
    std::vector<Connection> outgoing_to_task(int task, std::size_t layer, std::size_t unit) const;

    // --- structure ---------------------------------------------------------
    const Architecture& architecture() const { return arch_; }
    std::size_t layer_count() const { return arch_.layers.size(); }
    std::size_t layer_units(std::size_t layer) const { return units_.at(layer); }
    std::size_t input_units(std::size_t layer) const;
    /// Weight entries per (destination unit, source unit) connection.
    std::size_t fan(std::size_t layer) const { return fan_.at(layer); }
    std::size_t feature_width() const;
    std::size_t feature_fan() const { return fan_.back(); }
    std::size_t task_count() const { return masks_.size(); }
    int current_task() const { return static_cast<int>(masks_.size()) - 1; }

    const std::vector<NeuronPopulation>& populations() const { return populations_; }
    int owner(std::size_t layer, std::size_t unit) const;
    const TaskMask& mask(int task) const;
    const TaskHead& head(int task, HeadSet set = HeadSet::TaskIncremental) const;
    TaskHead& cil_head(int task);

    const Tensor& weights(std::size_t layer) const { return weights_.at(layer); }
    Tensor& weights(std::size_t layer) { return weights_.at(layer); }
    const Tensor& trainable(std::size_t layer) const { return trainable_.at(layer); }
    TaskHead& head_mut(int task);

    /// Weight-shaped 0/1 tensor of `task`'s connection bits for a layer, or
    /// for the head when layer == layer_count().
    Tensor expanded_mask(int task, std::size_t layer) const;
    /// feature-width 0/1 vector of active final-layer units.
    Tensor feature_mask(int task) const;

    void set_anchor(FeatureAnchor anchor);
    const FeatureAnchor& anchor(int task) const;
    bool has_anchor(int task) const { return anchors_.count(task) != 0; }

    void save(std::ostream& out) const;
    static DynamicNetwork load(std::istream& in);
    void write(BinaryWriter& out) const;
    static DynamicNetwork read(BinaryReader& in);
    friend bool operator==(const DynamicNetwork& a, const DynamicNetwork& b);

private:
    DynamicNetwork() = default;
    void check_task(int task) const;
    void refresh_active(TaskMask& m) const;
    void recompute_fans();
    Tensor init_rows(std::size_t rows, std::size_t cols, double std);

    Architecture arch_;
    std::vector<std::size_t> units_;
    std::vector<std::size_t> fan_;  // per feature layer; back() is the head's fan
    std::vector<Tensor> weights_;
    std::vector<Tensor> trainable_;
    std::vector<NeuronPopulation> populations_;
    std::vector<TaskMask> masks_;
    std::vector<TaskHead> heads_;
    std::vector<TaskHead> cil_heads_;
    std::map<int, FeatureAnchor> anchors_;
    std::uint64_t seed_ = 0;
    std::mt19937_64 rng_;
};

/// Concatenates samples into an N x C x H x W batch.
Tensor stack_inputs(std::span<const Sample* const> samples);

/// extract_features over any number of samples, `batch` at a time.
Tensor extract_features(const DynamicNetwork& net, std::span<const Sample* const> samples, int task,
                        const LIFConfig& cfg, std::size_t batch = 256);

}  // namespace scasnn
