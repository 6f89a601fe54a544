#pragma once

// Task-by-task learning loop, replay memory and TIL/CIL evaluation.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scasnn/metrics.hpp"
#include "scasnn/network.hpp"
#include "scasnn/optimizer.hpp"
#include "scasnn/plasticity.hpp"
#include "scasnn/similarity.hpp"

namespace scasnn {

struct TrainConfig {
    Architecture arch;
    std::size_t epochs = 20;
    std::size_t batch = 32;
    AdamConfig adam;
    LIFConfig lif;
    /// Empty max_per_layer means "the layer's initial width".
    ExpansionPolicy expansion;
    SimilarityConfig similarity;
    ReuseConfig reuse;
    std::size_t replay_capacity = 2000;
    std::size_t calibration_epochs = 30;
    std::size_t calibration_batch = 64;
    AdamConfig calibration_adam{1e-2};
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class-balanced exemplar store keyed by (task, label).
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 2000) : capacity_(capacity) {}

    /// Adds the task's classes and rebalances every class to a quota within
    /// one of the others. Returns warnings (capacity below the class count).
    std::vector<std::string> update(const TaskDescriptor& task, std::mt19937_64& rng);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const;
    std::size_t class_count() const { return classes_.size(); }
    /// Exemplars in class order.
    std::vector<const Sample*> samples() const;
    /// Exemplar count of each stored class, in class order.
    std::vector<std::size_t> class_sizes() const;

    void write(BinaryWriter& out) const;
    static ReplayBuffer read(BinaryReader& in);
    friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b);

private:
    struct ClassStore {
        int task = 0;
        int label = 0;
        std::vector<Sample> items;
    };
    std::size_t capacity_;
    std::vector<ClassStore> classes_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    std::size_t newly_pruned = 0;
};

struct TaskLog {
    int task = 0;
    std::vector<SimilarityRecord> similarity;
    double association = 0.0;
    std::vector<std::size_t> expansion;
    std::vector<PruneRate> prune_rates;
    std::vector<EpochLog> epochs;
    std::vector<std::string> warnings;
    double calibration_loss = 0.0;
    double seconds = 0.0;
};

struct EvalResult {
    std::vector<double> per_task;
    double average = 0.0;
};

class ContinualTrainer {
public:
    explicit ContinualTrainer(TrainConfig cfg);

    /// Similarity, expansion, training with relatedness pruning, anchors,
    /// replay update and head calibration for the next task in order.
    TaskLog learn_task(const TaskDescriptor& task);

    /// Each task's test split under its own mask and head.
    EvalResult til_evaluate(std::span<const TaskDescriptor> tasks) const;
    /// Argmax over the concatenated calibrated heads on the union test set.
    double cil_evaluate(std::span<const TaskDescriptor> tasks) const;

    const TrainConfig& config() const { return cfg_; }
    const DynamicNetwork& network() const;
    bool has_network() const { return net_.has_value(); }
    const ReplayBuffer& buffer() const { return buffer_; }
    std::size_t tasks_learned() const { return net_ ? net_->task_count() : 0; }

    /// Network, buffer and generator state; `cfg` supplies the rest.
    void save(std::ostream& out) const;
    static ContinualTrainer load(std::istream& in, TrainConfig cfg);

private:
    void train_epochs(const TaskDescriptor& task, TaskLog& log, std::optional<RelatednessState>& state);
    double calibrate(std::span<const TaskDescriptor> seen_tasks);

    TrainConfig cfg_;
    std::optional<DynamicNetwork> net_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
    /// Class lists of learned tasks, for calibration targets.
    std::vector<TaskDescriptor> seen_;
};

struct StreamResult {
    std::vector<TaskLog> logs;
    AccuracyMatrix til;
    /// CIL accuracy on the union of tasks 0..i after learning task i.
    std::vector<double> cil;
};

/// Learns every task in order, evaluating after each.
StreamResult run_stream(ContinualTrainer& trainer, std::span<const TaskDescriptor> tasks);

/// Index of the largest entry of each row.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace scasnn
