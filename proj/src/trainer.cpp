#include "scasnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

constexpr char kMagic[] = "SCASNNCK";
constexpr std::uint32_t kVersion = 1;

std::size_t local_index(const std::vector<int>& classes, int label, int task) {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end())
        throw DataError("label " + std::to_string(label) + " is not a class of task " + std::to_string(task));
    return static_cast<std::size_t>(it - classes.begin());
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> rows) {
    const std::size_t w = m.dim(1);
    Tensor out({rows.size(), w});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.data() + rows[i] * w, w, out.data() + i * w);
    return out;
}

std::vector<const Sample*> pointers(std::span<const Sample> s) {
    std::vector<const Sample*> out;
    out.reserve(s.size());
    for (const auto& x : s) out.push_back(&x);
    return out;
}

TaskDescriptor header_of(const TaskDescriptor& t) {
    TaskDescriptor h;
    h.id = t.id;
    h.classes = t.classes;
    h.namespaced_labels = t.namespaced_labels;
    return h;
}

}  // namespace

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("argmax_rows: expected a matrix, got " + shape_string(logits.shape()));
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    }
    return out;
}

void TrainConfig::validate() const {
    arch.validate();
    lif.validate();
    adam.validate();
    calibration_adam.validate();
    expansion.validate();
    similarity.validate();
    reuse.validate();
    if (epochs == 0 || batch == 0 || calibration_batch == 0)
        throw ConfigError("trainer: epochs and batch sizes must be positive");
    if (!expansion.max_per_layer.empty() && expansion.max_per_layer.size() != arch.layers.size())
        throw ConfigError("trainer: expansion needs one maximum per feature layer");
}

// --- replay ---------------------------------------------------------------------

std::size_t ReplayBuffer::size() const {
    std::size_t n = 0;
    for (const auto& c : classes_) n += c.items.size();
    return n;
}

std::vector<const Sample*> ReplayBuffer::samples() const {
    std::vector<const Sample*> out;
    for (const auto& c : classes_)
        for (const auto& s : c.items) out.push_back(&s);
    return out;
}

std::vector<std::size_t> ReplayBuffer::class_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& c : classes_) out.push_back(c.items.size());
    return out;
}

std::vector<std::string> ReplayBuffer::update(const TaskDescriptor& task, std::mt19937_64& rng) {
    std::vector<std::string> warnings;
    const std::size_t first_new = classes_.size();
    for (int label : task.classes) {
        for (const auto& c : classes_)
            if (c.task == task.id && c.label == label)
                throw ContractError("replay: task " + std::to_string(task.id) + " was already stored");
        classes_.push_back({task.id, label, {}});
    }
    const std::size_t k = classes_.size();
    if (capacity_ < k)
        warnings.push_back("replay capacity " + std::to_string(capacity_) + " is below the " + std::to_string(k) +
                           " classes seen; keeping one exemplar for the first " + std::to_string(capacity_) +
                           " classes");
    auto quota = [&](std::size_t i) -> std::size_t {
        if (capacity_ < k) return i < capacity_ ? 1 : 0;
        return capacity_ / k + (i < capacity_ % k ? 1 : 0);
    };

    // Random order of each new class's training samples.
    std::map<int, std::vector<const Sample*>> pool;
    for (const auto& s : task.train) pool[s.label].push_back(&s);
    for (std::size_t i = 0; i < k; ++i) {
        auto& c = classes_[i];
        const std::size_t q = quota(i);
        if (i < first_new) {
            if (c.items.size() > q) c.items.resize(q);
            continue;
        }
        auto& candidates = pool[c.label];
        std::shuffle(candidates.begin(), candidates.end(), rng);
        const std::size_t take = std::min(q, candidates.size());
        for (std::size_t j = 0; j < take; ++j) c.items.push_back(*candidates[j]);
        if (take < q)
            warnings.push_back("class " + std::to_string(c.label) + " of task " + std::to_string(task.id) +
                               " has only " + std::to_string(take) + " training samples for a quota of " +
                               std::to_string(q));
    }
    return warnings;
}

void ReplayBuffer::write(BinaryWriter& w) const {
    w.u64(capacity_);
    w.u64(classes_.size());
    for (const auto& c : classes_) {
        w.i64(c.task);
        w.i64(c.label);
        w.u64(c.items.size());
        for (const auto& s : c.items) w.tensor(s.input);
    }
}

ReplayBuffer ReplayBuffer::read(BinaryReader& r) {
    ReplayBuffer b(r.count());
    b.classes_.resize(r.count(1 << 24));
    for (auto& c : b.classes_) {
        c.task = static_cast<int>(r.i64());
        c.label = static_cast<int>(r.i64());
        c.items.resize(r.count(b.capacity_));
        for (auto& s : c.items) s = {r.tensor(), c.label, c.task};
    }
    if (b.size() > b.capacity_) r.fail("replay buffer exceeds its capacity");
    return b;
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
    if (a.capacity_ != b.capacity_ || a.classes_.size() != b.classes_.size()) return false;
    for (std::size_t i = 0; i < a.classes_.size(); ++i) {
        const auto &x = a.classes_[i], &y = b.classes_[i];
        if (x.task != y.task || x.label != y.label || x.items.size() != y.items.size()) return false;
        for (std::size_t j = 0; j < x.items.size(); ++j)
            if (!(x.items[j].input == y.items[j].input)) return false;
    }
    return true;
}

// --- trainer --------------------------------------------------------------------

ContinualTrainer::ContinualTrainer(TrainConfig cfg) : cfg_(std::move(cfg)), buffer_(cfg_.replay_capacity) {
    if (cfg_.expansion.max_per_layer.empty())
        for (const auto& l : cfg_.arch.layers) cfg_.expansion.max_per_layer.push_back(l.units);
    cfg_.validate();
    rng_.seed(cfg_.seed ^ 0x5ca5a11ULL);
}

const DynamicNetwork& ContinualTrainer::network() const {
    if (!net_) throw ContractError("no task has been learned yet");
    return *net_;
}

TaskLog ContinualTrainer::learn_task(const TaskDescriptor& task) {
    const auto start = std::chrono::steady_clock::now();
    const int expected = static_cast<int>(tasks_learned());
    if (task.id != expected)
        throw ContractError("tasks must be learned in order: expected task " + std::to_string(expected) + ", got " +
                            std::to_string(task.id));
    if (task.train.empty() || task.classes.empty())
        throw DataError("task " + std::to_string(task.id) + " has no training data or classes");
    for (const auto& s : task.train) local_index(task.classes, s.label, task.id);

    TaskLog log;
    log.task = task.id;
    std::optional<RelatednessState> state;
    if (task.id == 0) {
        if (task.train[0].input.shape() != cfg_.arch.input)
            throw DimensionError("task 0 inputs are " + shape_string(task.train[0].input.shape()) +
                                 " but the architecture expects " + shape_string(cfg_.arch.input));
        net_ = DynamicNetwork::init_first_task(cfg_.arch, 0, task.classes, cfg_.seed);
    } else {
        log.similarity = similarity_vector(*net_, task, cfg_.similarity, cfg_.lif);
        log.association = association(log.similarity);
        log.expansion = expansion_counts(log.association, cfg_.expansion);
        net_->expand(task.id, log.expansion, task.classes);
        state.emplace(*net_, task.id, log.similarity, cfg_.reuse);
    }

    train_epochs(task, log, state);
    if (state) log.prune_rates = state->prune_rates(*net_);

    // Anchors from the full training split under the final mask.
    const auto train = pointers(task.train);
    const Tensor feats = extract_features(*net_, train, task.id, cfg_.lif);
    std::vector<std::size_t> idx;
    for (const auto* s : train) idx.push_back(local_index(task.classes, s->label, task.id));
    net_->set_anchor(compute_anchors(task.id, feats, idx, task.classes.size()));

    seen_.push_back(header_of(task));
    auto warnings = buffer_.update(task, rng_);
    log.warnings.insert(log.warnings.end(), warnings.begin(), warnings.end());
    net_->cil_head(task.id) = net_->head(task.id);
    log.calibration_loss = calibrate(seen_);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
}

void ContinualTrainer::train_epochs(const TaskDescriptor& task, TaskLog& log,
                                    std::optional<RelatednessState>& state) {
    DynamicNetwork& net = *net_;
    Adam adam(cfg_.adam);
    const std::size_t L = net.layer_count(), n = task.train.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng_);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < n; b += cfg_.batch) {
            const std::size_t m = std::min(cfg_.batch, n - b);
            std::vector<const Sample*> batch(m);
            std::vector<std::size_t> labels(m);
            for (std::size_t i = 0; i < m; ++i) {
                batch[i] = &task.train[order[b + i]];
                labels[i] = local_index(task.classes, batch[i]->label, task.id);
            }
            const BoundParameters bound = net.bind_parameters(task.id);
            const TaskForward out = net.forward_task(stack_inputs(batch), task.id, cfg_.lif, &bound);
            const Var loss = softmax_cross_entropy(out.logits, labels);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw TrainingError("non-finite loss on task " + std::to_string(task.id) + ", epoch " +
                                    std::to_string(e) + ", seed " + std::to_string(cfg_.seed));
            loss_sum += lv * static_cast<double>(m);
            const auto pred = argmax_rows(out.logits.value());
            for (std::size_t i = 0; i < m; ++i) correct += pred[i] == labels[i];

            const Gradients g = backward(loss);
            std::vector<Tensor> grads;
            for (std::size_t l = 0; l < L; ++l) grads.push_back(g.of(bound.layers[l]));
            for (std::size_t l = 0; l < L; ++l) adam.step(l, net.weights(l), grads[l], &net.trainable(l));
            TaskHead& head = net.head_mut(task.id);
            adam.step(L, head.weights, g.of(bound.head_weights));
            adam.step(L + 1, head.bias, g.of(bound.head_bias));
            if (state) state->accumulate(net, grads);
        }
        EpochLog el;
        el.epoch = e;
        el.loss = loss_sum / static_cast<double>(n);
        el.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        if (state) {
            const auto doomed = state->update(e);
            std::size_t before = 0, after = 0;
            for (const auto& u : state->units()) before += u.pruned;
            apply_pruning(net, *state, doomed);
            for (const auto& u : state->units()) after += u.pruned;
            el.newly_pruned = after - before;
        }
        log.epochs.push_back(el);
    }
}

double ContinualTrainer::calibrate(std::span<const TaskDescriptor> seen) {
    const auto samples = buffer_.samples();
    if (samples.empty() || cfg_.calibration_epochs == 0) return 0.0;
    DynamicNetwork& net = *net_;
    const std::size_t T = seen.size(), L = net.layer_count();

    std::vector<std::size_t> offset(T + 1, 0);
    for (std::size_t q = 0; q < T; ++q) offset[q + 1] = offset[q] + seen[q].classes.size();
    std::vector<std::size_t> target(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto q = static_cast<std::size_t>(samples[i]->task);
        target[i] = offset[q] + local_index(seen[q].classes, samples[i]->label, samples[i]->task);
    }
    // Feature layers stay fixed here, so features are computed once per mask.
    std::vector<Tensor> feats;
    std::vector<Tensor> masks;
    for (std::size_t q = 0; q < T; ++q) {
        feats.push_back(extract_features(net, samples, static_cast<int>(q), cfg_.lif));
        masks.push_back(net.expanded_mask(static_cast<int>(q), L));
    }

    Adam adam(cfg_.calibration_adam);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double last = 0.0;
    for (std::size_t e = 0; e < cfg_.calibration_epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng_);
        double sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg_.calibration_batch) {
            const std::size_t m = std::min(cfg_.calibration_batch, order.size() - b);
            const std::span<const std::size_t> rows(order.data() + b, m);
            std::vector<std::size_t> labels(m);
            for (std::size_t i = 0; i < m; ++i) labels[i] = target[rows[i]];
            std::vector<Var> w, bias, parts;
            for (std::size_t q = 0; q < T; ++q) {
                const TaskHead& h = net.cil_head(static_cast<int>(q));
                w.push_back(Var::parameter(h.weights));
                bias.push_back(Var::parameter(h.bias));
                const Var eff = transpose(mul(w.back(), Var::constant(masks[q])));
                parts.push_back(add_bias(matmul(Var::constant(gather_rows(feats[q], rows)), eff), bias.back()));
            }
            const Var loss = softmax_cross_entropy(concat_columns(parts), labels);
            if (!std::isfinite(loss.value()[0]))
                throw TrainingError("non-finite calibration loss after task " + std::to_string(T - 1) + ", seed " +
                                    std::to_string(cfg_.seed));
            sum += loss.value()[0] * static_cast<double>(m);
            const Gradients g = backward(loss);
            for (std::size_t q = 0; q < T; ++q) {
                TaskHead& h = net.cil_head(static_cast<int>(q));
                adam.step(2 * q, h.weights, g.of(w[q]));
                adam.step(2 * q + 1, h.bias, g.of(bias[q]));
            }
        }
        last = sum / static_cast<double>(order.size());
    }
    return last;
}

EvalResult ContinualTrainer::til_evaluate(std::span<const TaskDescriptor> tasks) const {
    const DynamicNetwork& net = network();
    EvalResult r;
    for (const auto& t : tasks) {
        if (t.id < 0 || t.id >= static_cast<int>(net.task_count()))
            throw LookupError("task " + std::to_string(t.id) + " has not been learned");
        if (t.test.empty()) throw DataError("task " + std::to_string(t.id) + " has no test data");
        const auto test = pointers(t.test);
        const auto pred = argmax_rows(net.head_logits(extract_features(net, test, t.id, cfg_.lif), t.id));
        const auto& classes = net.head(t.id).classes;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test.size(); ++i) correct += classes[pred[i]] == test[i]->label;
        r.per_task.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    for (double a : r.per_task) r.average += a;
    if (!r.per_task.empty()) r.average /= static_cast<double>(r.per_task.size());
    return r;
}

double ContinualTrainer::cil_evaluate(std::span<const TaskDescriptor> tasks) const {
    const DynamicNetwork& net = network();
    std::set<int> shared_labels;
    std::vector<const Sample*> test;
    for (const auto& t : tasks) {
        if (t.id < 0 || t.id >= static_cast<int>(net.task_count()))
            throw LookupError("task " + std::to_string(t.id) + " has not been learned");
        if (!t.namespaced_labels)
            for (int c : t.classes)
                if (!shared_labels.insert(c).second)
                    throw DataError("class " + std::to_string(c) + " appears in more than one task of a split stream");
        for (const auto& s : t.test) test.push_back(&s);
    }
    if (test.empty()) throw DataError("cil_evaluate: no test samples");

    const std::size_t n = test.size();
    std::vector<double> best(n, -std::numeric_limits<double>::infinity());
    std::vector<int> best_task(n, -1), best_label(n, 0);
    for (const auto& t : tasks) {
        const Tensor logits = net.head_logits(extract_features(net, test, t.id, cfg_.lif), t.id,
                                              HeadSet::ClassIncremental);
        const std::size_t k = logits.dim(1);
        const auto& classes = net.head(t.id, HeadSet::ClassIncremental).classes;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c)
                if (logits[i * k + c] > best[i]) {
                    best[i] = logits[i * k + c];
                    best_task[i] = t.id;
                    best_label[i] = classes[c];
                }
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += best_task[i] == test[i]->task && best_label[i] == test[i]->label;
    return static_cast<double>(correct) / static_cast<double>(n);
}

void ContinualTrainer::save(std::ostream& out) const {
    BinaryWriter w;
    w.u8(net_ ? 1 : 0);
    if (net_) net_->write(w);
    buffer_.write(w);
    std::ostringstream rng;
    rng << rng_;
    w.str(rng.str());
    w.u64(seen_.size());
    for (const auto& t : seen_) {
        w.i64(t.id);
        w.u8(t.namespaced_labels ? 1 : 0);
        w.u64(t.classes.size());
        for (int c : t.classes) w.i64(c);
    }
    w.finish(out, kMagic, kVersion);
}

ContinualTrainer ContinualTrainer::load(std::istream& in, TrainConfig cfg) {
    BinaryReader r = BinaryReader::open(in, kMagic, kVersion);
    ContinualTrainer t(std::move(cfg));
    if (r.u8()) t.net_ = DynamicNetwork::read(r);
    t.buffer_ = ReplayBuffer::read(r);
    std::istringstream rng(r.str());
    rng >> t.rng_;
    if (!rng) r.fail("bad generator state");
    t.seen_.resize(r.count(1 << 20));
    for (auto& s : t.seen_) {
        s.id = static_cast<int>(r.i64());
        s.namespaced_labels = r.u8() != 0;
        s.classes.resize(r.count(1 << 20));
        for (int& c : s.classes) c = static_cast<int>(r.i64());
    }
    r.expect_end();
    if (t.seen_.size() != t.tasks_learned()) r.fail("task list disagrees with the network");
    if (t.net_ && !(t.net_->architecture() == t.cfg_.arch))
        throw ConfigError("checkpoint architecture differs from the configured one");
    return t;
}

StreamResult run_stream(ContinualTrainer& trainer, std::span<const TaskDescriptor> tasks) {
    StreamResult r;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        r.logs.push_back(trainer.learn_task(tasks[i]));
        const auto seen = tasks.subspan(0, i + 1);
        r.til.push_back(trainer.til_evaluate(seen).per_task);
        r.cil.push_back(trainer.cil_evaluate(seen));
    }
    return r;
}

}  // namespace scasnn
