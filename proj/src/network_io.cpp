#include <sstream>

#include "scasnn/errors.hpp"
#include "scasnn/network.hpp"

namespace scasnn {

namespace {

constexpr char kMagic[] = "SCASNNET";
constexpr std::uint32_t kVersion = 1;

void write_head(BinaryWriter& w, const TaskHead& h) {
    w.i64(h.task);
    w.u64(h.classes.size());
    for (int c : h.classes) w.i64(c);
    w.tensor(h.weights);
    w.tensor(h.bias);
}

TaskHead read_head(BinaryReader& r) {
    TaskHead h;
    h.task = static_cast<int>(r.i64());
    h.classes.resize(r.count(1 << 20));
    for (int& c : h.classes) c = static_cast<int>(r.i64());
    h.weights = r.tensor();
    h.bias = r.tensor();
    return h;
}

}  // namespace

void DynamicNetwork::write(BinaryWriter& w) const {
    w.u64(arch_.input.size());
    for (auto d : arch_.input) w.u64(d);
    w.u64(arch_.layers.size());
    for (const auto& l : arch_.layers) {
        w.u8(l.kind == LayerKind::Conv ? 1 : 0);
        w.u64(l.units);
        w.u64(l.kernel);
        w.u64(l.stride);
        w.u64(l.padding);
    }
    w.f64(arch_.init_gain);
    w.f64(arch_.head_init_std);

    w.u64(units_.size());
    for (auto u : units_) w.u64(u);
    for (std::size_t l = 0; l < units_.size(); ++l) {
        w.tensor(weights_[l]);
        w.tensor(trainable_[l]);
    }
    w.u64(populations_.size());
    for (const auto& p : populations_) {
        w.i64(p.task);
        w.u64(p.layer);
        w.u64(p.begin);
        w.u64(p.end);
        w.u8(p.frozen ? 1 : 0);
    }
    w.u64(masks_.size());
    for (const auto& m : masks_) {
        w.i64(m.task);
        for (const auto& b : m.active) w.bits(b);
        for (const auto& b : m.connections) w.bits(b);
        w.bits(m.head);
    }
    for (const auto& h : heads_) write_head(w, h);
    for (const auto& h : cil_heads_) write_head(w, h);
    w.u64(anchors_.size());
    for (const auto& [task, a] : anchors_) {
        w.i64(task);
        w.tensor(a.means);
    }
    w.u64(seed_);
    std::ostringstream rng;
    rng << rng_;
    w.str(rng.str());
}

DynamicNetwork DynamicNetwork::read(BinaryReader& r) {
    DynamicNetwork net;
    net.arch_.input.resize(r.count(8));
    for (auto& d : net.arch_.input) d = r.count();
    net.arch_.layers.resize(r.count(1 << 10));
    for (auto& l : net.arch_.layers) {
        const auto kind = r.u8();
        if (kind > 1) r.fail("unknown layer kind");
        l.kind = kind ? LayerKind::Conv : LayerKind::Dense;
        l.units = r.count();
        l.kernel = r.count();
        l.stride = r.count();
        l.padding = r.count();
    }
    net.arch_.init_gain = r.f64();
    net.arch_.head_init_std = r.f64();
    try {
        net.arch_.validate();
    } catch (const ConfigError& e) {
        r.fail(std::string("invalid architecture: ") + e.what());
    }
    net.recompute_fans();

    const std::size_t L = net.arch_.layers.size();
    if (r.count() != L) r.fail("layer count disagrees with architecture");
    net.units_.resize(L);
    for (auto& u : net.units_) u = r.count();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t at = r.offset();
        net.weights_.push_back(r.tensor());
        net.trainable_.push_back(r.tensor());
        const std::size_t expect = net.units_[l] * net.input_units(l) * net.fan_[l];
        if (net.weights_[l].size() != expect || net.trainable_[l].shape() != net.weights_[l].shape())
            throw FormatError("layer " + std::to_string(l) + " weights have the wrong size", at);
    }
    net.populations_.resize(r.count(1 << 20));
    for (auto& p : net.populations_) {
        p.task = static_cast<int>(r.i64());
        p.layer = r.count();
        p.begin = r.count();
        p.end = r.count();
        p.frozen = r.u8() != 0;
    }
    const std::size_t tasks = r.count(1 << 20);
    net.masks_.resize(tasks);
    for (auto& m : net.masks_) {
        m.task = static_cast<int>(r.i64());
        for (std::size_t l = 0; l < L; ++l) {
            m.active.push_back(r.bits());
            if (m.active.back().size() != net.units_[l]) r.fail("mask active bits have the wrong size");
        }
        for (std::size_t l = 0; l < L; ++l) {
            m.connections.push_back(r.bits());
            if (m.connections.back().size() != net.units_[l] * net.input_units(l))
                r.fail("mask connection bits have the wrong size");
        }
        m.head = r.bits();
        if (m.head.size() != net.units_.back()) r.fail("mask head bits have the wrong size");
    }
    const std::size_t fw = net.feature_width();
    for (auto* set : {&net.heads_, &net.cil_heads_})
        for (std::size_t t = 0; t < tasks; ++t) {
            const std::size_t at = r.offset();
            set->push_back(read_head(r));
            const auto& h = set->back();
            if (h.weights.shape() != Shape{h.classes.size(), fw} || h.bias.shape() != Shape{h.classes.size()})
                throw FormatError("head " + std::to_string(t) + " has the wrong shape", at);
        }
    const std::size_t anchors = r.count(tasks);
    for (std::size_t i = 0; i < anchors; ++i) {
        FeatureAnchor a;
        a.task = static_cast<int>(r.i64());
        a.means = r.tensor();
        net.anchors_[a.task] = std::move(a);
    }
    net.seed_ = r.u64();
    std::istringstream rng(r.str());
    rng >> net.rng_;
    if (!rng) r.fail("bad generator state");
    for (std::size_t t = 0; t < tasks; ++t)
        if (net.masks_[t].task != static_cast<int>(t) || net.heads_[t].task != static_cast<int>(t))
            r.fail("task records out of order");
    return net;
}

void DynamicNetwork::save(std::ostream& out) const {
    BinaryWriter w;
    write(w);
    w.finish(out, kMagic, kVersion);
}

DynamicNetwork DynamicNetwork::load(std::istream& in) {
    BinaryReader r = BinaryReader::open(in, kMagic, kVersion);
    DynamicNetwork net = read(r);
    r.expect_end();
    return net;
}

bool operator==(const DynamicNetwork& a, const DynamicNetwork& b) {
    return a.arch_ == b.arch_ && a.units_ == b.units_ && a.weights_ == b.weights_ &&
           a.trainable_ == b.trainable_ && a.populations_ == b.populations_ && a.masks_ == b.masks_ &&
           a.heads_ == b.heads_ && a.cil_heads_ == b.cil_heads_ && a.anchors_ == b.anchors_ &&
           a.seed_ == b.seed_ && a.rng_ == b.rng_;
}

}  // namespace scasnn
