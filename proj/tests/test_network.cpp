#include <random>
#include <sstream>

#include "doctest.h"
#include "scasnn/errors.hpp"
#include "scasnn/network.hpp"

using namespace scasnn;

namespace {

Architecture dense_arch() {
    Architecture a;
    a.input = {1, 2, 2};
    a.layers = {{LayerKind::Dense, 5}, {LayerKind::Dense, 4}};
    return a;
}

Architecture conv_arch() {
    Architecture a;
    a.input = {1, 7, 7};
    a.layers = {{LayerKind::Conv, 3, 3, 1, 1}, {LayerKind::Conv, 4, 3, 2, 1}, {LayerKind::Dense, 6}};
    return a;
}

Tensor random_batch(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    Tensor t(std::move(s));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

const std::vector<int> kTwo{0, 1};

}  // namespace

TEST_CASE("first task construction") {
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, kTwo, 1);
    CHECK(net.populations().size() == 4);
    CHECK(net.task_count() == 1);
    const auto& m = net.mask(0);
    for (const auto& b : m.connections)
        for (auto bit : b) CHECK(bit == 1);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        std::size_t total = 0;
        for (const auto& p : net.populations())
            if (p.layer == l) total += p.size();
        CHECK(total == net.layer_units(l));
        CHECK(net.trainable(l) == Tensor(net.weights(l).shape(), 1.0));
    }
    // 7x7 -> 7x7 -> 4x4, so the dense layer sees 16 positions per channel.
    CHECK(net.fan(2) == 16);
    CHECK(net.feature_width() == 6);

    auto bad = conv_arch();
    bad.layers[1].units = 0;
    CHECK_THROWS_AS(DynamicNetwork::init_first_task(bad, 0, kTwo, 1), ConfigError);
    bad.layers.clear();
    CHECK_THROWS_AS(DynamicNetwork::init_first_task(bad, 0, kTwo, 1), ConfigError);
    bad = conv_arch();
    bad.layers[1].stride = 4;
    CHECK_THROWS_AS(DynamicNetwork::init_first_task(bad, 0, kTwo, 1), ConfigError);
}

TEST_CASE("expand") {
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, kTwo, 2);
    const std::size_t zero[] = {0, 0, 0};
    auto before = net;
    net.expand(1, zero, kTwo);
    CHECK(net.task_count() == 2);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        CHECK(net.layer_units(l) == before.layer_units(l));
        CHECK(net.weights(l) == before.weights(l));
        CHECK(net.trainable(l) == Tensor(net.weights(l).shape(), 0.0));
    }
    for (const auto& p : net.populations()) CHECK(p.frozen == (p.task < 1));

    const std::size_t grow[] = {4, 4, 8};
    net.expand(2, grow, kTwo);
    CHECK(net.layer_units(0) == 7);
    CHECK(net.layer_units(1) == 8);
    CHECK(net.layer_units(2) == 14);
    CHECK_THROWS_AS(net.expand(2, grow, kTwo), ContractError);
    CHECK_THROWS_AS(net.expand(4, grow, kTwo), ContractError);
    CHECK_THROWS_AS(net.forward_task(Tensor({1, 7, 7}), 3, LIFConfig{}), LookupError);

    // Old rows keep their values and stay frozen; new rows are trainable.
    const auto& w = net.weights(1);
    const auto& tr = net.trainable(1);
    const std::size_t in = net.input_units(1), f = net.fan(1);
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t r = 0; r < f; ++r) {
                CHECK(w[(o * in + c) * f + r] == before.weights(1)[(o * 3 + c) * f + r]);
                CHECK(tr[(o * in + c) * f + r] == 0.0);
            }
    for (std::size_t o = 4; o < 8; ++o)
        for (std::size_t k = 0; k < in * f; ++k) CHECK(tr[o * in * f + k] == 1.0);

    // New units read every unit below; old units keep their owner's wiring.
    const auto& m2 = net.mask(2);
    for (std::size_t o = 4; o < 8; ++o)
        for (std::size_t c = 0; c < in; ++c) CHECK(m2.connections[1][o * in + c] == 1);
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t c = 3; c < in; ++c) CHECK(m2.connections[1][o * in + c] == 0);
}

TEST_CASE("zero input gives zero features and bias logits") {
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, {std::vector<int>{0, 1, 2}}, 3);
    net.head_mut(0).bias = Tensor({3}, std::vector<double>{0.3, -0.1, 0.7});
    auto out = net.forward_task(Tensor({2, 1, 7, 7}), 0, LIFConfig{});
    CHECK(out.features.value() == Tensor({2, 6}, 0.0));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 3; ++k) CHECK(out.logits.value()[i * 3 + k] == net.head(0).bias[k]);
}

TEST_CASE("task 0 equals a plain unmasked forward") {
    LIFConfig cfg;
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, kTwo, 4);
    const Tensor x = random_batch({3, 1, 7, 7}, 5);
    auto out = net.forward_task(x, 0, cfg);

    std::vector<SpikeState> s(3);
    auto step = [&](const Var& in) {
        Var h = in;
        for (std::size_t l = 0; l < 2; ++l) {
            const auto& spec = net.architecture().layers[l];
            Var cur = conv2d(h, Var::constant(net.weights(l)), spec.stride, spec.padding);
            if (!s[l].membrane.valid()) s[l] = resting_state(cur.shape());
            s[l] = lif_step(s[l], cur, cfg);
            h = s[l].spikes;
        }
        Var cur = matmul(reshape(h, {3, 64}), transpose(Var::constant(net.weights(2))));
        if (!s[2].membrane.valid()) s[2] = resting_state(cur.shape());
        s[2] = lif_step(s[2], cur, cfg);
        return s[2].spikes;
    };
    Var feats = run_window(step, Var::constant(x), cfg);
    Var logits = add_bias(matmul(feats, transpose(Var::constant(net.head(0).weights))),
                          Var::constant(net.head(0).bias));
    CHECK(out.features.value() == feats.value());
    CHECK(out.logits.value() == logits.value());
    CHECK(net.extract_features(x, 0, cfg) == feats.value());
    CHECK(net.head_logits(feats.value(), 0) == logits.value());
}

namespace {

// Plain-double forward of a two-dense-layer SNN restricted to the listed
// units, with the dropped units physically absent.
std::vector<double> reduced_forward(const DynamicNetwork& net, int task, const Tensor& x,
                                    const std::vector<std::size_t>& keep1, const std::vector<std::size_t>& keep2,
                                    const LIFConfig& cfg) {
    const std::size_t in = 4, n1 = net.layer_units(0);
    const auto& w1 = net.weights(0);
    const auto& w2 = net.weights(1);
    const auto& head = net.head(task);
    const std::size_t k = head.classes.size(), fw = net.feature_width();
    std::vector<double> u1(keep1.size()), o1(keep1.size()), u2(keep2.size()), o2(keep2.size()), rate(keep2.size());
    for (std::size_t t = 0; t < cfg.window; ++t) {
        for (std::size_t a = 0; a < keep1.size(); ++a) {
            double cur = 0;
            for (std::size_t c = 0; c < in; ++c) cur += w1[keep1[a] * in + c] * x[c];
            u1[a] = cfg.tau * u1[a] * (1 - o1[a]) + cur;
            o1[a] = u1[a] >= cfg.v_th;
        }
        for (std::size_t b = 0; b < keep2.size(); ++b) {
            double cur = 0;
            for (std::size_t a = 0; a < keep1.size(); ++a) cur += w2[keep2[b] * n1 + keep1[a]] * o1[a];
            u2[b] = cfg.tau * u2[b] * (1 - o2[b]) + cur;
            o2[b] = u2[b] >= cfg.v_th;
            rate[b] += o2[b];
        }
    }
    std::vector<double> logits(k);
    for (std::size_t r = 0; r < k; ++r) {
        double s = head.bias[r];
        for (std::size_t b = 0; b < keep2.size(); ++b) s += head.weights[r * fw + keep2[b]] * rate[b] / cfg.window;
        logits[r] = s;
    }
    return logits;
}

}  // namespace

TEST_CASE("masking a population equals removing it") {
    LIFConfig cfg;
    cfg.v_th = 0.3;
    auto arch = dense_arch();
    arch.init_gain = 3.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto net = DynamicNetwork::init_first_task(arch, 0, kTwo, seed);
        const std::size_t grow[] = {3, 2};
        net.expand(1, grow, kTwo);
        // Layer 0 units 1 and 3 lose their only routes into task 1 (old layer-1
        // units keep task 0's wiring, so disconnect them from the head too).
        std::vector<Connection> doomed;
        for (std::size_t u : {1, 3})
            for (auto c : net.outgoing_to_task(1, 0, u)) doomed.push_back(c);
        for (std::size_t u = 0; u < 4; ++u) doomed.push_back({2, u, 0});
        net.prune_connections(1, doomed);
        CHECK(net.mask(1).active[1] == Bits{0, 0, 0, 0, 1, 1});

        const Tensor x = random_batch({1, 1, 2, 2}, 100 + seed);
        auto out = net.forward_task(x, 1, cfg).logits.value();
        // Units 1 and 3 still feed old layer-1 units, but those are gone too.
        auto ref = reduced_forward(net, 1, x, {0, 2, 4, 5, 6, 7}, {4, 5}, cfg);
        for (std::size_t k = 0; k < 2; ++k) CHECK(out[k] == doctest::Approx(ref[k]).epsilon(1e-12));
    }
}

TEST_CASE("pruning and new-task training leave old tasks bit-identical") {
    LIFConfig cfg;
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, kTwo, 7);
    const Tensor x = random_batch({4, 1, 7, 7}, 8);
    const auto old_logits = net.forward_task(x, 0, cfg).logits.value();
    const auto old_feats = net.extract_features(x, 0, cfg);

    const std::size_t grow[] = {2, 2, 3};
    net.expand(1, grow, kTwo);
    CHECK(net.forward_task(x, 0, cfg).logits.value() == old_logits);

    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0, 1);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        auto& w = net.weights(l);
        for (std::size_t i = 0; i < w.size(); ++i)
            if (net.trainable(l)[i] != 0) w[i] += nd(rng);
    }
    std::vector<Connection> doomed;
    for (std::size_t l = 0; l + 1 < net.layer_count(); ++l)
        for (std::size_t u = 0; u < 2; ++u)
            for (auto c : net.outgoing_to_task(1, l, u)) doomed.push_back(c);
    doomed.push_back({3, 1, 0});
    const TaskMask mask0 = net.mask(0);
    net.prune_connections(1, doomed);
    CHECK(net.mask(0) == mask0);
    CHECK(net.forward_task(x, 0, cfg).logits.value() == old_logits);
    // Features widen with the layer; the extra columns are zero padding.
    const Tensor feats = net.extract_features(x, 0, cfg);
    REQUIRE(feats.dim(1) == net.feature_width());
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < feats.dim(1); ++j)
            CHECK(feats[i * feats.dim(1) + j] == (j < 6 ? old_feats[i * 6 + j] : 0.0));

    // Pruned edges never come back and are no longer trainable.
    const auto& m1 = net.mask(1);
    for (const auto& c : doomed) {
        if (c.layer == 3) {
            CHECK(m1.head[c.src] == 0);
            continue;
        }
        const std::size_t in = net.input_units(c.layer);
        CHECK(m1.connections[c.layer][c.dst * in + c.src] == 0);
        CHECK(net.trainable(c.layer)[(c.dst * in + c.src) * net.fan(c.layer)] == 0.0);
    }

    CHECK_THROWS_AS(net.prune_connections(0, doomed), ContractError);
    const Connection into_old[] = {{1, 0, 0}};
    CHECK_THROWS_AS(net.prune_connections(1, into_old), ContractError);
    const Connection from_input[] = {{0, 0, 3}};
    CHECK_THROWS_AS(net.prune_connections(1, from_input), ContractError);
}

TEST_CASE("pruning a zero-weight edge changes nothing") {
    LIFConfig cfg;
    auto net = DynamicNetwork::init_first_task(dense_arch(), 0, kTwo, 11);
    const std::size_t grow[] = {2, 2};
    net.expand(1, grow, kTwo);
    net.weights(1)[4 * 7 + 2] = 0.0;  // old unit 2 -> new unit 4
    const Tensor x = random_batch({5, 1, 2, 2}, 12);
    const auto before = net.forward_task(x, 1, cfg).logits.value();
    const Connection edge[] = {{1, 2, 4}};
    net.prune_connections(1, edge);
    CHECK(net.forward_task(x, 1, cfg).logits.value() == before);
}

TEST_CASE("gradients reach only what the mask exposes") {
    LIFConfig cfg;
    cfg.v_th = 0.2;
    auto net = DynamicNetwork::init_first_task(dense_arch(), 0, kTwo, 13);
    const std::size_t grow[] = {2, 2};
    net.expand(1, grow, kTwo);
    const Connection edge[] = {{1, 0, 4}, {1, 1, 4}, {1, 2, 4}, {1, 3, 4}};
    net.prune_connections(1, edge);
    auto bound = net.bind_parameters(1);
    auto out = net.forward_task(random_batch({6, 1, 2, 2}, 14), 1, cfg, &bound);
    const std::size_t labels[] = {0, 1, 0, 1, 1, 0};
    auto g = backward(softmax_cross_entropy(out.logits, labels));
    const Tensor g1 = g.of(bound.layers[1]);
    const Tensor m1 = net.expanded_mask(1, 1);
    for (std::size_t i = 0; i < g1.size(); ++i)
        if (m1[i] == 0) CHECK(g1[i] == 0.0);
}

TEST_CASE("checkpoint round trip") {
    auto net = DynamicNetwork::init_first_task(conv_arch(), 0, kTwo, 21);
    const std::size_t grow[] = {1, 2, 3};
    net.expand(1, grow, {std::vector<int>{2, 3, 4}});
    const Connection edge[] = {{2, 1, 6}, {3, 0, 0}};
    net.prune_connections(1, edge);
    net.set_anchor({0, Tensor({2, net.feature_width()}, 0.25)});

    std::stringstream ss;
    net.save(ss);
    const std::string bytes = ss.str();
    auto back = DynamicNetwork::load(ss);
    CHECK(back == net);
    const Tensor x = random_batch({2, 1, 7, 7}, 22);
    CHECK(back.forward_task(x, 1, LIFConfig{}).logits.value() == net.forward_task(x, 1, LIFConfig{}).logits.value());
    std::stringstream again;
    back.save(again);
    CHECK(again.str() == bytes);

    // Same generator state: both grow identically.
    const std::size_t more[] = {1, 1, 1};
    net.expand(2, more, kTwo);
    back.expand(2, more, kTwo);
    CHECK(back == net);

    for (std::size_t at : {std::size_t{0}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        std::string bad = bytes;
        bad[at] = static_cast<char>(bad[at] ^ 0x5a);
        std::stringstream in(bad);
        CHECK_THROWS_AS(DynamicNetwork::load(in), FormatError);
    }
    std::stringstream truncated(bytes.substr(0, bytes.size() - 20));
    CHECK_THROWS_AS(DynamicNetwork::load(truncated), FormatError);
}
