#include <cmath>
#include <random>

#include "doctest.h"
#include "scasnn/errors.hpp"
#include "scasnn/spiking.hpp"

using namespace scasnn;

namespace {

LIFConfig unit_threshold() {
    LIFConfig cfg;
    cfg.tau = 0.2;
    cfg.v_th = 1.0;
    return cfg;
}

SpikeState state_of(double u, double o) {
    return {Var::constant(Tensor({1}, u)), Var::constant(Tensor({1}, o))};
}

}  // namespace

TEST_CASE("lif_step arithmetic") {
    const auto cfg = unit_threshold();
    auto s = lif_step(state_of(0.8, 0.0), Var::constant(Tensor({1}, 0.5)), cfg);
    CHECK(s.membrane.value()[0] == doctest::Approx(0.66).epsilon(1e-15));
    CHECK(s.spikes.value()[0] == 0.0);

    auto fired = lif_step(state_of(0.0, 0.0), Var::constant(Tensor({1}, 1.2)), cfg);
    CHECK(fired.spikes.value()[0] == 1.0);

    // A spike at t-1 resets the carried potential.
    auto after = lif_step(state_of(1.2, 1.0), Var::constant(Tensor({1}, 0.1)), cfg);
    CHECK(after.membrane.value()[0] == doctest::Approx(0.1));

    LIFConfig literal = cfg;
    literal.reset = ResetMode::Literal;
    auto lit = lif_step(state_of(0.8, 0.0), Var::constant(Tensor({1}, 0.5)), literal);
    CHECK(lit.membrane.value()[0] == doctest::Approx(0.2 * (1 - 0.8) + 0.5));

    CHECK_THROWS_AS(lif_step(state_of(0, 0), Var::constant(Tensor({2}, 0.0)), cfg), DimensionError);
}

TEST_CASE("zero input never spikes under hard reset") {
    const auto cfg = unit_threshold();
    auto s = resting_state({3});
    for (int t = 0; t < 50; ++t) {
        s = lif_step(s, Var::constant(Tensor({3}, 0.0)), cfg);
        CHECK(s.spikes.value().sum() == 0.0);
        CHECK(s.membrane.value().max_abs() == 0.0);
    }
}

TEST_CASE("config validation") {
    LIFConfig c;
    CHECK_NOTHROW(c.validate());
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.window = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("surrogate gradient values") {
    CHECK(surrogate_grad(0.0, 2.0) == 2.0);
    CHECK(surrogate_grad(2.0 / 2.0, 2.0) == 0.0);
    CHECK(surrogate_grad(2.0 / 3.0, 3.0) == 0.0);
    CHECK(surrogate_grad(-2.0 / 3.0, 3.0) == 0.0);
    CHECK(surrogate_grad(1.0 / (2 * 2.0), 2.0) == doctest::Approx(1.0));

    // Even, continuous at the edges, peak lambda at zero.
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ud(-3, 3), ld(0.1, 5);
    for (int i = 0; i < 1000; ++i) {
        const double u = ud(rng), lambda = ld(rng);
        CHECK(surrogate_grad(u, lambda) == surrogate_grad(-u, lambda));
        CHECK(surrogate_grad(u, lambda) <= lambda);
        CHECK(surrogate_grad(u, lambda) >= 0.0);
        const double edge = 1.0 / lambda;
        CHECK(std::abs(surrogate_grad(edge * (1 - 1e-12), lambda)) < 1e-9);
    }

    Tensor u({3}, std::vector<double>{-0.25, 0.0, 5.0});
    Tensor g = surrogate_grad(u, 2.0);
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(g[1] == 2.0);
    CHECK(g[2] == 0.0);
}

TEST_CASE("spike is binary and carries the surrogate") {
    LIFConfig cfg;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0.5, 1.0);
    Tensor u({64});
    for (auto& v : u.values()) v = nd(rng);
    auto p = Var::parameter(u);
    auto o = spike(p, cfg);
    for (double v : o.value().values()) CHECK((v == 0.0 || v == 1.0));
    Tensor g = backward(sum(o)).of(p);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(g[i] == surrogate_grad(u[i] - cfg.v_th, cfg.lambda));
}

TEST_CASE("surrogate-smoothed single neuron passes the finite-difference check") {
    LIFConfig cfg;
    cfg.lambda = 1.0;
    cfg.spike = SpikeForward::Smoothed;
    cfg.window = 3;
    const Tensor x({1, 2}, std::vector<double>{0.6, 0.9});
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> d(-0.6, 0.9);
        Tensor w({2, 1});
        for (auto& v : w.values()) v = d(rng);
        auto f = [&](const Var& pw) {
            SpikeState s = resting_state({1, 1});
            auto step = [&](const Var& in) {
                s = lif_step(s, matmul(in, pw), cfg);
                return s.spikes;
            };
            return sum(run_window(step, Var::constant(x), cfg));
        };
        CHECK(finite_diff_check(f, w, 1e-5) < 1e-4);
    }
}

namespace {

// Plain-double reference of a 2-3-2 dense LIF stack, hard reset.
std::vector<double> hand_trace(const Tensor& x, const Tensor& w1, const Tensor& w2, const LIFConfig& cfg) {
    double u1[3] = {0, 0, 0}, o1[3] = {0, 0, 0}, u2[2] = {0, 0}, o2[2] = {0, 0};
    double count[2] = {0, 0};
    for (std::size_t t = 0; t < cfg.window; ++t) {
        for (int i = 0; i < 3; ++i) {
            double cur = x[0] * w1[0 * 3 + i] + x[1] * w1[1 * 3 + i];
            u1[i] = cfg.tau * u1[i] * (1 - o1[i]) + cur;
            o1[i] = u1[i] >= cfg.v_th ? 1 : 0;
        }
        for (int i = 0; i < 2; ++i) {
            double cur = 0;
            for (int j = 0; j < 3; ++j) cur += o1[j] * w2[j * 2 + i];
            u2[i] = cfg.tau * u2[i] * (1 - o2[i]) + cur;
            o2[i] = u2[i] >= cfg.v_th ? 1 : 0;
            count[i] += o2[i];
        }
    }
    return {count[0] / cfg.window, count[1] / cfg.window};
}

struct TinyNet {
    Tensor w1, w2;
    LIFConfig cfg;

    Var window(const Var& x, const Var& pw1, const Var& pw2) const {
        SpikeState s1 = resting_state({1, 3}), s2 = resting_state({1, 2});
        auto step = [&](const Var& in) {
            s1 = lif_step(s1, matmul(in, pw1), cfg);
            s2 = lif_step(s2, matmul(s1.spikes, pw2), cfg);
            return s2.spikes;
        };
        return run_window(step, x, cfg);
    }
};

}  // namespace

TEST_CASE("run_window against a hand simulation") {
    for (int seed = 0; seed < 30; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> d(-0.2, 1.0);
        TinyNet net{Tensor({2, 3}), Tensor({3, 2}), {}};
        for (auto& v : net.w1.values()) v = d(rng);
        for (auto& v : net.w2.values()) v = d(rng);
        Tensor x({1, 2}, std::vector<double>{d(rng) + 0.2, d(rng) + 0.2});
        auto out = net.window(Var::constant(x), Var::constant(net.w1), Var::constant(net.w2));
        auto ref = hand_trace(x, net.w1, net.w2, net.cfg);
        CHECK(out.value()[0] == ref[0]);
        CHECK(out.value()[1] == ref[1]);
        for (double v : out.value().values()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("window of one is a single step") {
    LIFConfig cfg;
    cfg.window = 1;
    Tensor x({1, 4}, std::vector<double>{0.1, 0.7, 0.5, 0.49});
    auto s = lif_step(resting_state({1, 4}), Var::constant(x), cfg);
    auto out = run_window([&](const Var& in) { return lif_step(resting_state({1, 4}), in, cfg).spikes; },
                          Var::constant(x), cfg);
    CHECK(out.value() == s.spikes.value());

    cfg.window = 8;
    SpikeState st = resting_state({1, 4});
    auto rate = run_window([&](const Var& in) { st = lif_step(st, in, cfg); return st.spikes; },
                           Var::constant(x), cfg);
    for (double v : rate.value().values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("backward through run_window equals an explicitly unrolled graph") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-0.3, 1.0);
    TinyNet net{Tensor({2, 3}), Tensor({3, 2}), {}};
    for (auto& v : net.w1.values()) v = d(rng);
    for (auto& v : net.w2.values()) v = d(rng);
    const Var x = Var::constant(Tensor({1, 2}, std::vector<double>{0.8, 0.6}));

    auto p1 = Var::parameter(net.w1), p2 = Var::parameter(net.w2);
    auto g = backward(sum(net.window(x, p1, p2)));

    auto q1 = Var::parameter(net.w1), q2 = Var::parameter(net.w2);
    SpikeState s1 = resting_state({1, 3}), s2 = resting_state({1, 2});
    Var total;
    for (std::size_t t = 0; t < net.cfg.window; ++t) {
        s1 = lif_step(s1, matmul(x, q1), net.cfg);
        s2 = lif_step(s2, matmul(s1.spikes, q2), net.cfg);
        total = t == 0 ? s2.spikes : add(total, s2.spikes);
    }
    auto h = backward(sum(scale(total, 1.0 / net.cfg.window)));
    CHECK(g.of(p1) == h.of(q1));
    CHECK(g.of(p2) == h.of(q2));
}
