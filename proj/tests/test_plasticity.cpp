#include <cmath>
#include <random>

#include "doctest.h"
#include "scasnn/errors.hpp"
#include "scasnn/plasticity.hpp"

using namespace scasnn;

namespace {

SimilarityRecord rec(int old_task, double s) {
    SimilarityRecord r;
    r.new_task = 9;
    r.old_task = old_task;
    r.s = s;
    return r;
}

// Two old tasks, each owning 2 units per layer, then a third task with 2
// new units per layer.
DynamicNetwork three_task_net() {
    Architecture a;
    a.input = {1, 2, 2};
    a.layers = {{LayerKind::Dense, 2}, {LayerKind::Dense, 2}};
    const std::vector<int> cls{0, 1};
    auto net = DynamicNetwork::init_first_task(a, 0, cls, 3);
    const std::size_t grow[] = {2, 2};
    net.expand(1, grow, cls);
    net.expand(2, grow, cls);
    return net;
}

}  // namespace

TEST_CASE("association") {
    const SimilarityRecord two[] = {rec(0, 0.74), rec(1, 0.29)};
    CHECK(association(two) == 0.29);
    const SimilarityRecord one[] = {rec(0, 0.4)};
    CHECK(association(one) == 0.4);
    const SimilarityRecord same[] = {rec(0, 0.3), rec(1, 0.3), rec(2, 0.3)};
    CHECK(association(same) == 0.3);
    CHECK_THROWS_AS(association(std::span<const SimilarityRecord>{}), ContractError);
}

TEST_CASE("expansion_counts") {
    ExpansionPolicy p{5.0, {100, 100, 7}};
    CHECK(expansion_counts(0.0, p) == std::vector<std::size_t>{0, 0, 0});
    CHECK(expansion_counts(0.29, p)[0] == 76);
    CHECK(std::floor(100 * (1 - std::exp(-1.45))) == 76);
    CHECK(expansion_counts(1.0, p)[0] == 99);
    CHECK(expansion_counts(1.0 - 1e-12, p)[1] == 99);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ud(0, 1);
    for (int i = 0; i < 500; ++i) {
        double a = ud(rng), b = ud(rng);
        if (a > b) std::swap(a, b);
        auto ca = expansion_counts(a, p), cb = expansion_counts(b, p);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(ca[l] <= cb[l]);
            CHECK(cb[l] <= p.max_per_layer[l]);
        }
    }
    CHECK_THROWS_AS(expansion_counts(0.5, ExpansionPolicy{0.0, {1}}), ConfigError);
}

TEST_CASE("min_max_normalize") {
    CHECK(min_max_normalize(std::vector<double>{2, 4, 6}) == std::vector<double>{0, 0.5, 1});
    CHECK(min_max_normalize(std::vector<double>{3, 3}) == std::vector<double>{0.5, 0.5});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ud(-5, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(9);
        for (auto& x : v) x = ud(rng);
        double lo = v[0], hi = v[0];
        for (double x : v) lo = x < lo ? x : lo;
        for (double x : v) hi = x > hi ? x : hi;
        auto n = min_max_normalize(v);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(n[i] == doctest::Approx((v[i] - lo) / (hi - lo)));
    }
}

TEST_CASE("relatedness update traces") {
    RelatednessState st;
    auto& u = st.units();
    // Index 0 gets Norm 1, index 1 Norm 0 in the same layer.
    u.push_back({0, 0, 0, 0.0, 5.0, 1.0});
    u.push_back({0, 0, 1, 0.0, 1.0, 0.71});
    auto doomed = st.update(0);
    CHECK(u[0].r == -1.0);
    CHECK(u[1].r == doctest::Approx(0.71));
    CHECK(doomed == std::vector<std::size_t>{0});
    CHECK(u[0].grad_accum == 0.0);

    // The epoch factor shrinks late updates.
    const double early = std::exp(-0.0 / 2), late = std::exp(-6.0 / 2);
    CHECK(late <= std::exp(-3.0) * early + 1e-15);

    ReuseConfig rc;
    CHECK(rc.bias(0) == 0.2);
    CHECK(rc.bias(1) == doctest::Approx(0.1));
    CHECK(rc.bias(2) == doctest::Approx(0.0));
    CHECK(rc.bias(100) == -1.0);
}

TEST_CASE("relatedness dichotomy") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(0.01, 0.99);
    for (int trial = 0; trial < 50; ++trial) {
        const double rho = ud(rng);
        RelatednessState st;
        st.units().push_back({0, 0, 0, 0.0, 0.0, rho});
        st.units().push_back({0, 0, 1, 0.0, 0.0, rho});
        double prev_high = 0.0;
        bool doomed_high = false;
        for (std::size_t e = 0; e < 40; ++e) {
            st.units()[0].grad_accum = 1.0;  // Norm 1
            st.units()[1].grad_accum = 0.0;  // Norm 0
            auto d = st.update(e);
            // The 0.99 leak eventually outweighs the shrinking drive, so the
            // decrease is strict only over the early epochs.
            if (e < 7) CHECK(st.units()[0].r < prev_high);
            CHECK(st.units()[0].r < 0.0);
            prev_high = st.units()[0].r;
            doomed_high = doomed_high || (!d.empty() && d[0] == 0);
            CHECK(st.units()[1].r >= 0.0);
        }
        CHECK(doomed_high);
    }
}

TEST_CASE("larger similarity dooms a superset") {
    auto net = three_task_net();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ud(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const double lo = ud(rng) * 0.5, hi = lo + 0.3;
        const SimilarityRecord a[] = {rec(0, lo), rec(1, lo)};
        const SimilarityRecord b[] = {rec(0, hi), rec(1, hi)};
        RelatednessState sa(net, 2, a, ReuseConfig{}), sb(net, 2, b, ReuseConfig{});
        REQUIRE(sa.units().size() == 8);
        std::vector<double> trace(8);
        for (auto& v : trace) v = ud(rng);
        for (std::size_t i = 0; i < 8; ++i) {
            sa.units()[i].grad_accum = trace[i];
            sb.units()[i].grad_accum = trace[i];
        }
        auto da = sa.update(0), db = sb.update(0);
        for (auto i : da) CHECK(std::find(db.begin(), db.end(), i) != db.end());
        CHECK(sa.units()[0].rho == doctest::Approx(1.0 - lo + 0.2));
    }
}

TEST_CASE("apply_pruning and pruning rates") {
    auto net = three_task_net();
    const SimilarityRecord sims[] = {rec(0, 0.1), rec(1, 0.8)};
    RelatednessState st(net, 2, sims, ReuseConfig{});
    REQUIRE(st.units().size() == 8);
    apply_pruning(net, st, std::vector<std::size_t>{});
    for (const auto& r : st.prune_rates(net)) CHECK(r.pruned == 0);

    // Hand count: units are ordered by population then layer. Prune task 1's
    // final-layer units and one of task 0's first-layer units.
    std::vector<std::size_t> doomed;
    for (std::size_t i = 0; i < st.units().size(); ++i) {
        const auto& u = st.units()[i];
        if ((u.population == 1 && u.layer == 1) || (u.population == 0 && u.layer == 0 && u.unit == 0))
            doomed.push_back(i);
    }
    apply_pruning(net, st, doomed);
    auto rates = st.prune_rates(net);
    REQUIRE(rates.size() == 2);
    CHECK(rates[0].population == 0);
    CHECK(rates[0].units == 4);
    CHECK(rates[0].pruned == 1);
    CHECK(rates[0].rate() == 0.25);
    CHECK(rates[1].pruned == 2);
    CHECK(rates[1].rate() == 0.5);
    const auto& m = net.mask(2);
    CHECK(m.head[2] == 0);
    CHECK(m.head[3] == 0);
    // Task 0's unit 0 no longer reaches task 2's own layer-1 units.
    CHECK(m.connections[1][4 * 6 + 0] == 0);
    CHECK(m.connections[1][5 * 6 + 0] == 0);

    // Pruning every old unit leaves only the new population on the head path.
    std::vector<std::size_t> all(st.units().size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    apply_pruning(net, st, all);
    CHECK(net.mask(2).head == Bits{0, 0, 0, 0, 1, 1});
    CHECK(net.mask(2).active[0] == Bits{0, 0, 0, 0, 1, 1});
}
