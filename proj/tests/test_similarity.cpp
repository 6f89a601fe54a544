#include <cmath>
#include <random>

#include "doctest.h"
#include "scasnn/errors.hpp"
#include "scasnn/similarity.hpp"

using namespace scasnn;

namespace {

Tensor rows(std::vector<std::vector<double>> r) {
    Tensor t({r.size(), r[0].size()});
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j < r[i].size(); ++j) t[i * r[0].size() + j] = r[i][j];
    return t;
}

// One Gaussian cluster per class, identity covariance.
Tensor gaussian_features(const std::vector<std::vector<double>>& means, std::size_t per_class, std::mt19937_64& rng,
                         std::vector<std::size_t>& labels) {
    std::normal_distribution<double> nd(0, 1);
    const std::size_t d = means[0].size();
    Tensor t({means.size() * per_class, d});
    labels.clear();
    for (std::size_t c = 0; c < means.size(); ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t row = c * per_class + i;
            for (std::size_t j = 0; j < d; ++j) t[row * d + j] = means[c][j] + nd(rng);
            labels.push_back(c);
        }
    return t;
}

}  // namespace

TEST_CASE("compute_anchors") {
    const std::size_t idx[] = {0, 1};
    auto a = compute_anchors(3, rows({{1, 2}, {3, 4}}), idx, 2);
    CHECK(a.task == 3);
    CHECK(a.means == rows({{1, 2}, {3, 4}}));

    const std::size_t same[] = {0, 0};
    CHECK(compute_anchors(0, rows({{1.5, -2}, {-1.5, 2}}), same, 1).means == Tensor({1, 2}, 0.0));

    const std::size_t gap[] = {0, 0};
    try {
        compute_anchors(0, rows({{1, 1}, {2, 2}}), gap, 2);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }

    // Streaming-sum oracle: running mean updated sample by sample.
    std::mt19937_64 rng(2);
    std::vector<std::size_t> labels;
    Tensor f = gaussian_features({{0, 0, 0}, {3, 1, 2}, {-1, 5, 0}}, 17, rng, labels);
    auto b = compute_anchors(1, f, labels, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> mean(3, 0.0);
        double n = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != c) continue;
            n += 1;
            for (std::size_t j = 0; j < 3; ++j) mean[j] += (f[i * 3 + j] - mean[j]) / n;
        }
        for (std::size_t j = 0; j < 3; ++j) CHECK(b.means[c * 3 + j] == doctest::Approx(mean[j]).epsilon(1e-12));
    }
    // Stored size is classes x width.
    CHECK(b.means.size() * sizeof(double) == 3 * 3 * sizeof(double));
}

TEST_CASE("kl_estimate basics") {
    // The sample sits halfway between the old anchor and its own class mean.
    FeatureAnchor p{0, rows({{0, 0}})};
    const std::size_t one[] = {0};
    CHECK(kl_estimate(rows({{1, 0}}), one, p, rows({{2, 0}}), 1.0).kl == doctest::Approx(0.0));

    // Re-fed identical features with gamma 1 give zero or below.
    std::mt19937_64 rng(4);
    std::vector<std::size_t> labels;
    Tensor f = gaussian_features({{0, 0}, {4, 4}}, 50, rng, labels);
    auto anchors = compute_anchors(0, f, labels, 2);
    auto self = kl_estimate(f, labels, anchors, anchors.means, 1.0);
    // Each sample's nearest anchor is at most as far as its own class mean.
    CHECK(self.kl <= 0.0);
    CHECK(std::abs(self.kl) < 0.05);
    CHECK_FALSE(self.degenerate);

    // gamma only shifts each class term by -log(gamma).
    auto g = kl_estimate(f, labels, anchors, anchors.means, 0.9);
    CHECK(g.kl == doctest::Approx(self.kl - 2 * std::log(0.9)).epsilon(1e-12));

    // All samples on both anchors.
    auto degenerate = kl_estimate(rows({{1, 1}}), one, FeatureAnchor{0, rows({{1, 1}})}, rows({{1, 1}}), 0.9);
    CHECK(degenerate.kl == 0.0);
    CHECK(degenerate.degenerate);

    // Narrower old anchors are zero-padded.
    auto padded = kl_estimate(rows({{3, 4, 0}}), one, FeatureAnchor{0, rows({{0, 0}})}, rows({{3, 4, 1}}), 1.0);
    CHECK(padded.kl == doctest::Approx(std::log(5.0)));

    CHECK_THROWS_AS(kl_estimate(rows({{1, 1}}), one, FeatureAnchor{0, rows({{1, 1, 1}})}, rows({{1, 1}}), 0.9),
                    DimensionError);
    CHECK_THROWS_AS(kl_estimate(rows({{1, 1}}), one, p, rows({{1, 1}}), 0.0), ConfigError);
}

TEST_CASE("kl_estimate follows the closed-form Gaussian ordering") {
    // KL(N(a, I) || N(b, I)) = |a - b|^2 / 2, so ordering by shift length is
    // the ground-truth ordering.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> ud(-1, 1);
        const std::size_t d = 8;
        std::vector<double> base(d), dir(d);
        double norm = 0;
        for (std::size_t j = 0; j < d; ++j) {
            base[j] = 3 * ud(rng);
            dir[j] = ud(rng);
            norm += dir[j] * dir[j];
        }
        for (auto& v : dir) v /= std::sqrt(norm);
        std::vector<std::size_t> old_labels;
        Tensor old = gaussian_features({base}, 200, rng, old_labels);
        auto anchors = compute_anchors(0, old, old_labels, 1);

        double previous = -1e300;
        for (double shift : {0.5, 2.0, 5.0}) {
            std::vector<double> mean = base;
            for (std::size_t j = 0; j < d; ++j) mean[j] += shift * dir[j];
            std::vector<std::size_t> labels;
            Tensor f = gaussian_features({mean}, 200, rng, labels);
            auto own = compute_anchors(1, f, labels, 1);
            const double kl = kl_estimate(f, labels, anchors, own.means, 0.999).kl;
            CHECK_MESSAGE(kl > previous, "seed " << seed << " shift " << shift);
            previous = kl;
        }
    }
}

TEST_CASE("similarity_score") {
    CHECK(similarity_score(0.0) == 0.0);
    CHECK(similarity_score(0.0, SimilarityMap::Literal) == 0.0);
    CHECK(similarity_score(0.5) == doctest::Approx(1 - std::exp(-1.0)));
    CHECK(similarity_score(0.5) == doctest::Approx(0.632).epsilon(1e-3));
    CHECK(similarity_score(50.0) <= 1.0);
    CHECK(similarity_score(50.0) > 0.999);
    CHECK(similarity_score(-3.0) == 0.0);
    CHECK(similarity_score(0.5, SimilarityMap::Literal) == doctest::Approx(1 - std::exp(1.0)));
    CHECK(similarity_score(-0.5, SimilarityMap::Literal) == -0.5);

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ud(0, 10);
    for (int i = 0; i < 1000; ++i) {
        double a = ud(rng), b = ud(rng);
        if (a > b) std::swap(a, b);
        const double sa = similarity_score(a), sb = similarity_score(b);
        CHECK(sa <= sb);
        CHECK(sa >= 0.0);
        CHECK(sb <= 1.0);
    }
}

TEST_CASE("similarity_vector on a first task is empty") {
    Architecture arch;
    arch.input = {1, 2, 2};
    arch.layers = {{LayerKind::Dense, 3}};
    const std::vector<int> classes{0, 1};
    auto net = DynamicNetwork::init_first_task(arch, 0, classes, 1);
    TaskDescriptor t0{0, classes, {{Tensor({1, 2, 2}, 0.5), 0, 0}}, {}, false};
    CHECK(similarity_vector(net, t0, SimilarityConfig{}, LIFConfig{}).empty());

    SimilarityConfig bad;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("probe_subset") {
    std::vector<Sample> s(10);
    for (int i = 0; i < 10; ++i) s[i].label = i;
    auto p = probe_subset(s, 4);
    REQUIRE(p.size() == 4);
    CHECK(p[0]->label == 0);
    CHECK(p[1]->label == 2);
    CHECK(p[3]->label == 7);
    CHECK(probe_subset(s, 512).size() == 10);
    CHECK(probe_subset(s, 0).size() == 10);
}
