#include <sstream>

#include "doctest.h"
#include "scasnn/errors.hpp"
#include "scasnn/report.hpp"
#include "scasnn/run_config.hpp"

using namespace scasnn;

namespace {

RunConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in, "test.ini");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kSmall = R"(
[run]
seed = 5
[stream]
kind = synthetic
tasks = 2
shape = 1,3,3
synthetic_classes = 2
synthetic_train_per_class = 20
synthetic_test_per_class = 5
[network]
layers = dense:10, dense:6
[trainer]
epochs = 3
batch = 8
lr = 0.01
[replay]
capacity = 20
calibration_epochs = 2
)";

}  // namespace

TEST_CASE("defaults round-trip through text") {
    const RunConfig d;
    const std::string text = to_ini(d);
    CHECK(to_ini(parse(text)) == text);
    CHECK(text.find("gamma = 0.999") != std::string::npos);
    CHECK(text.find("capacity = 2000") != std::string::npos);
    CHECK(text.find("tau = 0.2") != std::string::npos);
    CHECK(text.find("e_mac = 4.6") != std::string::npos);
}

TEST_CASE("values land in the right places") {
    const auto c = parse(kSmall);
    CHECK(c.seed == 5);
    CHECK(c.train.seed == 5);
    CHECK(c.stream.kind == StreamKind::Synthetic);
    CHECK(c.train.arch.input == Shape{1, 3, 3});
    REQUIRE(c.train.arch.layers.size() == 2);
    CHECK(c.train.arch.layers[1].units == 6);
    CHECK(c.train.adam.lr == 0.01);
    CHECK(c.energy.window == c.train.lif.window);

    const auto conv = parse("[network]\nlayers = conv:4:3:1:1,dense:8\n[spiking]\nreset = literal\n");
    CHECK(conv.train.arch.layers[0].kind == LayerKind::Conv);
    CHECK(conv.train.lif.reset == ResetMode::Literal);
}

TEST_CASE("errors name the line or key") {
    CHECK(error_of("[trainer]\nepochs = 3\nepochs = 4\n").find("test.ini:3") != std::string::npos);
    CHECK(error_of("[trainer]\nepoch = 3\n").find("[trainer] epoch") != std::string::npos);
    CHECK(error_of("[trainer]\nepochs = three\n").find("[trainer] epochs") != std::string::npos);
    CHECK(error_of("[trainer]\nlr = -1\n").find("lr > 0") != std::string::npos);
    CHECK(error_of("[similarity]\ngamma = 1.5\n").find("gamma") != std::string::npos);
    CHECK(error_of("[bogus]\nx = 1\n").find("[bogus]") != std::string::npos);
    CHECK(error_of("[network]\nlayers = pool:2\n").find("[network] layers") != std::string::npos);
    CHECK(error_of("[stream]\nsource = idx\n").find("[stream]") != std::string::npos);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("missing dataset files are reported before any work") {
    auto c = parse("[stream]\nsource = idx\ntrain_images = /no/a\ntrain_labels = /no/b\n"
                   "test_images = /no/c\ntest_labels = /no/d\n");
    CHECK_THROWS_AS(check_inputs(c), DataError);
    CHECK_THROWS_AS(build_stream(c), DataError);
}

TEST_CASE("streams from config") {
    auto c = parse(kSmall);
    auto tasks = build_stream(c);
    REQUIRE(tasks.size() == 2);
    CHECK(tasks[0].train.size() == 40);
    CHECK(tasks[1].train[0].input.shape() == Shape{1, 3, 3});

    auto p = parse("[stream]\nshape = 1,6,6\ntasks = 3\nprototype_classes = 4\nprototype_train_per_class = 5\n"
                   "prototype_test_per_class = 2\ntrain_limit = 7\n");
    auto pt = build_stream(p);
    REQUIRE(pt.size() == 3);
    CHECK(pt[2].train.size() == 7);
    CHECK(pt[2].test.size() == 8);

    auto s = parse("[stream]\nkind = split\nshape = 1,6,6\ntasks = 2\nprototype_classes = 6\nclasses_per_task = 3\n"
                   "prototype_train_per_class = 2\nprototype_test_per_class = 2\n");
    auto st = build_stream(s);
    CHECK(st[1].classes == std::vector<int>{3, 4, 5});

    auto m = parse("[stream]\nkind = mixed\nshape = 1,6,6\ntasks = 3\nprototype_train_per_class = 2\n"
                   "prototype_test_per_class = 1\n");
    auto mt = build_stream(m);
    REQUIRE(mt.size() == 3);
    CHECK_FALSE(mt[0].train[0].input == mt[1].train[0].input);
}

TEST_CASE("report files") {
    auto c = parse(kSmall);
    const auto tasks = build_stream(c);
    ContinualTrainer a(c.train), b(c.train);
    const auto ra = run_stream(a, tasks);
    const auto rb = run_stream(b, tasks);
    const auto fa = run_files(c, ra, a, 1.0), fb = run_files(c, rb, b, 2.0);
    for (const char* name : {"accuracy.csv", "summary.csv", "similarity.csv", "pruning.csv", "expansion.csv",
                             "energy.csv", "checkpoint.bin"}) {
        REQUIRE(fa.count(name) == 1);
        CHECK(fa.at(name) == fb.at(name));
    }
    // Two tasks give a lower-triangular 2 x 2 matrix: three entries.
    const auto& acc = fa.at("accuracy.csv");
    CHECK(std::count(acc.begin(), acc.end(), '\n') == 4);
    CHECK(fa.at("report.json").find("\"til_matrix\"") != std::string::npos);
    CHECK(fa.at("report.json").find("\"checksums_fnv1a\"") != std::string::npos);
    CHECK(std::count(fa.at("energy.csv").begin(), fa.at("energy.csv").end(), '\n') == 3);

    TaskLog log;
    log.prune_rates = {{0, 10, 2}, {1, 30, 6}};
    CHECK(overall_pruning_rate(log) == doctest::Approx(0.2));
}
