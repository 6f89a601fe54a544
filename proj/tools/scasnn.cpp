// Batch runner: learn a task stream from a config file, or re-evaluate a checkpoint.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "scasnn/errors.hpp"
#include "scasnn/report.hpp"
#include "scasnn/run_config.hpp"

using namespace scasnn;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kRuntime = 3;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::string out;
    bool literal_reset = false;
    bool literal_map = false;
};

RunConfig configure(const std::string& path, const Overrides& o) {
    RunConfig cfg = load_run_config(path);
    if (o.seed) apply_seed(cfg, *o.seed);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.literal_reset) cfg.train.lif.reset = ResetMode::Literal;
    if (o.literal_map) cfg.train.similarity.map = SimilarityMap::Literal;
    return cfg;
}

// Bad configs, data, checkpoints or stream mismatches; anything else is a runtime failure.
bool invalid_input(const std::exception& e) {
    return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e) ||
           dynamic_cast<const FormatError*>(&e) || dynamic_cast<const LookupError*>(&e) ||
           dynamic_cast<const DimensionError*>(&e);
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int run(const std::string& config_path, const Overrides& o) {
    RunConfig cfg;
    std::vector<TaskDescriptor> tasks;
    try {
        cfg = configure(config_path, o);
        tasks = build_stream(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invalid_input(e) ? kInvalid : kRuntime;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        ContinualTrainer trainer(cfg.train);
        StreamResult r;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            r.logs.push_back(trainer.learn_task(tasks[i]));
            const auto seen = std::span<const TaskDescriptor>(tasks).subspan(0, i + 1);
            r.til.push_back(trainer.til_evaluate(seen).per_task);
            r.cil.push_back(trainer.cil_evaluate(seen));
            const auto& log = r.logs.back();
            std::fprintf(stderr, "task %zu: loss %.4f  til %.4f  cil %.4f  A %.3f  pruned %.3f  %.1fs\n", i,
                         log.epochs.back().loss, mean(r.til.back()), r.cil.back(), log.association,
                         overall_pruning_rate(log), log.seconds);
            for (const auto& w : log.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_files(cfg.out_dir, run_files(cfg, r, trainer, seconds));
        std::printf("til_average %.6f\ncil_accuracy %.6f\ntil_forgetting %.6f\nreport %s/report.json\n",
                    mean(r.til.back()), r.cil.back(), forgetting(r.til).average, cfg.out_dir.c_str());
    } catch (const std::exception& e) {
        std::cerr << "error: run failed (seed " << cfg.seed << "): " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}

int evaluate(const std::string& checkpoint, const std::string& config_path, const Overrides& o) {
    try {
        const RunConfig cfg = configure(config_path, o);
        const auto tasks = build_stream(cfg);
        std::ifstream in(checkpoint, std::ios::binary);
        if (!in) throw DataError("cannot read checkpoint " + checkpoint);
        const ContinualTrainer trainer = ContinualTrainer::load(in, cfg.train);
        if (trainer.tasks_learned() != tasks.size())
            throw DataError("checkpoint holds " + std::to_string(trainer.tasks_learned()) + " tasks, stream has " +
                            std::to_string(tasks.size()));
        for (const auto& t : tasks)
            if (trainer.network().head(t.id).classes != t.classes)
                throw DataError("class list of task " + std::to_string(t.id) + " differs from the checkpoint");
        const EvalResult til = trainer.til_evaluate(tasks);
        const double cil = trainer.cil_evaluate(tasks);
        write_files(cfg.out_dir, evaluation_files(cfg, trainer, til, cil, checkpoint));
        std::printf("til_average %.6f\ncil_accuracy %.6f\n", til.average, cil);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invalid_input(e) ? kInvalid : kRuntime;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual learning with a self-expanding spiking network"};
    app.require_subcommand(1);
    Overrides o;
    std::string config, checkpoint;

    auto add_overrides = [&](CLI::App* cmd) {
        cmd->add_option("--seed", o.seed, "Override [run] seed");
        cmd->add_option("--out", o.out, "Override [output] dir");
        cmd->add_flag("--literal-reset", o.literal_reset, "Membrane update without spike reset");
        cmd->add_flag("--literal-similarity-map", o.literal_map, "Unclamped similarity map");
    };
    auto* run_cmd = app.add_subcommand("run", "Learn every task of the configured stream");
    run_cmd->add_option("config", config, "Config file")->required();
    add_overrides(run_cmd);
    auto* eval_cmd = app.add_subcommand("evaluate", "TIL and CIL metrics of a checkpoint");
    eval_cmd->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("config", config, "Config file")->required();
    add_overrides(eval_cmd);
    auto* defaults_cmd = app.add_subcommand("defaults", "Print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }
    if (*defaults_cmd) {
        std::cout << to_ini(RunConfig{});
        return kOk;
    }
    if (*run_cmd) return run(config, o);
    return evaluate(checkpoint, config, o);
}
