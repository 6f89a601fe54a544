#pragma once

// Experiment configuration: INI-style file with one section per module.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "scasnn/metrics.hpp"
#include "scasnn/streams.hpp"
#include "scasnn/trainer.hpp"

namespace scasnn {

enum class StreamKind { Permuted, Split, Rotated, Synthetic, Mixed };
enum class SourceKind { Prototype, Idx, Csv };

struct StreamConfig {
    StreamKind kind = StreamKind::Permuted;
    std::size_t tasks = 5;
    SourceKind source = SourceKind::Prototype;
    std::string train_images, train_labels, test_images, test_labels;  // idx
    std::string train_csv, test_csv;
    Shape shape{1, 28, 28};
    /// Keep at most this many samples per split (0 keeps all), taken evenly.
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;

    std::size_t classes_per_task = 2;  // split
    bool shuffle_classes = false;
    std::vector<double> angles{0, 15, 30, 45, 60};  // rotated

    // prototype source, and the second source of a mixed stream
    std::size_t prototype_classes = 10;
    std::size_t prototype_train_per_class = 100;
    std::size_t prototype_test_per_class = 50;
    double prototype_noise = 0.15;

    // synthetic Gaussian tasks
    std::size_t synthetic_classes = 2;
    std::size_t synthetic_train_per_class = 100;
    std::size_t synthetic_test_per_class = 50;
    double synthetic_variance = 0.02;
};

/// Two convolutional then two dense layers; sized for 28 x 28 inputs.
std::vector<LayerSpec> default_layers();

struct RunConfig {
    RunConfig() { train.arch.layers = default_layers(); }

    StreamConfig stream;
    TrainConfig train;
    EnergyMode energy_mode = EnergyMode::Snn;
    EnergyConfig energy;
    std::string out_dir = "out";
    bool write_checkpoint = true;
    std::uint64_t seed = 0;
};

/// Throws ConfigError naming the line (syntax) or the [section] key (values).
RunConfig parse_run_config(std::istream& in, const std::string& name = "config");
RunConfig load_run_config(const std::string& path);

/// Every key with its effective value, in file order, as INI text that
/// parses back to the same configuration.
std::string to_ini(const RunConfig& cfg);

/// Sets the run seed everywhere it is consumed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

/// Throws DataError naming the first dataset file that cannot be read.
void check_inputs(const RunConfig& cfg);

/// Loads or generates data and builds the task stream.
std::vector<TaskDescriptor> build_stream(const RunConfig& cfg);

}  // namespace scasnn
