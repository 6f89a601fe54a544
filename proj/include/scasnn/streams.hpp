#pragma once

// Labeled image sources and task-stream construction.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scasnn/task.hpp"

namespace scasnn {

struct LabeledImages {
    std::vector<Tensor> images;  // each C x H x W in [0, 1]
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

struct ImageSet {
    LabeledImages train;
    LabeledImages test;
};

/// IDX image file (magic 0x00000803, big-endian extents, unsigned bytes).
/// Images come back as 1 x rows x cols scaled by 1/255.
std::vector<Tensor> load_idx_images(const std::string& path);
/// IDX label file (magic 0x00000801).
std::vector<int> load_idx_labels(const std::string& path);
/// Pairs an image file with its label file; counts must agree.
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);

/// CSV with a header row, then `label,p0,p1,...` rows of 0..255 pixel
/// values reshaped to `shape`.
LabeledImages load_csv(const std::string& path, const Shape& shape);

/// Seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed);

/// Task i applies pixel permutation i (task 0 keeps the identity). Labels
/// repeat across tasks and are namespaced by task id.
std::vector<TaskDescriptor> permuted_stream(const ImageSet& data, std::size_t tasks, std::uint64_t seed);

/// Disjoint groups of `per_task` classes in ascending label order, or in a
/// seeded shuffled order when `shuffle` is set.
std::vector<TaskDescriptor> split_stream(const ImageSet& data, std::size_t per_task, bool shuffle = false,
                                         std::uint64_t seed = 0);

/// Counter-clockwise rotation about the image center, bilinear, zero fill.
Tensor rotate_image(const Tensor& image, double degrees);
std::vector<TaskDescriptor> rotated_stream(const ImageSet& data, std::span<const double> angles);

struct GaussianClass {
    std::vector<double> mean;
    /// Row-major d x d, symmetric positive definite.
    std::vector<double> covariance;
};

struct SyntheticSpec {
    /// tasks[t][k] is the k-th class of task t.
    std::vector<std::vector<GaussianClass>> tasks;
    /// C x H x W grid the d = C*H*W dimensional samples are reshaped to.
    Shape grid;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 50;
    std::uint64_t seed = 0;
    /// Label every task 0..k-1 under its own id, or number classes globally.
    bool namespaced = true;
};

/// Gaussian-cluster tasks. Throws ConfigError on a covariance that is not
/// positive definite.
std::vector<TaskDescriptor> synthetic_stream(const SyntheticSpec& spec);

/// KL(a || b) between two multivariate normals.
double gaussian_kl(const GaussianClass& a, const GaussianClass& b);

/// Isotropic class with the given mean and variance.
GaussianClass isotropic(std::vector<double> mean, double variance);

/// Random prototypes in [0.15, 0.85] plus isotropic noise, one class per
/// label, as a single labeled image set.
ImageSet prototype_images(std::size_t classes, const Shape& shape, std::size_t train_per_class,
                          std::size_t test_per_class, double noise, std::uint64_t seed);

/// A0, B0, A1, B1, ... with task ids renumbered from 0.
std::vector<TaskDescriptor> mixed_alternating(std::vector<TaskDescriptor> a, std::vector<TaskDescriptor> b);

}  // namespace scasnn
