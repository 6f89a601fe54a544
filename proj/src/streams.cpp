#include "scasnn/streams.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::string& buf, std::size_t at, const std::string& path) {
    if (buf.size() < at + 4) throw FormatError(path + ": truncated header", buf.size());
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(buf[at + i]);
    return v;
}

void check_magic(const std::string& buf, std::uint32_t want, const std::string& path) {
    const std::uint32_t magic = be32(buf, 0, path);
    if (magic != want) {
        std::ostringstream os;
        os << path << ": bad magic 0x" << std::hex << magic << ", expected 0x" << want;
        throw FormatError(os.str(), 0);
    }
}

TaskDescriptor make_task(int id, std::vector<int> classes, bool namespaced) {
    TaskDescriptor t;
    t.id = id;
    t.classes = std::move(classes);
    t.namespaced_labels = namespaced;
    return t;
}

std::vector<int> sorted_labels(const LabeledImages& s) {
    std::set<int> u(s.labels.begin(), s.labels.end());
    return {u.begin(), u.end()};
}

void require_nonempty(const ImageSet& data, const char* what) {
    if (data.train.size() == 0 || data.test.size() == 0)
        throw DataError(std::string(what) + ": empty train or test set");
}

Tensor permute(const Tensor& img, const std::vector<std::size_t>& perm) {
    Tensor out(img.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = img[perm[i]];
    return out;
}

}  // namespace

std::vector<Tensor> load_idx_images(const std::string& path) {
    const std::string buf = read_file(path);
    check_magic(buf, 0x00000803, path);
    const std::size_t n = be32(buf, 4, path), rows = be32(buf, 8, path), cols = be32(buf, 12, path);
    if (rows == 0 || cols == 0) throw FormatError(path + ": zero image extent", 8);
    const std::size_t per = rows * cols;
    if (buf.size() - 16 < n * per)
        throw FormatError(path + ": truncated payload, " + std::to_string(n) + " images need " +
                              std::to_string(16 + n * per) + " bytes",
                          buf.size());
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t({1, rows, cols});
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + 16 + i * per);
        for (std::size_t j = 0; j < per; ++j) t[j] = p[j] / 255.0;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
    const std::string buf = read_file(path);
    check_magic(buf, 0x00000801, path);
    const std::size_t n = be32(buf, 4, path);
    if (buf.size() - 8 < n) throw FormatError(path + ": truncated payload", buf.size());
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<unsigned char>(buf[8 + i]);
    return out;
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
    LabeledImages s{load_idx_images(images_path), load_idx_labels(labels_path)};
    if (s.images.size() != s.labels.size())
        throw DataError(images_path + " holds " + std::to_string(s.images.size()) + " images but " + labels_path +
                        " holds " + std::to_string(s.labels.size()) + " labels");
    return s;
}

LabeledImages load_csv(const std::string& path, const Shape& shape) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    const std::size_t per = shape_size(shape);
    LabeledImages out;
    std::string line;
    std::size_t line_no = 0, offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (line_no == 1 || line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || !std::isfinite(v))
                throw FormatError(path + ": line " + std::to_string(line_no) + ": bad number '" + cell + "'", here);
            cells.push_back(v);
        }
        if (cells.size() != per + 1)
            throw FormatError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                  " fields, expected " + std::to_string(per + 1),
                              here);
        Tensor t(shape);
        for (std::size_t j = 0; j < per; ++j) {
            if (cells[j + 1] < 0 || cells[j + 1] > 255)
                throw FormatError(path + ": line " + std::to_string(line_no) + ": pixel outside 0..255", here);
            t[j] = cells[j + 1] / 255.0;
        }
        out.images.push_back(std::move(t));
        out.labels.push_back(static_cast<int>(cells[0]));
    }
    if (line_no == 0) throw FormatError(path + ": missing header row", 0);
    return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(p[i - 1], p[d(rng)]);
    }
    return p;
}

std::vector<TaskDescriptor> permuted_stream(const ImageSet& data, std::size_t tasks, std::uint64_t seed) {
    if (tasks == 0) throw ConfigError("permuted stream: task count must be at least 1");
    require_nonempty(data, "permuted stream");
    const std::size_t n = data.train.images[0].size();
    const auto classes = sorted_labels(data.train);
    std::vector<TaskDescriptor> out;
    for (std::size_t t = 0; t < tasks; ++t) {
        std::vector<std::size_t> perm(n);
        if (t == 0)
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        else
            perm = random_permutation(n, seed + 0x9e3779b97f4a7c15ULL * t);
        auto task = make_task(static_cast<int>(t), classes, true);
        for (std::size_t i = 0; i < data.train.size(); ++i)
            task.train.push_back({permute(data.train.images[i], perm), data.train.labels[i], task.id});
        for (std::size_t i = 0; i < data.test.size(); ++i)
            task.test.push_back({permute(data.test.images[i], perm), data.test.labels[i], task.id});
        out.push_back(std::move(task));
    }
    return out;
}

std::vector<TaskDescriptor> split_stream(const ImageSet& data, std::size_t per_task, bool shuffle,
                                         std::uint64_t seed) {
    require_nonempty(data, "split stream");
    auto classes = sorted_labels(data.train);
    if (per_task == 0 || classes.size() % per_task != 0)
        throw ConfigError("split stream: " + std::to_string(classes.size()) + " classes do not divide into groups of " +
                          std::to_string(per_task));
    if (shuffle) {
        const auto perm = random_permutation(classes.size(), seed);
        std::vector<int> shuffled(classes.size());
        for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = classes[perm[i]];
        classes = std::move(shuffled);
    }
    std::map<int, std::size_t> task_of;
    std::vector<TaskDescriptor> out;
    for (std::size_t t = 0; t < classes.size() / per_task; ++t) {
        std::vector<int> group(classes.begin() + t * per_task, classes.begin() + (t + 1) * per_task);
        for (int c : group) task_of[c] = t;
        out.push_back(make_task(static_cast<int>(t), std::move(group), false));
    }
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const auto t = task_of.at(data.train.labels[i]);
        out[t].train.push_back({data.train.images[i], data.train.labels[i], static_cast<int>(t)});
    }
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        auto it = task_of.find(data.test.labels[i]);
        if (it == task_of.end())
            throw DataError("split stream: test label " + std::to_string(data.test.labels[i]) +
                            " never appears in training");
        out[it->second].test.push_back({data.test.images[i], data.test.labels[i], static_cast<int>(it->second)});
    }
    return out;
}

Tensor rotate_image(const Tensor& image, double degrees) {
    if (image.rank() != 3) throw DimensionError("rotate_image: expected C x H x W, got " + shape_string(image.shape()));
    if (!std::isfinite(degrees)) throw ConfigError("rotate_image: angle must be finite");
    double turns = std::fmod(degrees, 360.0);
    if (turns < 0) turns += 360.0;
    double c, s;
    // Quarter turns are exact so 90-degree symmetries hold bit for bit.
    if (turns == 0.0) c = 1, s = 0;
    else if (turns == 90.0) c = 0, s = 1;
    else if (turns == 180.0) c = -1, s = 0;
    else if (turns == 270.0) c = 0, s = -1;
    else {
        const double rad = turns * std::numbers::pi / 180.0;
        c = std::cos(rad);
        s = std::sin(rad);
    }
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const double cy = (static_cast<double>(H) - 1) / 2, cx = (static_cast<double>(W) - 1) / 2;
    Tensor out(image.shape());
    auto pixel = [&](std::size_t ch, long y, long x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return 0.0;
        return image[(ch * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)];
    };
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            // Inverse map: rotate the output coordinate back by -angle.
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = c * dx - s * dy + cx, sy = s * dx + c * dy + cy;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            for (std::size_t ch = 0; ch < C; ++ch) {
                double v = (1 - ax) * (1 - ay) * pixel(ch, y0, x0);
                if (ax != 0) v += ax * (1 - ay) * pixel(ch, y0, x0 + 1);
                if (ay != 0) v += (1 - ax) * ay * pixel(ch, y0 + 1, x0);
                if (ax != 0 && ay != 0) v += ax * ay * pixel(ch, y0 + 1, x0 + 1);
                out[(ch * H + y) * W + x] = v;
            }
        }
    return out;
}

std::vector<TaskDescriptor> rotated_stream(const ImageSet& data, std::span<const double> angles) {
    if (angles.empty()) throw ConfigError("rotated stream: no angles");
    require_nonempty(data, "rotated stream");
    const auto classes = sorted_labels(data.train);
    std::vector<TaskDescriptor> out;
    for (std::size_t t = 0; t < angles.size(); ++t) {
        auto task = make_task(static_cast<int>(t), classes, true);
        for (std::size_t i = 0; i < data.train.size(); ++i)
            task.train.push_back({rotate_image(data.train.images[i], angles[t]), data.train.labels[i], task.id});
        for (std::size_t i = 0; i < data.test.size(); ++i)
            task.test.push_back({rotate_image(data.test.images[i], angles[t]), data.test.labels[i], task.id});
        out.push_back(std::move(task));
    }
    return out;
}

namespace {

Eigen::MatrixXd covariance_of(const GaussianClass& g, std::size_t d) {
    if (g.mean.size() != d || g.covariance.size() != d * d)
        throw ConfigError("synthetic stream: class parameters do not match dimension " + std::to_string(d));
    Eigen::MatrixXd m(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = g.covariance[i * d + j];
    if (!m.isApprox(m.transpose(), 1e-12)) throw ConfigError("synthetic stream: covariance is not symmetric");
    return m;
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw ConfigError("synthetic stream: covariance is not positive definite");
    const auto diag = llt.matrixL().toDenseMatrix().diagonal();
    if ((diag.array() <= 0.0).any()) throw ConfigError("synthetic stream: covariance is not positive definite");
    return llt;
}

}  // namespace

GaussianClass isotropic(std::vector<double> mean, double variance) {
    const std::size_t d = mean.size();
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) cov[i * d + i] = variance;
    return {std::move(mean), std::move(cov)};
}

double gaussian_kl(const GaussianClass& a, const GaussianClass& b) {
    const std::size_t d = a.mean.size();
    const Eigen::MatrixXd sa = covariance_of(a, d), sb = covariance_of(b, d);
    const auto la = factor(sa), lb = factor(sb);
    Eigen::VectorXd diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = b.mean[i] - a.mean[i];
    const double trace = lb.solve(sa).trace();
    const double maha = diff.dot(lb.solve(diff));
    const auto log_det = [](const Eigen::LLT<Eigen::MatrixXd>& l) {
        return 2.0 * l.matrixL().toDenseMatrix().diagonal().array().log().sum();
    };
    return 0.5 * (trace + maha - static_cast<double>(d) + log_det(lb) - log_det(la));
}

std::vector<TaskDescriptor> synthetic_stream(const SyntheticSpec& spec) {
    if (spec.tasks.empty()) throw ConfigError("synthetic stream: task count must be at least 1");
    const std::size_t d = shape_size(spec.grid);
    if (spec.grid.size() != 3 || d == 0) throw ConfigError("synthetic stream: grid must be C x H x W");
    if (spec.train_per_class == 0 || spec.test_per_class == 0)
        throw ConfigError("synthetic stream: per-class sizes must be positive");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<TaskDescriptor> out;
    int next_label = 0;
    for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
        const auto& classes = spec.tasks[t];
        if (classes.empty()) throw ConfigError("synthetic stream: task " + std::to_string(t) + " has no classes");
        std::vector<int> labels;
        for (std::size_t k = 0; k < classes.size(); ++k)
            labels.push_back(spec.namespaced ? static_cast<int>(k) : next_label++);
        auto task = make_task(static_cast<int>(t), labels, spec.namespaced);
        for (std::size_t k = 0; k < classes.size(); ++k) {
            const auto llt = factor(covariance_of(classes[k], d));
            const Eigen::MatrixXd L = llt.matrixL();
            Eigen::Map<const Eigen::VectorXd> mean(classes[k].mean.data(), static_cast<Eigen::Index>(d));
            auto draw = [&] {
                Eigen::VectorXd z(d);
                for (std::size_t i = 0; i < d; ++i) z[i] = nd(rng);
                const Eigen::VectorXd x = mean + L * z;
                return Tensor(spec.grid, std::vector<double>(x.data(), x.data() + d));
            };
            for (std::size_t i = 0; i < spec.train_per_class; ++i) task.train.push_back({draw(), labels[k], task.id});
            for (std::size_t i = 0; i < spec.test_per_class; ++i) task.test.push_back({draw(), labels[k], task.id});
        }
        // Interleave classes so strided probes and batches see all of them.
        const auto shuffle = [&](std::vector<Sample>& v) {
            const auto perm = random_permutation(v.size(), rng());
            std::vector<Sample> s(v.size());
            for (std::size_t i = 0; i < perm.size(); ++i) s[i] = std::move(v[perm[i]]);
            v = std::move(s);
        };
        shuffle(task.train);
        shuffle(task.test);
        out.push_back(std::move(task));
    }
    return out;
}

ImageSet prototype_images(std::size_t classes, const Shape& shape, std::size_t train_per_class,
                          std::size_t test_per_class, double noise, std::uint64_t seed) {
    if (classes == 0 || train_per_class == 0 || test_per_class == 0 || !(noise >= 0.0))
        throw ConfigError("prototype images: classes, sizes and noise must be positive");
    const std::size_t d = shape_size(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.15, 0.85);
    std::normal_distribution<double> nd(0.0, noise);
    std::vector<std::vector<double>> protos(classes, std::vector<double>(d));
    for (auto& p : protos)
        for (auto& v : p) v = ud(rng);
    ImageSet out;
    auto fill = [&](LabeledImages& set, std::size_t per_class) {
        for (std::size_t i = 0; i < per_class; ++i)
            for (std::size_t c = 0; c < classes; ++c) {
                Tensor t(shape);
                for (std::size_t j = 0; j < d; ++j) t[j] = std::clamp(protos[c][j] + nd(rng), 0.0, 1.0);
                set.images.push_back(std::move(t));
                set.labels.push_back(static_cast<int>(c));
            }
    };
    fill(out.train, train_per_class);
    fill(out.test, test_per_class);
    return out;
}

std::vector<TaskDescriptor> mixed_alternating(std::vector<TaskDescriptor> a, std::vector<TaskDescriptor> b) {
    std::vector<TaskDescriptor> out;
    const std::size_t n = std::max(a.size(), b.size());
    auto push = [&](TaskDescriptor t) {
        t.id = static_cast<int>(out.size());
        // Both sources reuse labels, so every task is scoped to its own id.
        t.namespaced_labels = t.namespaced_labels || (!a.empty() && !b.empty());
        for (auto& s : t.train) s.task = t.id;
        for (auto& s : t.test) s.task = t.id;
        out.push_back(std::move(t));
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (i < a.size()) push(std::move(a[i]));
        if (i < b.size()) push(std::move(b[i]));
    }
    return out;
}

}  // namespace scasnn
