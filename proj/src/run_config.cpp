#include "scasnn/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::uint64_t to_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto t = trim(s);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw ConfigError("expected a non-negative integer, got '" + s + "'");
    return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(const std::string& s) {
    const auto t = trim(s);
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (t.empty() || used != t.size()) throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

bool to_bool(const std::string& s) {
    const auto t = trim(s);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

template <class E>
E to_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> names) {
    std::string options;
    for (const auto& [n, v] : names) {
        if (trim(s) == n) return v;
        options += (options.empty() ? "" : ", ") + std::string(n);
    }
    throw ConfigError("expected one of " + options + ", got '" + s + "'");
}

template <class E>
std::string from_enum(E value, std::initializer_list<std::pair<const char*, E>> names) {
    for (const auto& [n, v] : names)
        if (v == value) return n;
    return "?";
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T, class F>
std::string join(const std::vector<T>& items, F f, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + f(items[i]);
    return out;
}

std::vector<double> to_doubles(const std::string& s) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& p : split(s, ',')) out.push_back(to_double(p));
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    if (trim(s).empty()) return out;
    for (const auto& p : split(s, ',')) out.push_back(to_size(p));
    return out;
}

// conv:units:kernel:stride:padding or dense:units
std::vector<LayerSpec> to_layers(const std::string& s) {
    std::vector<LayerSpec> out;
    for (const auto& item : split(s, ',')) {
        const auto f = split(item, ':');
        LayerSpec l;
        if (f.size() == 5 && f[0] == "conv") {
            l.kind = LayerKind::Conv;
            l.units = to_size(f[1]);
            l.kernel = to_size(f[2]);
            l.stride = to_size(f[3]);
            l.padding = to_size(f[4]);
        } else if (f.size() == 2 && f[0] == "dense") {
            l.units = to_size(f[1]);
        } else {
            throw ConfigError("layer '" + item + "' is neither conv:units:kernel:stride:padding nor dense:units");
        }
        out.push_back(l);
    }
    return out;
}

std::string from_layers(const std::vector<LayerSpec>& layers) {
    return join(layers, [](const LayerSpec& l) {
        if (l.kind == LayerKind::Dense) return "dense:" + std::to_string(l.units);
        return "conv:" + std::to_string(l.units) + ":" + std::to_string(l.kernel) + ":" + std::to_string(l.stride) +
               ":" + std::to_string(l.padding);
    });
}

Shape to_shape(const std::string& s) {
    auto v = to_sizes(s);
    if (v.size() != 3) throw ConfigError("expected channels,height,width, got '" + s + "'");
    return Shape(v.begin(), v.end());
}

std::string sizes_str(const std::vector<std::size_t>& v) {
    return join(v, [](std::size_t x) { return std::to_string(x); });
}

const std::initializer_list<std::pair<const char*, StreamKind>> kStreamKinds{{"permuted", StreamKind::Permuted},
                                                                              {"split", StreamKind::Split},
                                                                              {"rotated", StreamKind::Rotated},
                                                                              {"synthetic", StreamKind::Synthetic},
                                                                              {"mixed", StreamKind::Mixed}};
const std::initializer_list<std::pair<const char*, SourceKind>> kSources{
    {"prototype", SourceKind::Prototype}, {"idx", SourceKind::Idx}, {"csv", SourceKind::Csv}};
const std::initializer_list<std::pair<const char*, ResetMode>> kResets{{"hard", ResetMode::Hard},
                                                                        {"literal", ResetMode::Literal}};
const std::initializer_list<std::pair<const char*, SimilarityMap>> kMaps{{"clamped", SimilarityMap::Clamped},
                                                                          {"literal", SimilarityMap::Literal}};
const std::initializer_list<std::pair<const char*, EnergyMode>> kModes{{"snn", EnergyMode::Snn},
                                                                        {"dnn", EnergyMode::Dnn}};

struct Field {
    const char* section;
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_FIELD(sec, key, member) \
    {sec, key, [](const RunConfig& c) { return std::to_string(c.member); }, \
     [](RunConfig& c, const std::string& v) { c.member = to_size(v); }}
#define REAL_FIELD(sec, key, member) \
    {sec, key, [](const RunConfig& c) { return fmt(c.member); }, \
     [](RunConfig& c, const std::string& v) { c.member = to_double(v); }}
#define TEXT_FIELD(sec, key, member) \
    {sec, key, [](const RunConfig& c) { return c.member; }, \
     [](RunConfig& c, const std::string& v) { c.member = trim(v); }}
#define BOOL_FIELD(sec, key, member) \
    {sec, key, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
     [](RunConfig& c, const std::string& v) { c.member = to_bool(v); }}
#define ENUM_FIELD(sec, key, member, table) \
    {sec, key, [](const RunConfig& c) { return from_enum(c.member, table); }, \
     [](RunConfig& c, const std::string& v) { c.member = to_enum(v, table); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> all{
        {"run", "seed", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { apply_seed(c, to_u64(v)); }},

        ENUM_FIELD("stream", "kind", stream.kind, kStreamKinds),
        SIZE_FIELD("stream", "tasks", stream.tasks),
        ENUM_FIELD("stream", "source", stream.source, kSources),
        TEXT_FIELD("stream", "train_images", stream.train_images),
        TEXT_FIELD("stream", "train_labels", stream.train_labels),
        TEXT_FIELD("stream", "test_images", stream.test_images),
        TEXT_FIELD("stream", "test_labels", stream.test_labels),
        TEXT_FIELD("stream", "train_csv", stream.train_csv),
        TEXT_FIELD("stream", "test_csv", stream.test_csv),
        {"stream", "shape", [](const RunConfig& c) { return sizes_str(c.stream.shape); },
         [](RunConfig& c, const std::string& v) { c.stream.shape = to_shape(v); }},
        SIZE_FIELD("stream", "train_limit", stream.train_limit),
        SIZE_FIELD("stream", "test_limit", stream.test_limit),
        SIZE_FIELD("stream", "classes_per_task", stream.classes_per_task),
        BOOL_FIELD("stream", "shuffle_classes", stream.shuffle_classes),
        {"stream", "angles", [](const RunConfig& c) { return join(c.stream.angles, fmt); },
         [](RunConfig& c, const std::string& v) { c.stream.angles = to_doubles(v); }},
        SIZE_FIELD("stream", "prototype_classes", stream.prototype_classes),
        SIZE_FIELD("stream", "prototype_train_per_class", stream.prototype_train_per_class),
        SIZE_FIELD("stream", "prototype_test_per_class", stream.prototype_test_per_class),
        REAL_FIELD("stream", "prototype_noise", stream.prototype_noise),
        SIZE_FIELD("stream", "synthetic_classes", stream.synthetic_classes),
        SIZE_FIELD("stream", "synthetic_train_per_class", stream.synthetic_train_per_class),
        SIZE_FIELD("stream", "synthetic_test_per_class", stream.synthetic_test_per_class),
        REAL_FIELD("stream", "synthetic_variance", stream.synthetic_variance),

        {"network", "layers", [](const RunConfig& c) { return from_layers(c.train.arch.layers); },
         [](RunConfig& c, const std::string& v) { c.train.arch.layers = to_layers(v); }},
        REAL_FIELD("network", "init_gain", train.arch.init_gain),
        REAL_FIELD("network", "head_init_std", train.arch.head_init_std),

        REAL_FIELD("spiking", "tau", train.lif.tau),
        REAL_FIELD("spiking", "v_th", train.lif.v_th),
        REAL_FIELD("spiking", "lambda", train.lif.lambda),
        SIZE_FIELD("spiking", "window", train.lif.window),
        ENUM_FIELD("spiking", "reset", train.lif.reset, kResets),

        SIZE_FIELD("trainer", "epochs", train.epochs),
        SIZE_FIELD("trainer", "batch", train.batch),
        {"trainer", "optimizer", [](const RunConfig&) { return std::string("adam"); },
         [](RunConfig&, const std::string& v) { to_enum<int>(v, {{"adam", 0}}); }},
        REAL_FIELD("trainer", "lr", train.adam.lr),
        REAL_FIELD("trainer", "beta1", train.adam.beta1),
        REAL_FIELD("trainer", "beta2", train.adam.beta2),
        REAL_FIELD("trainer", "eps", train.adam.eps),

        REAL_FIELD("similarity", "gamma", train.similarity.gamma),
        ENUM_FIELD("similarity", "map", train.similarity.map, kMaps),
        SIZE_FIELD("similarity", "probe", train.similarity.probe),

        REAL_FIELD("plasticity", "alpha", train.expansion.alpha),
        {"plasticity", "max_per_layer", [](const RunConfig& c) { return sizes_str(c.train.expansion.max_per_layer); },
         [](RunConfig& c, const std::string& v) { c.train.expansion.max_per_layer = to_sizes(v); }},
        REAL_FIELD("plasticity", "beta", train.reuse.beta),
        REAL_FIELD("plasticity", "bias0", train.reuse.bias0),
        REAL_FIELD("plasticity", "bias_slope", train.reuse.bias_slope),
        REAL_FIELD("plasticity", "bias_clip", train.reuse.bias_clip),

        SIZE_FIELD("replay", "capacity", train.replay_capacity),
        SIZE_FIELD("replay", "calibration_epochs", train.calibration_epochs),
        SIZE_FIELD("replay", "calibration_batch", train.calibration_batch),
        REAL_FIELD("replay", "calibration_lr", train.calibration_adam.lr),

        ENUM_FIELD("metrics", "mode", energy_mode, kModes),
        REAL_FIELD("metrics", "e_ac", energy.e_ac),
        REAL_FIELD("metrics", "e_mac", energy.e_mac),

        TEXT_FIELD("output", "dir", out_dir),
        BOOL_FIELD("output", "checkpoint", write_checkpoint),
    };
    return all;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef TEXT_FIELD
#undef BOOL_FIELD
#undef ENUM_FIELD

void finalize(RunConfig& c) {
    c.train.arch.input = c.stream.shape;
    c.energy.window = c.train.lif.window;
    const auto& s = c.stream;
    if (s.tasks == 0) throw ConfigError("[stream] tasks: must be positive");
    if (s.kind == StreamKind::Split && s.classes_per_task == 0)
        throw ConfigError("[stream] classes_per_task: must be positive");
    if (s.kind == StreamKind::Rotated && s.angles.size() != s.tasks)
        throw ConfigError("[stream] angles: need one angle per task (" + std::to_string(s.tasks) + ")");
    if (s.source == SourceKind::Idx &&
        (s.train_images.empty() || s.train_labels.empty() || s.test_images.empty() || s.test_labels.empty()))
        throw ConfigError("[stream] train_images: idx source needs all four image and label paths");
    if (s.source == SourceKind::Csv && (s.train_csv.empty() || s.test_csv.empty()))
        throw ConfigError("[stream] train_csv: csv source needs train_csv and test_csv");
    if (s.prototype_classes < 2 || s.synthetic_classes < 1)
        throw ConfigError("[stream] prototype_classes: at least two classes are needed");
    if (!(s.prototype_noise >= 0.0) || !(s.synthetic_variance > 0.0))
        throw ConfigError("[stream] synthetic_variance: noise must be non-negative and variance positive");
    if (!(c.energy.e_ac > 0.0 && c.energy.e_mac > 0.0)) throw ConfigError("[metrics] e_ac: energies must be positive");
    if (c.out_dir.empty()) throw ConfigError("[output] dir: must not be empty");
    auto check = [](const char* where, auto&& validate) {
        try {
            validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(where) + ": " + e.what());
        }
    };
    const TrainConfig& t = c.train;
    check("[network] layers", [&] { t.arch.validate(); });
    check("[spiking]", [&] { t.lif.validate(); });
    check("[trainer]", [&] { t.adam.validate(); });
    check("[replay] calibration_lr", [&] { t.calibration_adam.validate(); });
    check("[similarity]", [&] { t.similarity.validate(); });
    check("[plasticity]", [&] { t.reuse.validate(); });
    if (!t.expansion.max_per_layer.empty() && t.expansion.max_per_layer.size() != t.arch.layers.size())
        throw ConfigError("[plasticity] max_per_layer: needs one value per layer");
    check("[plasticity]", [&] {
        ExpansionPolicy e = t.expansion;
        if (e.max_per_layer.empty())
            for (const auto& l : t.arch.layers) e.max_per_layer.push_back(l.units);
        e.validate();
    });
    check("[trainer]", [&] { t.validate(); });
}

bool readable(const std::string& path) { return std::ifstream(path, std::ios::binary).good(); }

LabeledImages take_evenly(LabeledImages s, std::size_t limit) {
    if (limit == 0 || limit >= s.size()) return s;
    LabeledImages out;
    for (std::size_t i = 0; i < limit; ++i) {
        const std::size_t j = i * s.size() / limit;
        out.images.push_back(std::move(s.images[j]));
        out.labels.push_back(s.labels[j]);
    }
    return out;
}

ImageSet load_source(const StreamConfig& s, std::uint64_t seed) {
    ImageSet d;
    switch (s.source) {
        case SourceKind::Prototype:
            d = prototype_images(s.prototype_classes, s.shape, s.prototype_train_per_class,
                                 s.prototype_test_per_class, s.prototype_noise, seed);
            break;
        case SourceKind::Idx:
            d.train = load_idx(s.train_images, s.train_labels);
            d.test = load_idx(s.test_images, s.test_labels);
            break;
        case SourceKind::Csv:
            d.train = load_csv(s.train_csv, s.shape);
            d.test = load_csv(s.test_csv, s.shape);
            break;
    }
    if (d.train.size() == 0 || d.test.size() == 0) throw DataError("dataset has an empty split");
    if (d.train.images[0].shape() != s.shape)
        throw DataError("images are " + shape_string(d.train.images[0].shape()) + " but [stream] shape is " +
                        shape_string(s.shape));
    d.train = take_evenly(std::move(d.train), s.train_limit);
    d.test = take_evenly(std::move(d.test), s.test_limit);
    return d;
}

std::vector<TaskDescriptor> synthetic_tasks(const StreamConfig& s, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.grid = s.shape;
    spec.train_per_class = s.synthetic_train_per_class;
    spec.test_per_class = s.synthetic_test_per_class;
    spec.seed = seed;
    std::size_t d = 1;
    for (auto e : s.shape) d *= e;
    std::mt19937_64 rng(seed ^ 0x6d65616eULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    spec.tasks.resize(s.tasks);
    for (auto& task : spec.tasks)
        for (std::size_t k = 0; k < s.synthetic_classes; ++k) {
            std::vector<double> mean(d);
            for (auto& m : mean) m = u(rng);
            task.push_back(isotropic(std::move(mean), s.synthetic_variance));
        }
    return synthetic_stream(spec);
}

}  // namespace

std::vector<LayerSpec> default_layers() {
    return {{LayerKind::Conv, 8, 3, 1, 1}, {LayerKind::Conv, 16, 4, 2, 1}, {LayerKind::Dense, 64},
            {LayerKind::Dense, 32}};
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.train.seed = seed;
}

RunConfig parse_run_config(std::istream& in, const std::string& name) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(name + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(name + ": key '" + section + "' must sit inside a [section]");
        bool known = false;
        for (const auto& f : fields()) known = known || section == f.section;
        if (!known) throw ConfigError(name + ": unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const Field* field = nullptr;
            for (const auto& f : fields())
                if (section == f.section && key == f.key) field = &f;
            if (!field) throw ConfigError(name + ": unknown key [" + section + "] " + key);
            try {
                field->set(cfg, value.data());
            } catch (const ConfigError& e) {
                throw ConfigError(name + ": [" + section + "] " + key + ": " + e.what());
            }
        }
    }
    try {
        finalize(cfg);
    } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, path);
}

std::string to_ini(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            section = f.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

void check_inputs(const RunConfig& cfg) {
    const auto& s = cfg.stream;
    std::vector<std::string> paths;
    if (s.source == SourceKind::Idx) paths = {s.train_images, s.train_labels, s.test_images, s.test_labels};
    if (s.source == SourceKind::Csv) paths = {s.train_csv, s.test_csv};
    for (const auto& p : paths)
        if (!readable(p)) throw DataError("cannot read dataset file " + p);
}

std::vector<TaskDescriptor> build_stream(const RunConfig& cfg) {
    check_inputs(cfg);
    const auto& s = cfg.stream;
    const std::uint64_t seed = cfg.seed;
    switch (s.kind) {
        case StreamKind::Synthetic:
            return synthetic_tasks(s, seed);
        case StreamKind::Permuted:
            return permuted_stream(load_source(s, seed), s.tasks, seed + 1);
        case StreamKind::Split: {
            auto tasks = split_stream(load_source(s, seed), s.classes_per_task, s.shuffle_classes, seed + 1);
            if (tasks.size() < s.tasks)
                throw ConfigError("[stream] tasks: the data only supports " + std::to_string(tasks.size()) +
                                  " split tasks");
            tasks.resize(s.tasks);
            return tasks;
        }
        case StreamKind::Rotated:
            return rotated_stream(load_source(s, seed), s.angles);
        case StreamKind::Mixed: {
            // The second source is always a prototype set drawn with another seed.
            StreamConfig other = s;
            other.source = SourceKind::Prototype;
            const std::size_t na = (s.tasks + 1) / 2, nb = s.tasks / 2;
            auto a = permuted_stream(load_source(s, seed), na, seed + 1);
            auto b = nb ? permuted_stream(load_source(other, seed + 7), nb, seed + 2) : std::vector<TaskDescriptor>{};
            return mixed_alternating(std::move(a), std::move(b));
        }
    }
    throw ConfigError("[stream] kind: unsupported");
}

}  // namespace scasnn
