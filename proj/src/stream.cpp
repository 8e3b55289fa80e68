#include "sscl/stream.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sscl/ini.hpp"

namespace sscl {

std::string to_string(StreamVariant v) {
    switch (v) {
        case StreamVariant::standard: return "standard";
        case StreamVariant::imbalanced: return "imbalanced";
        case StreamVariant::inconsistent: return "inconsistent";
    }
    return "standard";
}

StreamVariant parse_stream_variant(const std::string& s) {
    if (s == "standard") return StreamVariant::standard;
    if (s == "imbalanced") return StreamVariant::imbalanced;
    if (s == "inconsistent") return StreamVariant::inconsistent;
    throw ConfigError("unknown stream variant '" + s + "' (valid: standard, imbalanced, inconsistent)");
}

void StreamConfig::validate() const {
    if (num_tasks == 0) throw ConfigError("num_tasks must be >= 1");
    if (classes_per_task == 0) throw ConfigError("classes_per_task must be >= 1");
    if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
    if (labels_per_class == 0) throw ConfigError("labels_per_class must be >= 1");
    if (test_per_class == 0) throw ConfigError("test_per_class must be >= 1");
    if (!(noise_scale >= 0.0) || !(class_separation >= 0.0))
        throw ConfigError("class_separation and noise_scale must be >= 0");
    if (variant == StreamVariant::imbalanced && !(imbalance_ratio >= 1.0))
        throw ConfigError("imbalance_ratio must be >= 1");
    if (variant == StreamVariant::inconsistent) {
        if (task_sizes.size() != num_tasks)
            throw ConfigError(fmt::format("inconsistent variant needs {} task_sizes, got {}", num_tasks,
                                          task_sizes.size()));
        for (auto n : task_sizes)
            if (n < classes_per_task) throw ConfigError("every task size must cover each class at least once");
    }
}

Sample SampleSet::sample(std::size_t i) const {
    auto r = features.row(i);
    Sample s{{r.begin(), r.end()}, std::nullopt, ids.at(i)};
    if (labels.at(i) != kNoLabel) s.label = labels[i];
    return s;
}

SampleSet SampleSet::subset(std::span<const std::size_t> idx) const {
    SampleSet out;
    out.features = features.gather_rows(idx);
    out.labels.reserve(idx.size());
    out.ids.reserve(idx.size());
    for (auto i : idx) {
        out.labels.push_back(labels.at(i));
        out.ids.push_back(ids.at(i));
    }
    return out;
}

const TaskSpec& TaskStream::task(int task_id) const {
    if (task_id < 1 || static_cast<std::size_t>(task_id) > tasks.size())
        throw IndexError("task id " + std::to_string(task_id) + " out of range");
    return tasks[task_id - 1];
}

TrainingView TaskStream::training_view(int task_id) const {
    const auto& t = task(task_id);
    return {t.task_id, t.classes, &t.labeled, &t.unlabeled};
}

namespace {

struct ClassCounts {
    std::size_t labeled, unlabeled, test;
};

ClassCounts counts_for(const StreamConfig& c, std::size_t task, std::size_t position) {
    ClassCounts k{c.labels_per_class, c.unlabeled_per_class, c.test_per_class};
    switch (c.variant) {
        case StreamVariant::standard: break;
        case StreamVariant::imbalanced:
            if (position % 2 == 1) {
                k.labeled = static_cast<std::size_t>(std::llround(k.labeled * c.imbalance_ratio));
                k.unlabeled = static_cast<std::size_t>(std::llround(k.unlabeled * c.imbalance_ratio));
            }
            break;
        case StreamVariant::inconsistent: {
            const std::size_t total = c.task_sizes[task];
            std::size_t per = total / c.classes_per_task;
            if (position < total % c.classes_per_task) ++per;
            k.labeled = std::min(c.labels_per_class, per);
            k.unlabeled = per - k.labeled;
            break;
        }
    }
    return k;
}

void append(SampleSet& set, std::span<const double> x, int label, std::int64_t id) {
    auto& st = set.features.storage();
    st.insert(st.end(), x.begin(), x.end());
    set.labels.push_back(label);
    set.ids.push_back(id);
}

void finish(SampleSet& set, std::size_t dim) {
    set.features = Matrix(set.ids.size(), dim, std::move(set.features.storage()));
}

}  // namespace

TaskStream generate_stream(const StreamConfig& config) {
    config.validate();
    const std::size_t dim = config.input_dim;
    const std::size_t num_classes = config.total_classes();

    Rng mean_rng = make_rng(config.seed, "class-means");
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix means(num_classes, dim);
    for (std::size_t c = 0; c < num_classes; ++c) {
        double norm = 0.0;
        for (auto& v : means.row(c)) {
            v = normal(mean_rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : means.row(c)) v *= config.class_separation / norm;
    }

    TaskStream stream;
    stream.config = config;
    std::int64_t next_id = 0;
    std::vector<double> x(dim);
    for (std::size_t t = 0; t < config.num_tasks; ++t) {
        TaskSpec task;
        task.task_id = static_cast<int>(t + 1);
        for (std::size_t p = 0; p < config.classes_per_task; ++p)
            task.classes.push_back(static_cast<int>(t * config.classes_per_task + p));

        for (std::size_t p = 0; p < config.classes_per_task; ++p) {
            const int cls = task.classes[p];
            const auto counts = counts_for(config, t, p);
            Rng rng = make_rng(config.seed, "class-samples", static_cast<std::uint64_t>(cls));
            auto draw = [&] {
                for (std::size_t j = 0; j < dim; ++j) x[j] = means(cls, j) + config.noise_scale * normal(rng);
            };
            for (std::size_t i = 0; i < counts.labeled; ++i) {
                draw();
                append(task.labeled, x, cls, next_id++);
            }
            for (std::size_t i = 0; i < counts.unlabeled; ++i) {
                draw();
                append(task.unlabeled, x, kNoLabel, next_id++);
                task.unlabeled_truth.push_back(cls);
            }
            for (std::size_t i = 0; i < counts.test; ++i) {
                draw();
                append(task.test, x, cls, next_id++);
            }
        }
        finish(task.labeled, dim);
        finish(task.unlabeled, dim);
        finish(task.test, dim);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

// ---- augmentation ----------------------------------------------------------

void AugmentConfig::validate() const {
    if (sigma_weak < 0 || sigma_strong < 0) throw ConfigError("augmentation sigmas must be >= 0");
    if (drop_prob < 0 || drop_prob > 1) throw ConfigError("drop_prob must lie in [0,1]");
    if (scale_jitter < 0 || scale_jitter >= 1) throw ConfigError("scale_jitter must lie in [0,1)");
}

std::vector<double> weak_augment(std::span<const double> x, double sigma, Rng& rng) {
    std::vector<double> out(x.begin(), x.end());
    if (sigma == 0.0) return out;
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : out) v += noise(rng);
    return out;
}

std::vector<double> strong_augment(std::span<const double> x, const AugmentConfig& aug, Rng& rng) {
    std::vector<double> out(x.begin(), x.end());
    if (aug.sigma_strong > 0.0) {
        std::normal_distribution<double> noise(0.0, aug.sigma_strong);
        for (double& v : out) v += noise(rng);
    }
    if (aug.drop_prob > 0.0) {
        std::bernoulli_distribution drop(aug.drop_prob);
        for (double& v : out)
            if (drop(rng)) v = 0.0;
    }
    if (aug.scale_jitter > 0.0) {
        std::uniform_real_distribution<double> scale(1.0 - aug.scale_jitter, 1.0 + aug.scale_jitter);
        const double s = scale(rng);
        for (double& v : out) v *= s;
    }
    return out;
}

Matrix weak_augment_rows(const Matrix& x, double sigma, Rng& rng) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto v = weak_augment(x.row(r), sigma, rng);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

Matrix strong_augment_rows(const Matrix& x, const AugmentConfig& aug, Rng& rng) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto v = strong_augment(x.row(r), aug, rng);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

// ---- config <-> ini --------------------------------------------------------

std::string stream_config_to_ini(const StreamConfig& c, const std::string& section) {
    std::string sizes;
    for (std::size_t i = 0; i < c.task_sizes.size(); ++i) sizes += fmt::format("{}{}", i ? ", " : "", c.task_sizes[i]);
    return fmt::format(
        "[{}]\nnum_tasks = {}\nclasses_per_task = {}\nlabels_per_class = {}\nunlabeled_per_class = {}\n"
        "test_per_class = {}\ninput_dim = {}\nclass_separation = {}\nnoise_scale = {}\nvariant = {}\n"
        "imbalance_ratio = {}\ntask_sizes = {}\nseed = {}\n",
        section, c.num_tasks, c.classes_per_task, c.labels_per_class, c.unlabeled_per_class, c.test_per_class,
        c.input_dim, c.class_separation, c.noise_scale, to_string(c.variant), c.imbalance_ratio, sizes, c.seed);
}

StreamConfig stream_config_from_ini(const IniDocument& doc, const std::string& section, StreamConfig c) {
    for (const IniEntry* e : doc.section(section)) {
        const auto& k = e->key;
        if (k == "num_tasks") c.num_tasks = parse_count(*e);
        else if (k == "classes_per_task") c.classes_per_task = parse_count(*e);
        else if (k == "labels_per_class") c.labels_per_class = parse_count(*e);
        else if (k == "unlabeled_per_class") c.unlabeled_per_class = parse_count(*e);
        else if (k == "test_per_class") c.test_per_class = parse_count(*e);
        else if (k == "input_dim") c.input_dim = parse_count(*e);
        else if (k == "class_separation") c.class_separation = parse_real(*e);
        else if (k == "noise_scale") c.noise_scale = parse_real(*e);
        else if (k == "imbalance_ratio") c.imbalance_ratio = parse_real(*e);
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(*e));
        else if (k == "variant") {
            try {
                c.variant = parse_stream_variant(e->value);
            } catch (const ConfigError& err) {
                throw ConfigError(err.what(), e->line);
            }
        } else if (k == "task_sizes") {
            c.task_sizes.clear();
            for (const auto& item : split_list(e->value)) {
                IniEntry sub{e->section, e->key, item, e->line};
                c.task_sizes.push_back(parse_count(sub));
            }
        } else {
            throw ConfigError("unknown key '" + k + "' in [" + section + "]", e->line);
        }
    }
    return c;
}

// ---- CSV serialisation -------------------------------------------------------

namespace {

void write_set(const SampleSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id,label";
    for (std::size_t j = 0; j < set.features.cols(); ++j) out << ",f" << j;
    out << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
        fmt::print(out, "{},{}", set.ids[i], set.labels[i]);
        for (double v : set.features.row(i)) fmt::print(out, ",{}", v);
        out << '\n';
    }
}

template <class T>
T parse_field(std::string_view s, const std::filesystem::path& path, std::size_t line) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw std::runtime_error(fmt::format("{}:{}: malformed field '{}'", path.string(), line, s));
    return v;
}

SampleSet read_set(const std::filesystem::path& path, std::size_t dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);  // header
    SampleSet set;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view sv(line);
        std::size_t start = 0;
        while (true) {
            auto pos = sv.find(',', start);
            fields.push_back(sv.substr(start, pos == std::string_view::npos ? sv.npos : pos - start));
            if (pos == std::string_view::npos) break;
            start = pos + 1;
        }
        if (fields.size() != dim + 2)
            throw std::runtime_error(fmt::format("{}:{}: expected {} fields, got {}", path.string(), lineno,
                                                 dim + 2, fields.size()));
        set.ids.push_back(parse_field<std::int64_t>(fields[0], path, lineno));
        set.labels.push_back(parse_field<int>(fields[1], path, lineno));
        auto& st = set.features.storage();
        for (std::size_t j = 0; j < dim; ++j) st.push_back(parse_field<double>(fields[j + 2], path, lineno));
    }
    finish(set, dim);
    return set;
}

}  // namespace

void write_stream(const TaskStream& stream, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream m(dir / "manifest.ini", std::ios::binary);
        if (!m) throw std::runtime_error("cannot write manifest in " + dir.string());
        m << "# synthetic SSCL task stream\n" << stream_config_to_ini(stream.config);
        m << "\n[tasks]\n";
        for (const auto& t : stream.tasks) {
            std::string cls;
            for (std::size_t i = 0; i < t.classes.size(); ++i) cls += fmt::format("{}{}", i ? ", " : "", t.classes[i]);
            m << fmt::format("task_{}_classes = {}\n", t.task_id, cls);
            m << fmt::format("task_{}_counts = {}, {}, {}\n", t.task_id, t.labeled.size(), t.unlabeled.size(),
                             t.test.size());
        }
    }
    for (const auto& t : stream.tasks) {
        const auto td = dir / fmt::format("task_{}", t.task_id);
        fs::create_directories(td);
        write_set(t.labeled, td / "labeled.csv");
        write_set(t.unlabeled, td / "unlabeled.csv");
        write_set(t.test, td / "test.csv");
        std::ofstream truth(td / "unlabeled_truth.csv", std::ios::binary);
        truth << "id,label\n";
        for (std::size_t i = 0; i < t.unlabeled.size(); ++i)
            fmt::print(truth, "{},{}\n", t.unlabeled.ids[i], t.unlabeled_truth[i]);
    }
}

TaskStream load_stream(const std::filesystem::path& dir) {
    auto doc = IniDocument::load(dir / "manifest.ini");
    TaskStream stream;
    stream.config = stream_config_from_ini(doc);
    stream.config.validate();
    const std::size_t dim = stream.config.input_dim;
    for (std::size_t t = 1; t <= stream.config.num_tasks; ++t) {
        TaskSpec task;
        task.task_id = static_cast<int>(t);
        const auto* cls = doc.find("tasks", fmt::format("task_{}_classes", t));
        if (!cls) throw ConfigError(fmt::format("manifest lacks task_{}_classes", t));
        for (const auto& item : split_list(cls->value)) {
            IniEntry sub{cls->section, cls->key, item, cls->line};
            task.classes.push_back(static_cast<int>(parse_integer(sub)));
        }
        const auto td = dir / fmt::format("task_{}", t);
        task.labeled = read_set(td / "labeled.csv", dim);
        task.unlabeled = read_set(td / "unlabeled.csv", dim);
        task.test = read_set(td / "test.csv", dim);
        auto truth_path = td / "unlabeled_truth.csv";
        if (std::filesystem::exists(truth_path)) {
            auto truth = read_set(truth_path, 0);
            task.unlabeled_truth = truth.labels;
        } else {
            task.unlabeled_truth.assign(task.unlabeled.size(), kNoLabel);
        }
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

}  // namespace sscl
