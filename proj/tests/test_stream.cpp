#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sscl/ini.hpp"
#include "sscl/stream.hpp"
#include "support.hpp"

using namespace sscl;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("sscl_test_stream_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

// Multinomial logistic regression by full-batch gradient descent.
double linear_probe_accuracy(const SampleSet& train, const SampleSet& test, std::span<const int> classes) {
    const std::size_t d = train.features.cols(), k = classes.size();
    auto local = [&](const std::vector<int>& labels) {
        std::vector<int> y;
        for (int l : labels) y.push_back(static_cast<int>(std::find(classes.begin(), classes.end(), l) - classes.begin()));
        return y;
    };
    std::vector<int> y = local(train.labels);
    Matrix w(d, k), b(1, k);
    for (int it = 0; it < 300; ++it) {
        auto r = softmax_cross_entropy(add_bias(matmul(train.features, w), b), y);
        w -= matmul_at(train.features, r.grad) * 0.5;
        b -= column_sums(r.grad) * 0.5;
    }
    Matrix logits = add_bias(matmul(test.features, w), b);
    std::vector<int> yt = local(test.labels);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto row = logits.row(i);
        hit += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == yt[i];
    }
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("default stream has the expected shape") {
    StreamConfig c;
    c.seed = 3;
    TaskStream s = generate_stream(c);
    REQUIRE(s.tasks.size() == 5);
    std::set<int> seen;
    for (const auto& t : s.tasks) {
        CHECK(t.classes.size() == 2);
        for (int k : t.classes) CHECK(seen.insert(k).second);
        CHECK(t.labeled.size() == 60);
        CHECK(t.unlabeled.size() == 1200);
        CHECK(t.test.size() == 400);
        CHECK(t.labeled.features.cols() == 20);
        CHECK(t.unlabeled_truth.size() == t.unlabeled.size());
        for (int l : t.unlabeled.labels) CHECK(l == kNoLabel);
        for (int l : t.labeled.labels) CHECK(std::ranges::count(t.classes, l) == 1);
        for (int l : t.test.labels) CHECK(std::ranges::count(t.classes, l) == 1);
        for (int l : t.unlabeled_truth) CHECK(std::ranges::count(t.classes, l) == 1);
    }
    CHECK(seen.size() == 10);
}

TEST_CASE("partitions are disjoint by id across splits and tasks") {
    StreamConfig c;
    c.seed = 4;
    c.unlabeled_per_class = 50;
    TaskStream s = generate_stream(c);
    std::set<std::int64_t> ids;
    std::size_t n = 0;
    for (const auto& t : s.tasks)
        for (const SampleSet* set : {&t.labeled, &t.unlabeled, &t.test}) {
            ids.insert(set->ids.begin(), set->ids.end());
            n += set->size();
        }
    CHECK(ids.size() == n);
}

TEST_CASE("generation is deterministic per seed") {
    StreamConfig c;
    c.unlabeled_per_class = 20;
    c.seed = 11;
    TaskStream a = generate_stream(c), b = generate_stream(c);
    c.seed = 12;
    TaskStream other = generate_stream(c);
    for (std::size_t t = 0; t < a.tasks.size(); ++t) {
        CHECK(a.tasks[t].labeled.features == b.tasks[t].labeled.features);
        CHECK(a.tasks[t].unlabeled.ids == b.tasks[t].unlabeled.ids);
    }
    CHECK_FALSE(a.tasks[0].labeled.features == other.tasks[0].labeled.features);
}

TEST_CASE("imbalanced variant alternates label counts") {
    StreamConfig c;
    c.variant = StreamVariant::imbalanced;
    c.unlabeled_per_class = 10;
    TaskStream s = generate_stream(c);
    for (const auto& t : s.tasks) {
        CHECK(std::ranges::count(t.labeled.labels, t.classes[0]) == 30);
        CHECK(std::ranges::count(t.labeled.labels, t.classes[1]) == 150);
        CHECK(std::ranges::count(t.unlabeled_truth, t.classes[1]) == 50);
    }
}

TEST_CASE("inconsistent variant honours per-task sizes") {
    StreamConfig c;
    c.variant = StreamVariant::inconsistent;
    c.task_sizes = {100, 400, 61, 1000, 2};
    TaskStream s = generate_stream(c);
    for (std::size_t t = 0; t < 5; ++t)
        CHECK(s.tasks[t].labeled.size() + s.tasks[t].unlabeled.size() == c.task_sizes[t]);
    CHECK(s.tasks[4].labeled.size() == 2);
    CHECK(s.tasks[4].unlabeled.empty());

    c.task_sizes = {100, 100};
    CHECK_THROWS_AS(generate_stream(c), ConfigError);
    c.task_sizes = {100, 100, 1, 100, 100};
    CHECK_THROWS_AS(generate_stream(c), ConfigError);
}

TEST_CASE("stream validation rejects bad configs") {
    StreamConfig c;
    c.num_tasks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.noise_scale = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.variant = StreamVariant::imbalanced;
    c.imbalance_ratio = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("weak augmentation moment matches sigma^2 * d") {
    Rng rng = make_rng(1, "weak");
    std::vector<double> x(20, 0.7);
    const double sigma = 0.05;
    double acc = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto y = weak_augment(x, sigma, rng);
        for (std::size_t j = 0; j < x.size(); ++j) acc += (y[j] - x[j]) * (y[j] - x[j]);
    }
    const double expected = sigma * sigma * 20;
    CHECK(std::abs(acc / n - expected) <= 0.1 * expected);
}

TEST_CASE("strong augmentation moments") {
    AugmentConfig aug;
    Rng rng = make_rng(2, "strong");
    std::vector<double> x(20, 1.0);
    const int n = 10000;
    double zeros = 0, mean = 0;
    for (int i = 0; i < n; ++i) {
        auto y = strong_augment(x, aug, rng);
        for (double v : y) {
            zeros += v == 0.0;
            mean += v;
        }
    }
    // Dropout rate, and E[y] = (1 - p) * x since noise and scaling are centred.
    CHECK(zeros / (n * 20.0) == doctest::Approx(aug.drop_prob).epsilon(0.1));
    CHECK(mean / (n * 20.0) == doctest::Approx(1.0 - aug.drop_prob).epsilon(0.02));

    Matrix rows = strong_augment_rows(Matrix(3, 20, 1.0), aug, rng);
    CHECK(rows.rows() == 3);
    aug.scale_jitter = 1.0;
    CHECK_THROWS_AS(aug.validate(), ConfigError);
}

TEST_CASE("a linear probe separates one task when separation >= 4 noise") {
    StreamConfig c;
    c.class_separation = 4.0;
    c.noise_scale = 1.0;
    c.classes_per_task = 3;
    c.unlabeled_per_class = 200;
    for (std::uint64_t seed : {1, 2, 3}) {
        c.seed = seed;
        TaskStream s = generate_stream(c);
        for (const auto& t : s.tasks) {
            SampleSet all;
            std::vector<double> rows(t.labeled.features.data().begin(), t.labeled.features.data().end());
            rows.insert(rows.end(), t.unlabeled.features.data().begin(), t.unlabeled.features.data().end());
            all.features = Matrix(t.labeled.size() + t.unlabeled.size(), c.input_dim, std::move(rows));
            all.labels = t.labeled.labels;
            all.labels.insert(all.labels.end(), t.unlabeled_truth.begin(), t.unlabeled_truth.end());
            CHECK(linear_probe_accuracy(all, t.test, t.classes) >= 0.95);
        }
    }
}

TEST_CASE("serialization round-trips byte-identically") {
    StreamConfig c;
    c.unlabeled_per_class = 15;
    c.variant = StreamVariant::inconsistent;
    c.task_sizes = {40, 50, 60, 70, 80};
    c.seed = 9;
    TaskStream s = generate_stream(c);
    auto a = scratch("a"), b = scratch("b");
    write_stream(s, a);
    TaskStream back = load_stream(a);
    write_stream(back, b);
    for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        auto rel = std::filesystem::relative(e.path(), a);
        CHECK(slurp(e.path()) == slurp(b / rel));
    }
    REQUIRE(back.tasks.size() == s.tasks.size());
    for (std::size_t t = 0; t < s.tasks.size(); ++t) {
        CHECK(back.tasks[t].labeled.features == s.tasks[t].labeled.features);
        CHECK(back.tasks[t].unlabeled_truth == s.tasks[t].unlabeled_truth);
        CHECK(back.tasks[t].classes == s.tasks[t].classes);
    }
    CHECK(back.config.task_sizes == c.task_sizes);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("training view exposes only its own task") {
    StreamConfig c;
    c.unlabeled_per_class = 5;
    TaskStream s = generate_stream(c);
    TrainingView v = s.training_view(3);
    CHECK(v.task_id == 3);
    CHECK(v.labeled == &s.task(3).labeled);
    CHECK(v.unlabeled == &s.task(3).unlabeled);
    CHECK_THROWS_AS(s.training_view(0), IndexError);
    CHECK_THROWS_AS(s.training_view(6), IndexError);
}

TEST_CASE("ini errors carry line numbers") {
    auto doc = IniDocument::parse("[stream]\nnum_tasks = 3\nbogus = 1\n");
    try {
        stream_config_from_ini(doc);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 3);
    }
    auto bad = IniDocument::parse("[stream]\n\nnoise_scale = abc\n");
    try {
        stream_config_from_ini(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 3);
    }
    auto ok = IniDocument::parse(stream_config_to_ini(StreamConfig{.num_tasks = 7, .seed = 5}));
    StreamConfig back = stream_config_from_ini(ok);
    CHECK(back.num_tasks == 7);
    CHECK(back.seed == 5);
}
