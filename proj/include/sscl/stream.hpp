#pragma once

// Sequential semi-supervised task streams over Gaussian class clusters.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sscl/numkit.hpp"
#include "sscl/rng.hpp"

namespace sscl {

enum class StreamVariant { standard, imbalanced, inconsistent };

std::string to_string(StreamVariant v);
StreamVariant parse_stream_variant(const std::string& s);

struct StreamConfig {
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 2;
    std::size_t labels_per_class = 30;
    std::size_t unlabeled_per_class = 600;
    std::size_t test_per_class = 200;
    std::size_t input_dim = 20;
    double class_separation = 3.0;
    double noise_scale = 1.0;
    StreamVariant variant = StreamVariant::standard;
    /// imbalanced: classes at odd positions within a task get this multiple
    /// of the labeled and unlabeled counts.
    double imbalance_ratio = 5.0;
    /// inconsistent: total training samples (labeled + unlabeled) per task.
    std::vector<std::size_t> task_sizes;
    std::uint64_t seed = 0;

    std::size_t total_classes() const { return num_tasks * classes_per_task; }
    void validate() const;
};

/// One sample as seen from outside a SampleSet.
struct Sample {
    std::vector<double> features;
    std::optional<int> label;
    std::int64_t id = 0;
};

/// Columnar sample storage: row i of `features` belongs to ids[i]/labels[i].
/// Unlabeled sets carry label -1.
struct SampleSet {
    Matrix features;
    std::vector<int> labels;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    Sample sample(std::size_t i) const;
    SampleSet subset(std::span<const std::size_t> idx) const;
};

inline constexpr int kNoLabel = -1;

struct TaskSpec {
    int task_id = 0;  // 1-based
    std::vector<int> classes;
    SampleSet labeled;
    SampleSet unlabeled;  // labels stripped (all kNoLabel)
    SampleSet test;
    /// Ground truth for `unlabeled`, row-aligned. Diagnostics only; never part
    /// of a TrainingView.
    std::vector<int> unlabeled_truth;
};

/// What the learner is allowed to see while training a task.
struct TrainingView {
    int task_id = 0;
    std::span<const int> classes;
    const SampleSet* labeled = nullptr;
    const SampleSet* unlabeled = nullptr;
};

struct TaskStream {
    StreamConfig config;
    std::vector<TaskSpec> tasks;

    TrainingView training_view(int task_id) const;
    const TaskSpec& task(int task_id) const;
};

TaskStream generate_stream(const StreamConfig& config);

class IniDocument;
/// `[section]` block with every StreamConfig field, in a fixed order.
std::string stream_config_to_ini(const StreamConfig& config, const std::string& section = "stream");
/// Overlays keys found in `section` onto `base`; unknown keys are errors.
StreamConfig stream_config_from_ini(const IniDocument& doc, const std::string& section = "stream",
                                    StreamConfig base = {});

struct AugmentConfig {
    double sigma_weak = 0.05;
    double sigma_strong = 0.2;
    double drop_prob = 0.1;
    double scale_jitter = 0.1;
    void validate() const;
};

std::vector<double> weak_augment(std::span<const double> x, double sigma, Rng& rng);
std::vector<double> strong_augment(std::span<const double> x, const AugmentConfig& aug, Rng& rng);
Matrix weak_augment_rows(const Matrix& x, double sigma, Rng& rng);
Matrix strong_augment_rows(const Matrix& x, const AugmentConfig& aug, Rng& rng);

/// Directory layout: manifest.ini plus task_<t>/{labeled,unlabeled,test,unlabeled_truth}.csv.
void write_stream(const TaskStream& stream, const std::filesystem::path& dir);
TaskStream load_stream(const std::filesystem::path& dir);

}  // namespace sscl
