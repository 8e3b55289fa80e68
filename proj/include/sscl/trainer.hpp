#pragma once

// Per-task training loop, SGD with momentum, warmup + cosine schedule, and the
// whole-stream driver that fills the accuracy matrix.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sscl/etf.hpp"
#include "sscl/eval.hpp"
#include "sscl/exemplar.hpp"
#include "sscl/losses.hpp"
#include "sscl/model.hpp"
#include "sscl/stream.hpp"

namespace sscl {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t warmup_epochs = 5;
    std::size_t batch_size = 16;  // labelled rows per step
    std::size_t mu_ratio = 7;     // unlabelled rows per labelled row
    double lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    /// Global L2 cap on each step's gradient; 0 disables.
    double grad_clip = 5.0;
    LossWeights weights;
    Temperatures temps;
    double tau = 0.95;
    std::uint64_t seed = 0;
    std::size_t memory = 200;

    bool disable_fsr = false;
    bool disable_cud = false;
    PseudoStrategy pseudo_strategy = PseudoStrategy::dcp;
    TestStrategy test_strategy = TestStrategy::dcp;
    bool replay_in_sup = true;

    AugmentConfig augment;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t proj_dim = 32;
    bool diagnostics = true;  // score pseudo-labels at every epoch end

    void validate() const;
};

/// Switches of the baseline learner: no ETF term, no CUD, thresholded
/// classifier pseudo-labels, classifier-only testing.
TrainConfig baseline_of(TrainConfig config);

struct OptimizerState {
    Parameters velocity;
};

OptimizerState init_optimizer(const ModelState& model);
/// Pads classifier momentum with zero columns up to the model's width.
void expand_optimizer(OptimizerState& opt, const ModelState& model);

double lr_at(std::size_t epoch, const TrainConfig& config);

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`
/// (no-op for max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(Parameters& grads, double max_norm);

/// v <- momentum*v + g + wd*p ; p <- p - lr*v
void sgd_step(ModelState& model, const Parameters& grads, OptimizerState& opt, double lr, double momentum,
              double weight_decay);

struct LearnerState {
    ModelState model;
    OptimizerState opt;
    ExemplarBuffer buffer;
    std::optional<TeacherSnapshot> teacher;
    EtfFrame frame;
};

/// Fresh learner for a stream with `total_classes` classes overall; the ETF
/// reserves one anchor per class up front.
LearnerState init_learner(const TrainConfig& config, std::size_t input_dim, std::size_t total_classes);

struct EpochLog {
    int task = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;  // step means; counts are epoch totals
};

struct StepTrace {
    int task = 0;
    std::vector<std::int64_t> labeled_ids;
    std::vector<std::int64_t> unlabeled_ids;
    std::vector<std::int64_t> exemplar_ids;
};

struct TaskResult {
    std::vector<EpochLog> losses;
    std::vector<PseudoDiagnostics> diagnostics;
};

struct TrainHooks {
    std::function<void(const TrainingView&, const LearnerState&)> before_task;
    std::function<void(int task, const LearnerState&)> after_task;
    std::function<void(const StepTrace&)> on_step;
};

/// Trains one task from its training view plus the learner's own memory.
/// `unlabeled_truth` feeds diagnostics only and may be null.
TaskResult train_task(const TrainingView& view, LearnerState& learner, const TrainConfig& config,
                      const std::vector<int>* unlabeled_truth = nullptr, const TrainHooks* hooks = nullptr);

struct RunReport {
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> task_classes;
    AccuracyMatrix accuracy;
    IncrementalMetrics metrics;
    std::vector<std::vector<ClassTally>> class_tallies;  // per task, all observed classes
    std::vector<std::size_t> buffer_sizes;
    std::vector<EpochLog> losses;
    std::vector<PseudoDiagnostics> diagnostics;
};

/// Accuracy of every seen test set after a task, with per-class tallies.
std::vector<double> evaluate_seen(const TaskStream& stream, int through_task, const LearnerState& learner,
                                  const TrainConfig& config, std::vector<ClassTally>* tallies = nullptr);

RunReport run_stream(const TaskStream& stream, const TrainConfig& config, const TrainHooks* hooks = nullptr);

std::string losses_csv(const std::vector<EpochLog>& logs);
std::string run_report_json(const RunReport& report);

}  // namespace sscl
