#pragma once

// Test-time inference, incremental accuracy metrics and pseudo-label
// diagnostics.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sscl/class_means.hpp"
#include "sscl/model.hpp"

namespace sscl {

enum class TestStrategy { dcp, t_cls, t_ncm };
std::string to_string(TestStrategy s);
TestStrategy parse_test_strategy(const std::string& s);

/// dcp: classifier argmax if its softmax confidence reaches tau, NCM
/// otherwise. t-cls / t-ncm always use one branch. When NCM has no answer
/// (empty table) the classifier label is used.
std::vector<int> dcp_predict(const Matrix& logits, const Matrix& f, const ClassMeanTable& table, double tau,
                             TestStrategy strategy = TestStrategy::dcp);
std::vector<int> dcp_predict(const Matrix& x, const ModelState& model, const ClassMeanTable& table, double tau,
                             TestStrategy strategy = TestStrategy::dcp);

/// Lower-triangular a[t][i], both indices 1-based in the accessors.
class AccuracyMatrix {
public:
    void append_row(std::vector<double> row);
    double at(std::size_t t, std::size_t i) const { return rows_.at(t - 1).at(i - 1); }
    std::size_t tasks() const { return rows_.size(); }
    const std::vector<std::vector<double>>& rows() const { return rows_; }

private:
    std::vector<std::vector<double>> rows_;
};

struct IncrementalMetrics {
    std::vector<double> a_t;
    double a_avg = 0.0;
    double a_last = 0.0;
};

/// Throws ContractError unless row t holds exactly t entries, all in [0,1].
IncrementalMetrics incremental_metrics(const AccuracyMatrix& matrix);

struct ClassTally {
    int cls = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct BaseNovelAccuracy {
    int task = 0;
    double base = 0.0;
    std::optional<double> novel;  // absent while no novel class has been seen
};

/// per_task[t-1] holds the per-class test tallies after training task t.
std::vector<BaseNovelAccuracy> base_novel_accuracy(const std::vector<std::vector<ClassTally>>& per_task,
                                                   std::span<const int> base_classes);

inline constexpr std::size_t kConfidenceBins = 20;

struct StrategyDiagnostics {
    std::string strategy;  // p-cls, p-ncm or dcp
    std::size_t scored = 0;
    double accuracy = 0.0;
    std::size_t low_conf_count = 0;
    std::optional<double> low_conf_accuracy;  // absent when no sample is below tau
    std::array<std::size_t, kConfidenceBins> correct{};
    std::array<std::size_t, kConfidenceBins> incorrect{};
};

struct PseudoDiagnostics {
    int task = 0;
    std::size_t epoch = 0;
    std::vector<StrategyDiagnostics> strategies;

    const StrategyDiagnostics& get(const std::string& name) const;
};

std::size_t confidence_bin(double confidence);

/// Scores p-cls (no threshold), p-ncm and dcp pseudo-labels against hidden
/// ground truth. Samples are binned by classifier confidence.
PseudoDiagnostics pseudo_diagnostics(const Matrix& unlabeled_x, std::span<const int> truth, const ModelState& model,
                                     const ClassMeanTable& table, double tau);

// CSV exports
std::string accuracy_csv(const AccuracyMatrix& matrix);           // t,i,acc
std::string metrics_csv(const IncrementalMetrics& metrics);       // metric,task,value
std::string diagnostics_csv(const std::vector<PseudoDiagnostics>& diags);
std::string diagnostics_summary_csv(const std::vector<PseudoDiagnostics>& diags);
std::string base_novel_csv(const std::vector<BaseNovelAccuracy>& rows);  // task,base,novel

}  // namespace sscl
