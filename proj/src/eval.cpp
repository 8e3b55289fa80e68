#include "sscl/eval.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sscl/ini.hpp"
#include "sscl/losses.hpp"

namespace sscl {

std::string to_string(TestStrategy s) {
    switch (s) {
        case TestStrategy::dcp: return "dcp";
        case TestStrategy::t_cls: return "t-cls";
        case TestStrategy::t_ncm: return "t-ncm";
    }
    return "dcp";
}

TestStrategy parse_test_strategy(const std::string& s) {
    if (s == "dcp") return TestStrategy::dcp;
    if (s == "t-cls") return TestStrategy::t_cls;
    if (s == "t-ncm") return TestStrategy::t_ncm;
    throw ConfigError("unknown test strategy '" + s + "' (valid: dcp, t-cls, t-ncm)");
}

std::vector<int> dcp_predict(const Matrix& logits, const Matrix& f, const ClassMeanTable& table, double tau,
                             TestStrategy strategy) {
    if (logits.rows() != f.rows()) throw DimensionError("dcp_predict: logits/features row mismatch");
    Matrix probs = softmax_rows(logits);
    std::vector<int> out(logits.rows(), -1);
    bool warned = false;
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto p = probs.row(i);
        const auto it = std::max_element(p.begin(), p.end());
        const int cls = static_cast<int>(it - p.begin());
        const bool use_cls = strategy == TestStrategy::t_cls || (strategy == TestStrategy::dcp && *it >= tau);
        if (use_cls) {
            out[i] = cls;
            continue;
        }
        auto ncm = ncm_label(f.row(i), table);
        if (!ncm && !warned) {
            spdlog::warn("dcp_predict: NCM unavailable for some samples, using the classifier label");
            warned = true;
        }
        out[i] = ncm.value_or(cls);
    }
    return out;
}

std::vector<int> dcp_predict(const Matrix& x, const ModelState& model, const ClassMeanTable& table, double tau,
                             TestStrategy strategy) {
    auto c = forward(model, x);
    return dcp_predict(c.logits, c.f(), table, tau, strategy);
}

// ---- metrics -----------------------------------------------------------------------

void AccuracyMatrix::append_row(std::vector<double> row) { rows_.push_back(std::move(row)); }

IncrementalMetrics incremental_metrics(const AccuracyMatrix& matrix) {
    if (matrix.tasks() == 0) throw ContractError("incremental_metrics: empty accuracy matrix");
    IncrementalMetrics m;
    for (std::size_t t = 1; t <= matrix.tasks(); ++t) {
        const auto& row = matrix.rows()[t - 1];
        if (row.size() != t)
            throw ContractError(fmt::format("incremental_metrics: row {} has {} entries, expected {}", t, row.size(), t));
        double sum = 0.0;
        for (double a : row) {
            if (!(a >= 0.0 && a <= 1.0)) throw ContractError(fmt::format("incremental_metrics: accuracy {} outside [0,1]", a));
            sum += a;
        }
        m.a_t.push_back(sum / static_cast<double>(t));
    }
    double sum = 0.0;
    for (double a : m.a_t) sum += a;
    m.a_avg = sum / static_cast<double>(m.a_t.size());
    m.a_last = m.a_t.back();
    return m;
}

std::vector<BaseNovelAccuracy> base_novel_accuracy(const std::vector<std::vector<ClassTally>>& per_task,
                                                   std::span<const int> base_classes) {
    std::vector<BaseNovelAccuracy> out;
    for (std::size_t t = 0; t < per_task.size(); ++t) {
        std::size_t bc = 0, bt = 0, nc = 0, nt = 0;
        std::size_t base_seen = 0;
        for (const auto& tally : per_task[t]) {
            const bool is_base = std::find(base_classes.begin(), base_classes.end(), tally.cls) != base_classes.end();
            if (is_base) {
                bc += tally.correct;
                bt += tally.total;
                ++base_seen;
            } else {
                nc += tally.correct;
                nt += tally.total;
            }
        }
        if (base_seen != base_classes.size())
            throw ParameterError(fmt::format("base_novel_accuracy: base classes not all observed at task {}", t + 1));
        BaseNovelAccuracy r;
        r.task = static_cast<int>(t + 1);
        r.base = bt ? static_cast<double>(bc) / static_cast<double>(bt) : 0.0;
        if (nt) r.novel = static_cast<double>(nc) / static_cast<double>(nt);
        out.push_back(r);
    }
    return out;
}

// ---- diagnostics -------------------------------------------------------------------

const StrategyDiagnostics& PseudoDiagnostics::get(const std::string& name) const {
    for (const auto& s : strategies)
        if (s.strategy == name) return s;
    throw IndexError("no diagnostics for strategy " + name);
}

std::size_t confidence_bin(double confidence) {
    const auto b = static_cast<std::ptrdiff_t>(std::floor(confidence * static_cast<double>(kConfidenceBins)));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, kConfidenceBins - 1));
}

PseudoDiagnostics pseudo_diagnostics(const Matrix& unlabeled_x, std::span<const int> truth, const ModelState& model,
                                     const ClassMeanTable& table, double tau) {
    if (truth.size() != unlabeled_x.rows()) throw DimensionError("pseudo_diagnostics: truth/sample count mismatch");
    auto c = forward(model, unlabeled_x);
    auto routing = route_pseudo_labels(PseudoStrategy::dcp, c.logits, c.f(), table, tau);

    PseudoDiagnostics d;
    d.strategies.resize(3);
    d.strategies[0].strategy = "p-cls";
    d.strategies[1].strategy = "p-ncm";
    d.strategies[2].strategy = "dcp";
    std::array<std::size_t, 3> right{}, low_right{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::array<int, 3> label = {routing.classifier_label[i], routing.ncm_label[i], routing.final_label[i]};
        const double conf = routing.confidence[i];
        const bool low = conf < tau;
        const std::size_t bin = confidence_bin(conf);
        for (std::size_t s = 0; s < 3; ++s) {
            auto& sd = d.strategies[s];
            const bool ok = label[s] == truth[i];
            ++sd.scored;
            (ok ? sd.correct : sd.incorrect)[bin] += 1;
            right[s] += ok;
            if (low) {
                ++sd.low_conf_count;
                low_right[s] += ok;
            }
        }
    }
    for (std::size_t s = 0; s < 3; ++s) {
        auto& sd = d.strategies[s];
        sd.accuracy = sd.scored ? static_cast<double>(right[s]) / static_cast<double>(sd.scored) : 0.0;
        if (sd.low_conf_count)
            sd.low_conf_accuracy = static_cast<double>(low_right[s]) / static_cast<double>(sd.low_conf_count);
    }
    return d;
}

// ---- csv -----------------------------------------------------------------------------

std::string accuracy_csv(const AccuracyMatrix& matrix) {
    std::string out = "t,i,acc\n";
    for (std::size_t t = 1; t <= matrix.tasks(); ++t)
        for (std::size_t i = 1; i <= matrix.rows()[t - 1].size(); ++i)
            out += fmt::format("{},{},{:.10g}\n", t, i, matrix.at(t, i));
    return out;
}

std::string metrics_csv(const IncrementalMetrics& metrics) {
    std::string out = "metric,task,value\n";
    for (std::size_t t = 0; t < metrics.a_t.size(); ++t) out += fmt::format("A_t,{},{:.10g}\n", t + 1, metrics.a_t[t]);
    out += fmt::format("A_avg,,{:.10g}\n", metrics.a_avg);
    out += fmt::format("A_last,,{:.10g}\n", metrics.a_last);
    return out;
}

std::string diagnostics_csv(const std::vector<PseudoDiagnostics>& diags) {
    std::string out = "task,epoch,strategy,bin,correct_count,incorrect_count\n";
    for (const auto& d : diags)
        for (const auto& s : d.strategies)
            for (std::size_t b = 0; b < kConfidenceBins; ++b)
                out += fmt::format("{},{},{},{},{},{}\n", d.task, d.epoch, s.strategy, b, s.correct[b], s.incorrect[b]);
    return out;
}

std::string diagnostics_summary_csv(const std::vector<PseudoDiagnostics>& diags) {
    std::string out = "task,epoch,strategy,scored,accuracy,low_conf_count,low_conf_accuracy\n";
    for (const auto& d : diags)
        for (const auto& s : d.strategies)
            out += fmt::format("{},{},{},{},{:.10g},{},{}\n", d.task, d.epoch, s.strategy, s.scored, s.accuracy,
                               s.low_conf_count,
                               s.low_conf_accuracy ? fmt::format("{:.10g}", *s.low_conf_accuracy) : std::string());
    return out;
}

std::string base_novel_csv(const std::vector<BaseNovelAccuracy>& rows) {
    std::string out = "task,base,novel\n";
    for (const auto& r : rows)
        out += fmt::format("{},{:.10g},{}\n", r.task, r.base, r.novel ? fmt::format("{:.10g}", *r.novel) : std::string());
    return out;
}

}  // namespace sscl
