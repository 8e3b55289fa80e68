#include "sscl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "sscl/rng.hpp"

namespace sscl {

void TrainConfig::validate() const {
    if (epochs == 0) throw ParameterError("epochs must be >= 1");
    if (warmup_epochs > epochs) throw ParameterError("warmup_epochs must not exceed epochs");
    if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
    if (mu_ratio == 0) throw ParameterError("mu_ratio must be >= 1");
    if (!(lr > 0.0)) throw ParameterError("lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
    if (grad_clip < 0.0) throw ParameterError("grad_clip must be >= 0");
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("tau must lie in (0,1)");
    if (!(temps.beta > 0.0 && temps.gamma > 0.0 && temps.xi > 0.0)) throw ParameterError("temperatures must be > 0");
    if (weights.uns < 0 || weights.cl < 0 || weights.fsr < 0 || weights.cud < 0)
        throw ParameterError("loss weights must be >= 0");
    if (memory == 0) throw ParameterError("memory must be >= 1");
    if (hidden.empty()) throw ParameterError("at least one hidden layer is required");
    if (proj_dim == 0) throw ParameterError("proj_dim must be >= 1");
    augment.validate();
}

TrainConfig baseline_of(TrainConfig config) {
    config.disable_fsr = true;
    config.disable_cud = true;
    config.pseudo_strategy = PseudoStrategy::p_cls;
    config.test_strategy = TestStrategy::t_cls;
    return config;
}

// ---- optimiser -------------------------------------------------------------------

OptimizerState init_optimizer(const ModelState& model) { return {model.params.zeros_like()}; }

void expand_optimizer(OptimizerState& opt, const ModelState& model) {
    const Matrix& w = model.params.classifier.weight;
    Matrix& v = opt.velocity.classifier.weight;
    if (v.cols() == w.cols()) return;
    if (v.cols() > w.cols() || (v.cols() > 0 && v.rows() != w.rows()))
        throw DimensionError("expand_optimizer: classifier can only grow");
    Matrix nv(w.rows(), w.cols()), nb(1, w.cols());
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) nv(r, c) = v(r, c);
    for (std::size_t c = 0; c < v.cols(); ++c) nb(0, c) = opt.velocity.classifier.bias(0, c);
    opt.velocity.classifier = Linear{std::move(nv), std::move(nb)};
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
    if (epoch >= config.epochs) throw IndexError(fmt::format("lr_at: epoch {} outside [0,{})", epoch, config.epochs));
    const auto e = static_cast<double>(epoch);
    const auto w = static_cast<double>(config.warmup_epochs);
    if (epoch < config.warmup_epochs) return (e + 1.0) / w * config.lr;
    const double span = std::max(1.0, static_cast<double>(config.epochs) - 1.0 - w);
    const double progress = (e - w) / span;
    return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(Parameters& grads, double max_norm) {
    double sq = 0.0;
    grads.visit([&](const std::string&, const Matrix& m) {
        for (double v : m.data()) sq += v * v;
    });
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        grads.for_each([&](const std::string&, Matrix& m) { m *= s; });
    }
    return norm;
}

void sgd_step(ModelState& model, const Parameters& grads, OptimizerState& opt, double lr, double momentum,
              double weight_decay) {
    std::vector<Matrix*> params, vels;
    std::vector<const Matrix*> gs;
    model.params.for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
    opt.velocity.for_each([&](const std::string&, Matrix& m) { vels.push_back(&m); });
    grads.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
    if (params.size() != vels.size() || params.size() != gs.size())
        throw DimensionError("sgd_step: parameter structure mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*gs[i]) || !params[i]->same_shape(*vels[i]))
            throw DimensionError(fmt::format("sgd_step: shape mismatch {} vs grad {} vs momentum {}",
                                             shape_str(*params[i]), shape_str(*gs[i]), shape_str(*vels[i])));
        auto p = params[i]->data();
        auto v = vels[i]->data();
        auto g = gs[i]->data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum * v[j] + g[j] + weight_decay * p[j];
            p[j] -= lr * v[j];
        }
    }
}

// ---- learner ---------------------------------------------------------------------

LearnerState init_learner(const TrainConfig& config, std::size_t input_dim, std::size_t total_classes) {
    config.validate();
    ModelConfig mc;
    mc.input_dim = input_dim;
    mc.hidden = config.hidden;
    mc.proj_dim = config.proj_dim;
    mc.seed = derive_seed(config.seed, "model");
    LearnerState s{init_model(mc), {}, {}, std::nullopt, build_etf(total_classes, config.proj_dim, derive_seed(config.seed, "etf"))};
    s.opt = init_optimizer(s.model);
    s.buffer.capacity = config.memory;
    return s;
}

namespace {

Matrix gather(const Matrix& x, std::span<const std::size_t> idx) { return x.gather_rows(idx); }

std::vector<int> pick_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
}

std::vector<std::int64_t> pick_ids(const std::vector<std::int64_t>& ids, std::span<const std::size_t> idx) {
    std::vector<std::int64_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ids[i]);
    return out;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
    acc.sup += b.sup;
    acc.uns += b.uns;
    acc.cl += b.cl;
    acc.fsr += b.fsr;
    acc.cud += b.cud;
    acc.total += b.total;
    acc.high_conf_count += b.high_conf_count;
    acc.low_conf_count += b.low_conf_count;
}

}  // namespace

TaskResult train_task(const TrainingView& view, LearnerState& learner, const TrainConfig& config,
                      const std::vector<int>* unlabeled_truth, const TrainHooks* hooks) {
    config.validate();
    if (!view.labeled || !view.unlabeled) throw ContractError("train_task: view without data");
    if (view.classes.empty()) throw ParameterError("train_task: task has no classes");
    const std::size_t k_old = learner.model.observed_classes;
    for (std::size_t j = 0; j < view.classes.size(); ++j)
        if (view.classes[j] != static_cast<int>(k_old + j))
            throw ParameterError(fmt::format("train_task: task {} classes must continue at index {}", view.task_id, k_old));
    if (k_old + view.classes.size() > learner.frame.num_classes)
        throw ParameterError("train_task: more classes than ETF anchors");
    if (unlabeled_truth && unlabeled_truth->size() != view.unlabeled->size())
        throw DimensionError("train_task: truth/unlabelled size mismatch");
    if (hooks && hooks->before_task) hooks->before_task(view, learner);

    const auto task = static_cast<std::uint64_t>(view.task_id);
    {
        Rng rng = make_rng(config.seed, "classifier-expand", task);
        learner.model = expand_classifier(learner.model, view.classes.size(), rng);
        expand_optimizer(learner.opt, learner.model);
    }

    const SampleSet& lab = *view.labeled;
    const SampleSet& unl = *view.unlabeled;
    const SampleSet memory = learner.buffer.as_sample_set(learner.model.input_dim());
    const TeacherSnapshot* teacher = learner.teacher ? &*learner.teacher : nullptr;
    const bool replay = teacher && !memory.empty();

    const std::size_t ub = config.batch_size * config.mu_ratio;
    const std::size_t steps = std::max<std::size_t>(1, (unl.size() + ub - 1) / ub);

    LossContext ctx;
    ctx.student = &learner.model;
    ctx.teacher = teacher;
    ctx.frame = &learner.frame;
    ctx.weights = config.weights;
    ctx.temps = config.temps;
    ctx.tau = config.tau;
    ctx.strategy = config.pseudo_strategy;
    ctx.use_fsr = !config.disable_fsr;
    ctx.use_cud = !config.disable_cud;
    ctx.replay_in_sup = config.replay_in_sup;

    TaskResult result;
    std::vector<std::size_t> lab_order(lab.size()), unl_order(unl.size());
    std::size_t lab_pos = lab.size();
    Rng batch_rng = make_rng(config.seed, "batches", task);
    Rng aug_rng = make_rng(config.seed, "augment", task);
    std::uniform_int_distribution<std::size_t> pick_memory(0, memory.empty() ? 0 : memory.size() - 1);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        const ClassMeanTable table = class_means_labeled(lab, view.classes, learner.model);
        ctx.table = &table;

        std::iota(unl_order.begin(), unl_order.end(), std::size_t{0});
        std::shuffle(unl_order.begin(), unl_order.end(), batch_rng);

        LossBreakdown sum;
        for (std::size_t step = 0; step < steps; ++step) {
            StepBatch batch;
            std::vector<std::size_t> li, ui, ei;
            for (std::size_t j = 0; j < config.batch_size && !lab.empty(); ++j) {
                if (lab_pos == lab.size()) {
                    std::iota(lab_order.begin(), lab_order.end(), std::size_t{0});
                    std::shuffle(lab_order.begin(), lab_order.end(), batch_rng);
                    lab_pos = 0;
                }
                li.push_back(lab_order[lab_pos++]);
            }
            const std::size_t u0 = step * ub, u1 = std::min(unl.size(), u0 + ub);
            for (std::size_t j = u0; j < u1; ++j) ui.push_back(unl_order[j]);
            if (replay)
                for (std::size_t j = 0; j < config.batch_size; ++j) ei.push_back(pick_memory(batch_rng));

            batch.labeled_x = gather(lab.features, li);
            batch.labeled_y = pick_labels(lab.labels, li);
            Matrix ux = gather(unl.features, ui);
            batch.weak_x = weak_augment_rows(ux, config.augment.sigma_weak, aug_rng);
            batch.strong_x = strong_augment_rows(ux, config.augment, aug_rng);
            if (replay) {
                batch.exemplar_x = gather(memory.features, ei);
                batch.exemplar_y = pick_labels(memory.labels, ei);
            } else {
                batch.exemplar_x = Matrix(0, lab.features.cols());
            }
            if (hooks && hooks->on_step)
                hooks->on_step({view.task_id, pick_ids(lab.ids, li), pick_ids(unl.ids, ui),
                                replay ? pick_ids(memory.ids, ei) : std::vector<std::int64_t>{}});

            auto res = total_loss(batch, ctx);
            accumulate(sum, res.breakdown);
            clip_grad_norm(res.grads, config.grad_clip);
            sgd_step(learner.model, res.grads, learner.opt, lr, config.momentum, config.weight_decay);
        }

        EpochLog log{view.task_id, epoch, lr, sum};
        const auto n = static_cast<double>(steps);
        log.loss.sup /= n;
        log.loss.uns /= n;
        log.loss.cl /= n;
        log.loss.fsr /= n;
        log.loss.cud /= n;
        log.loss.total /= n;
        result.losses.push_back(log);
        spdlog::debug("task {} epoch {} lr {:.4f} loss {:.4f}", view.task_id, epoch, lr, log.loss.total);

        if (config.diagnostics && unlabeled_truth && !unl.empty()) {
            const ClassMeanTable live = class_means_labeled(lab, view.classes, learner.model);
            auto d = pseudo_diagnostics(unl.features, *unlabeled_truth, learner.model, live, config.tau);
            d.task = view.task_id;
            d.epoch = epoch;
            result.diagnostics.push_back(std::move(d));
        }
    }

    std::map<int, SampleSet> per_class;
    for (int cls : view.classes) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < lab.size(); ++i)
            if (lab.labels[i] == cls) idx.push_back(i);
        per_class[cls] = lab.subset(idx);
    }
    learner.buffer = rebalance(learner.buffer, per_class, learner.model);
    learner.model.task_id = view.task_id;
    learner.teacher = snapshot(learner.model);
    if (hooks && hooks->after_task) hooks->after_task(view.task_id, learner);
    return result;
}

// ---- stream driver -----------------------------------------------------------------

std::vector<double> evaluate_seen(const TaskStream& stream, int through_task, const LearnerState& learner,
                                  const TrainConfig& config, std::vector<ClassTally>* tallies) {
    const ClassMeanTable table = class_means_from_buffer(learner.buffer, learner.model).table;
    std::vector<double> acc;
    if (tallies) tallies->clear();
    for (int i = 1; i <= through_task; ++i) {
        const SampleSet& test = stream.task(i).test;
        auto pred = dcp_predict(test.features, learner.model, table, config.tau, config.test_strategy);
        std::size_t right = 0;
        for (std::size_t r = 0; r < pred.size(); ++r) right += pred[r] == test.labels[r];
        acc.push_back(test.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(test.size()));
        if (tallies)
            for (int cls : stream.task(i).classes) {
                ClassTally t{cls, 0, 0};
                for (std::size_t r = 0; r < pred.size(); ++r)
                    if (test.labels[r] == cls) {
                        ++t.total;
                        t.correct += pred[r] == cls;
                    }
                tallies->push_back(t);
            }
    }
    return acc;
}

RunReport run_stream(const TaskStream& stream, const TrainConfig& config, const TrainHooks* hooks) {
    config.validate();
    RunReport report;
    report.seed = config.seed;
    LearnerState learner = init_learner(config, stream.config.input_dim, stream.config.total_classes());
    for (const auto& spec : stream.tasks) {
        const TrainingView view = stream.training_view(spec.task_id);
        auto res = train_task(view, learner, config, &spec.unlabeled_truth, hooks);
        report.losses.insert(report.losses.end(), res.losses.begin(), res.losses.end());
        report.diagnostics.insert(report.diagnostics.end(), res.diagnostics.begin(), res.diagnostics.end());
        std::vector<ClassTally> tallies;
        report.accuracy.append_row(evaluate_seen(stream, spec.task_id, learner, config, &tallies));
        report.class_tallies.push_back(std::move(tallies));
        report.task_classes.push_back(spec.classes);
        report.buffer_sizes.push_back(learner.buffer.size());
        spdlog::info("seed {} task {}: A_t {:.4f}", config.seed, spec.task_id,
                     incremental_metrics(report.accuracy).a_t.back());
    }
    report.metrics = incremental_metrics(report.accuracy);
    return report;
}

std::string losses_csv(const std::vector<EpochLog>& logs) {
    std::string out = "epoch,task,lr,sup,uns,cl,fsr,cud,total,high_conf_count,low_conf_count\n";
    for (const auto& l : logs)
        out += fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{},{}\n", l.epoch, l.task,
                           l.lr, l.loss.sup, l.loss.uns, l.loss.cl, l.loss.fsr, l.loss.cud, l.loss.total,
                           l.loss.high_conf_count, l.loss.low_conf_count);
    return out;
}

std::string run_report_json(const RunReport& report) {
    nlohmann::ordered_json j;
    j["seed"] = report.seed;
    j["task_classes"] = report.task_classes;
    j["accuracy"] = report.accuracy.rows();
    j["A_t"] = report.metrics.a_t;
    j["A_avg"] = report.metrics.a_avg;
    j["A_last"] = report.metrics.a_last;
    j["buffer_sizes"] = report.buffer_sizes;
    auto& tallies = j["class_tallies"] = nlohmann::ordered_json::array();
    for (const auto& task : report.class_tallies) {
        auto row = nlohmann::ordered_json::array();
        for (const auto& t : task) row.push_back({{"class", t.cls}, {"correct", t.correct}, {"total", t.total}});
        tallies.push_back(std::move(row));
    }
    return j.dump(2) + "\n";
}

}  // namespace sscl
