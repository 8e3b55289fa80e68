#include "sscl/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sscl/ini.hpp"

namespace sscl {

std::string to_string(PseudoStrategy s) {
    switch (s) {
        case PseudoStrategy::dcp: return "dcp";
        case PseudoStrategy::p_cls: return "p-cls";
        case PseudoStrategy::p_ncm: return "p-ncm";
        case PseudoStrategy::p_r: return "p-r";
    }
    return "dcp";
}

PseudoStrategy parse_pseudo_strategy(const std::string& s) {
    if (s == "dcp") return PseudoStrategy::dcp;
    if (s == "p-cls") return PseudoStrategy::p_cls;
    if (s == "p-ncm") return PseudoStrategy::p_ncm;
    if (s == "p-r") return PseudoStrategy::p_r;
    throw ConfigError("unknown pseudo strategy '" + s + "' (valid: dcp, p-cls, p-ncm, p-r)");
}

std::size_t PseudoLabelBatch::high_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += high_confidence(i) ? 1 : 0;
    return n;
}

// ---- class means / NCM ---------------------------------------------------------

ClassMeanTable class_means_labeled(const SampleSet& labeled, std::span<const int> classes, const ModelState& model) {
    if (labeled.empty()) throw ParameterError("class_means_labeled: empty labelled set");
    auto proj = forward_projection(model, labeled.features);
    auto res = class_means(proj.rows, labeled.labels, classes);
    if (!res.empty_classes.empty())
        throw ParameterError(fmt::format("class_means_labeled: class {} has no labelled samples", res.empty_classes[0]));
    for (int c : res.degenerate_classes) spdlog::warn("labelled mean of class {} is degenerate; excluded", c);
    return std::move(res.table);
}

std::optional<int> ncm_label(std::span<const double> f, const ClassMeanTable& table) {
    if (table.empty()) return std::nullopt;
    double fn = 0.0;
    for (double v : f) fn += v * v;
    fn = std::sqrt(fn);
    if (fn <= kNormEps) return std::nullopt;
    std::optional<int> best;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < table.size(); ++r) {
        auto m = table.means.row(r);
        double dot = 0.0, mn = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) {
            dot += f[j] * m[j];
            mn += m[j] * m[j];
        }
        const double sim = dot / (fn * std::sqrt(mn));
        const int cls = table.classes[r];
        if (!best || sim > best_sim || (sim == best_sim && cls < *best)) {
            best = cls;
            best_sim = sim;
        }
    }
    return best;
}

// ---- routing ---------------------------------------------------------------------

PseudoLabelBatch route_pseudo_labels(PseudoStrategy strategy, const Matrix& weak_logits, const Matrix& weak_f,
                                     const ClassMeanTable& table, double tau) {
    if (weak_logits.rows() != weak_f.rows()) throw DimensionError("route_pseudo_labels: logits/features row mismatch");
    const std::size_t n = weak_logits.rows();
    PseudoLabelBatch b;
    b.tau = tau;
    b.confidence.resize(n);
    b.classifier_label.resize(n);
    b.ncm_label.resize(n);
    b.route.resize(n);
    b.final_label.resize(n);
    Matrix probs = softmax_rows(weak_logits);
    for (std::size_t i = 0; i < n; ++i) {
        auto p = probs.row(i);
        const auto it = std::max_element(p.begin(), p.end());
        b.confidence[i] = p.empty() ? 0.0 : *it;
        b.classifier_label[i] = p.empty() ? -1 : static_cast<int>(it - p.begin());
        b.ncm_label[i] = ncm_label(weak_f.row(i), table).value_or(-1);

        const bool high = b.confidence[i] >= tau;
        Route r = Route::dropped;
        switch (strategy) {
            case PseudoStrategy::dcp: r = high ? Route::classifier : Route::ncm; break;
            case PseudoStrategy::p_cls: r = high ? Route::classifier : Route::dropped; break;
            case PseudoStrategy::p_ncm: r = Route::ncm; break;
            case PseudoStrategy::p_r: r = high ? Route::ncm : Route::classifier; break;
        }
        int label = -1;
        if (r == Route::classifier) label = b.classifier_label[i];
        if (r == Route::ncm) label = b.ncm_label[i];
        if (label < 0) r = Route::dropped;
        b.route[i] = r;
        b.final_label[i] = label;
    }
    return b;
}

PseudoLabelBatch dcp_route(const Matrix& weak_logits, const Matrix& weak_f, const ClassMeanTable& table, double tau) {
    return route_pseudo_labels(PseudoStrategy::dcp, weak_logits, weak_f, table, tau);
}

PseudoLabelBatch dcp_route(const Matrix& weak_x, const ModelState& model, const ClassMeanTable& table, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("dcp_route: tau must lie in (0,1)");
    auto c = forward(model, weak_x);
    return dcp_route(c.logits, c.f(), table, tau);
}

// ---- shared term kernels ---------------------------------------------------------

namespace {

struct HeadGrad {
    double value = 0.0;
    Matrix grad;  // w.r.t. the logits or the normalised features of one cache
};

HeadGrad ce_head(const Matrix& logits, std::span<const int> targets, std::span<const double> weights, double denom,
                 double temperature = 1.0) {
    auto r = softmax_cross_entropy_weighted(logits, targets, weights, denom, temperature);
    return {r.value(0, 0), std::move(r.grad)};
}

HeadGrad cl_head(const Matrix& student_logits, const Matrix& teacher_logits, double beta) {
    const std::size_t kt = teacher_logits.cols();
    if (kt > student_logits.cols())
        throw DimensionError("loss_cl: teacher has more classes than the student");
    Matrix teacher_probs = softmax_rows(teacher_logits, beta);
    auto r = softmax_kl(student_logits.left_cols(kt), teacher_probs, beta);
    HeadGrad h{r.value(0, 0), Matrix(student_logits.rows(), student_logits.cols())};
    for (std::size_t i = 0; i < h.grad.rows(); ++i)
        for (std::size_t c = 0; c < kt; ++c) h.grad(i, c) = r.grad(i, c);
    return h;
}

HeadGrad etf_head(const Matrix& f, std::span<const int> targets, std::span<const double> weights, double denom,
                  const EtfFrame& frame, double gamma) {
    auto sims = cosine_similarity_matrix(f, frame.prototypes);
    auto r = softmax_cross_entropy_weighted(sims.sim, targets, weights, denom, gamma);
    return {r.value(0, 0), cosine_similarity_backward(f, frame.prototypes, r.grad).da};
}

HeadGrad cud_head(const Matrix& student_f, const Matrix& teacher_f, const ClassMeanTable& table, double xi) {
    auto s = cosine_similarity_matrix(student_f, table.means);
    auto t = cosine_similarity_matrix(teacher_f, table.means);
    auto r = softmax_kl(s.sim, softmax_rows(t.sim, xi), xi);
    return {r.value(0, 0), cosine_similarity_backward(student_f, table.means, r.grad).da};
}

struct UnlabeledTargets {
    std::vector<int> targets;
    std::vector<double> weights;
};

UnlabeledTargets uns_targets(const PseudoLabelBatch& routing) {
    UnlabeledTargets u{std::vector<int>(routing.size(), 0), std::vector<double>(routing.size(), 0.0)};
    for (std::size_t i = 0; i < routing.size(); ++i)
        if (routing.final_label[i] >= 0) {
            u.targets[i] = routing.final_label[i];
            u.weights[i] = 1.0;
        }
    return u;
}

UnlabeledTargets fsr_targets(const PseudoLabelBatch& routing, double tau) {
    UnlabeledTargets u{std::vector<int>(routing.size(), 0), std::vector<double>(routing.size(), 0.0)};
    for (std::size_t i = 0; i < routing.size(); ++i)
        if (routing.confidence[i] >= tau && routing.classifier_label[i] >= 0) {
            u.targets[i] = routing.classifier_label[i];
            u.weights[i] = 1.0;
        }
    return u;
}

void check_labels(std::span<const int> y, std::size_t k, const char* what) {
    for (int v : y)
        if (v < 0 || static_cast<std::size_t>(v) >= k)
            throw IndexError(fmt::format("{}: label {} outside the {} observed classes", what, v, k));
}

}  // namespace

// ---- individual terms ------------------------------------------------------------

TermResult loss_sup(const ModelState& model, const Matrix& x, std::span<const int> y) {
    check_labels(y, model.observed_classes, "loss_sup");
    TermResult out{0.0, model.params.zeros_like()};
    if (x.rows() == 0) return out;
    auto c = forward(model, x, kLogits);
    std::vector<double> w(x.rows(), 1.0);
    auto h = ce_head(c.logits, y, w, static_cast<double>(x.rows()));
    out.value = h.value;
    out.grads = backward(model, c, &h.grad, nullptr);
    return out;
}

TermResult loss_uns_prime(const ModelState& model, const Matrix& strong_x, const PseudoLabelBatch& routing) {
    if (routing.size() != strong_x.rows()) throw DimensionError("loss_uns_prime: routing/batch size mismatch");
    TermResult out{0.0, model.params.zeros_like()};
    if (strong_x.rows() == 0) return out;
    auto c = forward(model, strong_x, kLogits);
    auto u = uns_targets(routing);
    auto h = ce_head(c.logits, u.targets, u.weights, static_cast<double>(strong_x.rows()));
    out.value = h.value;
    out.grads = backward(model, c, &h.grad, nullptr);
    return out;
}

TermResult loss_cl(const ModelState& student, const TeacherSnapshot* teacher, const Matrix& exemplar_x, double beta) {
    TermResult out{0.0, student.params.zeros_like()};
    if (!teacher) {
        spdlog::debug("loss_cl: no teacher, term is zero");
        return out;
    }
    if (exemplar_x.rows() == 0) return out;
    auto c = forward(student, exemplar_x, kLogits);
    auto h = cl_head(c.logits, forward_logits(teacher->model(), exemplar_x), beta);
    out.value = h.value;
    out.grads = backward(student, c, &h.grad, nullptr);
    return out;
}

TermResult loss_fsr(const ModelState& model, const Matrix& labeled_x, std::span<const int> labeled_y,
                    const Matrix& weak_x, const PseudoLabelBatch& routing, const EtfFrame& frame, double gamma,
                    double tau) {
    if (routing.size() != weak_x.rows()) throw DimensionError("loss_fsr: routing/batch size mismatch");
    check_labels(labeled_y, frame.num_classes, "loss_fsr");
    TermResult out{0.0, model.params.zeros_like()};
    if (labeled_x.rows() > 0) {
        auto c = forward(model, labeled_x, kProjection);
        std::vector<double> w(labeled_x.rows(), 1.0);
        auto h = etf_head(c.f(), labeled_y, w, static_cast<double>(labeled_x.rows()), frame, gamma);
        out.value += h.value;
        out.grads.axpy(1.0, backward(model, c, nullptr, &h.grad));
    }
    if (weak_x.rows() > 0) {
        auto c = forward(model, weak_x, kProjection);
        auto u = fsr_targets(routing, tau);
        auto h = etf_head(c.f(), u.targets, u.weights, static_cast<double>(weak_x.rows()), frame, gamma);
        out.value += h.value;
        out.grads.axpy(1.0, backward(model, c, nullptr, &h.grad));
    }
    return out;
}

TermResult loss_cud(const ModelState& student, const TeacherSnapshot* teacher, const Matrix& weak_x,
                    const ClassMeanTable& table, double xi) {
    TermResult out{0.0, student.params.zeros_like()};
    if (!teacher) {
        spdlog::debug("loss_cud: no teacher, term is zero");
        return out;
    }
    if (weak_x.rows() == 0 || table.empty()) return out;
    auto c = forward(student, weak_x, kProjection);
    auto teacher_f = forward_projection(teacher->model(), weak_x);
    auto h = cud_head(c.f(), teacher_f.rows, table, xi);
    out.value = h.value;
    out.grads = backward(student, c, nullptr, &h.grad);
    return out;
}

// ---- total -------------------------------------------------------------------------

TotalLossResult total_loss(const StepBatch& batch, const LossContext& ctx, const PseudoLabelBatch* fixed_routing) {
    if (!ctx.student || !ctx.frame || !ctx.table) throw ContractError("total_loss: student, frame and table are required");
    const ModelState& student = *ctx.student;
    const auto& w = ctx.weights;
    const auto& t = ctx.temps;
    const std::size_t k = student.observed_classes;
    check_labels(batch.labeled_y, k, "total_loss");
    check_labels(batch.exemplar_y, k, "total_loss");

    TotalLossResult res;
    LossBreakdown& lb = res.breakdown;
    const bool has_teacher = ctx.teacher != nullptr;
    const std::size_t n_l = batch.labeled_x.rows();
    const std::size_t n_e = batch.exemplar_x.rows();
    const std::size_t n_u = batch.weak_x.rows();
    const bool use_exemplars = n_e > 0 && (ctx.replay_in_sup || has_teacher);

    ForwardCache lab = forward(student, batch.labeled_x, ctx.use_fsr ? kBoth : kLogits);
    ForwardCache weak = forward(student, batch.weak_x, kBoth);
    ForwardCache strong = forward(student, batch.strong_x, kLogits);
    ForwardCache ex;
    if (use_exemplars) ex = forward(student, batch.exemplar_x, kLogits);

    res.routing = fixed_routing ? *fixed_routing
                                : route_pseudo_labels(ctx.strategy, weak.logits, weak.f(), *ctx.table, ctx.tau);
    if (res.routing.size() != n_u) throw DimensionError("total_loss: routing/batch size mismatch");
    lb.high_conf_count = res.routing.high_count();
    lb.low_conf_count = res.routing.low_count();

    Matrix d_lab_logits(n_l, k), d_strong_logits(n_u, k), d_ex_logits(use_exemplars ? n_e : 0, k);
    Matrix d_lab_f, d_weak_f;

    // supervised CE over current labels (+ replayed exemplars)
    {
        const double denom = static_cast<double>(n_l + (ctx.replay_in_sup ? n_e : 0));
        if (denom > 0) {
            std::vector<double> ones_l(n_l, 1.0);
            auto h = ce_head(lab.logits, batch.labeled_y, ones_l, denom);
            lb.sup += h.value;
            d_lab_logits += h.grad;
            if (ctx.replay_in_sup && n_e > 0) {
                std::vector<double> ones_e(n_e, 1.0);
                auto he = ce_head(ex.logits, batch.exemplar_y, ones_e, denom);
                lb.sup += he.value;
                d_ex_logits += he.grad;
            }
        }
    }
    if (n_u > 0 && w.uns != 0.0) {
        auto u = uns_targets(res.routing);
        auto h = ce_head(strong.logits, u.targets, u.weights, static_cast<double>(n_u));
        lb.uns = h.value;
        d_strong_logits += h.grad * w.uns;
    }
    if (has_teacher && n_e > 0) {
        auto h = cl_head(ex.logits, forward_logits(ctx.teacher->model(), batch.exemplar_x), t.beta);
        lb.cl = h.value;
        d_ex_logits += h.grad * w.cl;
    }
    if (ctx.use_fsr) {
        if (n_l > 0) {
            std::vector<double> ones(n_l, 1.0);
            auto h = etf_head(lab.f(), batch.labeled_y, ones, static_cast<double>(n_l), *ctx.frame, t.gamma);
            lb.fsr += h.value;
            d_lab_f = h.grad * w.fsr;
        }
        if (n_u > 0) {
            auto u = fsr_targets(res.routing, ctx.tau);
            auto h = etf_head(weak.f(), u.targets, u.weights, static_cast<double>(n_u), *ctx.frame, t.gamma);
            lb.fsr += h.value;
            d_weak_f = h.grad * w.fsr;
        }
    }
    if (ctx.use_cud && has_teacher && n_u > 0 && !ctx.table->empty()) {
        auto teacher_f = forward_projection(ctx.teacher->model(), batch.weak_x);
        auto h = cud_head(weak.f(), teacher_f.rows, *ctx.table, t.xi);
        lb.cud = h.value;
        if (d_weak_f.empty()) d_weak_f = Matrix(n_u, student.proj_dim());
        d_weak_f += h.grad * w.cud;
    }
    lb.total = lb.sup + w.uns * lb.uns + w.cl * lb.cl + w.fsr * lb.fsr + w.cud * lb.cud;

    res.grads = backward(student, lab, &d_lab_logits, d_lab_f.empty() ? nullptr : &d_lab_f);
    // The weak view only feeds the feature branch; its logits produce
    // pseudo-labels and receive no gradient.
    if (!d_weak_f.empty()) res.grads.axpy(1.0, backward(student, weak, nullptr, &d_weak_f));
    if (n_u > 0) res.grads.axpy(1.0, backward(student, strong, &d_strong_logits, nullptr));
    if (use_exemplars) res.grads.axpy(1.0, backward(student, ex, &d_ex_logits, nullptr));
    return res;
}

}  // namespace sscl
