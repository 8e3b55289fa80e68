#pragma once

// Loss terms of the USP objective and the divide-and-conquer pseudo-labeller.
//
//   total = sup + λ_uns·uns' + λ_cl·cl + λ_fsr·fsr + λ_cud·cud
//
// Every term is available on its own (forward + parameter gradients) and
// through `total_loss`, which shares forward passes between terms.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sscl/class_means.hpp"
#include "sscl/etf.hpp"
#include "sscl/model.hpp"
#include "sscl/stream.hpp"

namespace sscl {

enum class PseudoStrategy { dcp, p_cls, p_ncm, p_r };
std::string to_string(PseudoStrategy s);
PseudoStrategy parse_pseudo_strategy(const std::string& s);

enum class Route { classifier, ncm, dropped };

struct PseudoLabelBatch {
    std::vector<double> confidence;    // max softmax probability on the weak view
    std::vector<int> classifier_label;  // argmax of the weak-view logits
    std::vector<int> ncm_label;         // nearest class mean, -1 if the feature was degenerate
    std::vector<Route> route;
    std::vector<int> final_label;  // -1 when the sample is dropped
    double tau = 0.95;

    std::size_t size() const { return confidence.size(); }
    bool high_confidence(std::size_t i) const { return confidence[i] >= tau; }
    std::size_t high_count() const;
    std::size_t low_count() const { return size() - high_count(); }
};

struct LossWeights {
    double uns = 1.0;
    double cl = 1.0;
    double fsr = 1.0;
    double cud = 1.0;
};

struct Temperatures {
    double beta = 0.1;   // logit distillation
    double gamma = 0.1;  // ETF contrastive
    double xi = 0.1;     // class-mean distillation
};

struct LossBreakdown {
    double sup = 0.0, uns = 0.0, cl = 0.0, fsr = 0.0, cud = 0.0;
    double total = 0.0;
    std::size_t high_conf_count = 0;
    std::size_t low_conf_count = 0;
};

/// Value plus gradients w.r.t. every parameter of the student.
struct TermResult {
    double value = 0.0;
    Parameters grads;
};

// ---- class means and NCM ---------------------------------------------------------

/// Renormalised mean projection feature of each class in `classes` over the
/// labelled set. Throws if a class has no labelled sample.
ClassMeanTable class_means_labeled(const SampleSet& labeled, std::span<const int> classes, const ModelState& model);

/// Class of the most cosine-similar table row; ties go to the lowest class
/// index. Empty optional for a degenerate feature or an empty table.
std::optional<int> ncm_label(std::span<const double> f, const ClassMeanTable& table);

// ---- pseudo-labelling ------------------------------------------------------------

/// Pseudo-labels from weak-view logits and normalised features.
///   dcp:   confident -> classifier, otherwise -> NCM
///   p-cls: confident -> classifier, otherwise dropped (FixMatch rule)
///   p-ncm: every sample -> NCM
///   p-r:   confident -> NCM, otherwise -> classifier
PseudoLabelBatch route_pseudo_labels(PseudoStrategy strategy, const Matrix& weak_logits, const Matrix& weak_f,
                                     const ClassMeanTable& table, double tau);

PseudoLabelBatch dcp_route(const Matrix& weak_logits, const Matrix& weak_f, const ClassMeanTable& table, double tau);
/// Convenience overload running the model on the weak view.
PseudoLabelBatch dcp_route(const Matrix& weak_x, const ModelState& model, const ClassMeanTable& table, double tau);

// ---- individual terms ------------------------------------------------------------

TermResult loss_sup(const ModelState& model, const Matrix& x, std::span<const int> y);

/// Mean over the batch of CE(strong-view prediction, final pseudo-label);
/// dropped samples contribute zero but still count in the mean.
TermResult loss_uns_prime(const ModelState& model, const Matrix& strong_x, const PseudoLabelBatch& routing);

/// KL(teacher || student) of β-tempered softmaxes over the teacher's classes.
/// Zero when there is no teacher.
TermResult loss_cl(const ModelState& student, const TeacherSnapshot* teacher, const Matrix& exemplar_x, double beta);

/// ETF alignment: labelled rows target their class column, confident
/// unlabelled rows target the classifier pseudo-label; softmax over all K
/// columns of cos(f, E_i)/γ. The two parts are averaged over their own batch
/// sizes and summed.
TermResult loss_fsr(const ModelState& model, const Matrix& labeled_x, std::span<const int> labeled_y,
                    const Matrix& weak_x, const PseudoLabelBatch& routing, const EtfFrame& frame, double gamma,
                    double tau);

/// KL(teacher || student) of softmax(cos(f, M)/ξ) with the class-mean matrix
/// M held constant. Zero when there is no teacher.
TermResult loss_cud(const ModelState& student, const TeacherSnapshot* teacher, const Matrix& weak_x,
                    const ClassMeanTable& table, double xi);

// ---- full objective --------------------------------------------------------------

struct StepBatch {
    Matrix labeled_x;
    std::vector<int> labeled_y;
    Matrix exemplar_x;  // may have zero rows
    std::vector<int> exemplar_y;
    Matrix weak_x;
    Matrix strong_x;
};

struct LossContext {
    const ModelState* student = nullptr;
    const TeacherSnapshot* teacher = nullptr;  // null on the first task
    const EtfFrame* frame = nullptr;
    const ClassMeanTable* table = nullptr;  // current-task labelled class means
    LossWeights weights;
    Temperatures temps;
    double tau = 0.95;
    PseudoStrategy strategy = PseudoStrategy::dcp;
    bool use_fsr = true;
    bool use_cud = true;
    /// Exemplars also enter the supervised cross-entropy (iCaRL replay).
    bool replay_in_sup = true;
};

struct TotalLossResult {
    LossBreakdown breakdown;
    Parameters grads;
    PseudoLabelBatch routing;
};

/// Evaluates the weighted objective. `fixed_routing`, when given, replaces
/// the routing computed from the weak view (used by gradient checks).
TotalLossResult total_loss(const StepBatch& batch, const LossContext& ctx,
                           const PseudoLabelBatch* fixed_routing = nullptr);

}  // namespace sscl
