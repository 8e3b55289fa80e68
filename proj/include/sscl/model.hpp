#pragma once

// Learner: ReLU MLP feature extractor F, growing linear classifier G and a
// linear projection head P whose output is L2-normalised.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sscl/numkit.hpp"
#include "sscl/rng.hpp"

namespace sscl {

struct Linear {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
};

struct Parameters {
    std::vector<Linear> extractor;
    Linear classifier;
    Linear projector;

    /// Visits every parameter matrix in a fixed order with a stable name.
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    Parameters zeros_like() const;
    Parameters& axpy(double scale, const Parameters& other);  // this += scale * other
};

struct ModelConfig {
    std::size_t input_dim = 20;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t proj_dim = 32;
    bool projector_bias = true;
    std::uint64_t seed = 0;
};

struct ModelState {
    Parameters params;
    std::size_t observed_classes = 0;
    int task_id = 0;  // last task trained through
    bool projector_bias = true;  // false pins the projector bias at zero

    std::size_t input_dim() const { return params.extractor.front().weight.rows(); }
    std::size_t feat_dim() const { return params.classifier.weight.rows(); }
    std::size_t proj_dim() const { return params.projector.weight.cols(); }
};

/// Gaussian init with std 1/sqrt(fan_in), zero biases, empty classifier.
ModelState init_model(const ModelConfig& config);

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // per hidden layer, before ReLU
    std::vector<Matrix> post;  // per hidden layer, after ReLU; post.back() is F(x)
    Matrix logits;             // G(F(x))
    Matrix projection;         // P(F(x))
    NormalizeResult normalized;  // f = P(F(x)) / |P(F(x))|

    const Matrix& features() const { return post.back(); }
    const Matrix& f() const { return normalized.rows; }
};

enum Heads : unsigned { kLogits = 1u, kProjection = 2u, kBoth = 3u };

ForwardCache forward(const ModelState& m, const Matrix& x, unsigned heads = kBoth);
Matrix forward_logits(const ModelState& m, const Matrix& x);
/// Unit-norm projection rows (degenerate rows returned as-is and flagged).
NormalizeResult forward_projection(const ModelState& m, const Matrix& x);
/// Raw extractor output F(x).
Matrix extract_features(const ModelState& m, const Matrix& x);

/// Backpropagates upstream gradients on the logits and/or on the normalised
/// projection f. Either pointer may be null.
Parameters backward(const ModelState& m, const ForwardCache& cache, const Matrix* d_logits,
                    const Matrix* d_f);

ModelState expand_classifier(const ModelState& m, std::size_t new_classes, Rng& rng);

/// Frozen deep copy of a model; there is no mutable access after creation.
class TeacherSnapshot {
public:
    explicit TeacherSnapshot(ModelState state) : state_(std::move(state)) {}
    const ModelState& model() const { return state_; }
    int task_id() const { return state_.task_id; }

private:
    ModelState state_;
};

TeacherSnapshot snapshot(const ModelState& m);

/// Text header (shapes, observed_classes, task_id) followed by raw
/// little-endian doubles; round-trips bit-exactly.
void save_checkpoint(const ModelState& m, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace sscl
