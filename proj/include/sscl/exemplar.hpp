#pragma once

// Bounded exemplar memory with iCaRL herding selection.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "sscl/class_means.hpp"
#include "sscl/model.hpp"
#include "sscl/stream.hpp"

namespace sscl {

struct Exemplar {
    std::int64_t id = 0;
    int label = 0;
    std::vector<double> input;  // raw input vector; features are recomputed per task
};

struct ExemplarBuffer {
    std::size_t capacity = 0;
    /// Priority-ordered per class: earlier entries are kept longer.
    std::map<int, std::vector<Exemplar>> per_class;

    std::size_t size() const;
    std::vector<int> classes() const;
    /// All exemplars as one labelled set, class-major in priority order.
    SampleSet as_sample_set(std::size_t input_dim) const;
};

/// Greedy herding over precomputed extractor features (one row per
/// candidate). Returns row indices in selection order. Each step picks the
/// unselected candidate whose addition brings the running mean closest to the
/// class mean; exact ties go to the lowest id. Asking for more than available
/// returns every candidate in herding order.
std::vector<std::size_t> herding_select(const Matrix& features, std::span<const std::int64_t> ids, std::size_t m);

/// Herding applied to one class's labelled samples.
std::vector<Exemplar> construct_exemplar_set(const SampleSet& class_samples, const Matrix& features, std::size_t m);

/// Keeps the first min(m, size) exemplars.
std::vector<Exemplar> reduce_exemplar_set(std::vector<Exemplar> exemplars, std::size_t m);

/// Per-class quota ceil(M / k).
std::size_t per_class_quota(std::size_t capacity, std::size_t observed_classes);

/// End-of-task update: shrink old classes to the new quota, herd the new
/// classes with the current extractor, then trim the largest classes
/// (highest class index first) until the buffer fits the capacity.
ExemplarBuffer rebalance(const ExemplarBuffer& buffer, const std::map<int, SampleSet>& new_class_sets,
                         const ModelState& model);

/// Means of L2-normalised projection features over each class's exemplars.
ClassMeanResult class_means_from_buffer(const ExemplarBuffer& buffer, const ModelState& model);

/// CSV with columns class,rank,sample_id.
void write_buffer_csv(const ExemplarBuffer& buffer, const std::filesystem::path& path);

}  // namespace sscl
