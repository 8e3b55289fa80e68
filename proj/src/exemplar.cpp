#include "sscl/exemplar.hpp"

#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

namespace sscl {

std::size_t ExemplarBuffer::size() const {
    std::size_t n = 0;
    for (const auto& [cls, list] : per_class) n += list.size();
    return n;
}

std::vector<int> ExemplarBuffer::classes() const {
    std::vector<int> out;
    for (const auto& [cls, list] : per_class) out.push_back(cls);
    return out;
}

SampleSet ExemplarBuffer::as_sample_set(std::size_t input_dim) const {
    SampleSet set;
    auto& st = set.features.storage();
    for (const auto& [cls, list] : per_class)
        for (const auto& e : list) {
            if (e.input.size() != input_dim) throw DimensionError("exemplar input dimension mismatch");
            st.insert(st.end(), e.input.begin(), e.input.end());
            set.labels.push_back(e.label);
            set.ids.push_back(e.id);
        }
    set.features = Matrix(set.ids.size(), input_dim, std::move(st));
    return set;
}

std::vector<std::size_t> herding_select(const Matrix& features, std::span<const std::int64_t> ids, std::size_t m) {
    const std::size_t n = features.rows(), d = features.cols();
    if (ids.size() != n) throw DimensionError("herding_select: ids/features length mismatch");
    if (m > n) {
        spdlog::warn("herding: requested {} exemplars but only {} samples available; taking all", m, n);
        m = n;
    }
    std::vector<double> mu(d, 0.0), picked_sum(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) mu[j] += features(r, j);
    for (double& v : mu) v /= static_cast<double>(n);

    std::vector<bool> taken(n, false);
    std::vector<std::size_t> order;
    order.reserve(m);
    for (std::size_t k = 1; k <= m; ++k) {
        std::size_t best = n;
        double best_dist = std::numeric_limits<double>::infinity();
        const double inv_k = 1.0 / static_cast<double>(k);
        for (std::size_t r = 0; r < n; ++r) {
            if (taken[r]) continue;
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = mu[j] - (features(r, j) + picked_sum[j]) * inv_k;
                dist += diff * diff;
            }
            if (best == n || dist < best_dist || (dist == best_dist && ids[r] < ids[best])) {
                best = r;
                best_dist = dist;
            }
        }
        taken[best] = true;
        order.push_back(best);
        for (std::size_t j = 0; j < d; ++j) picked_sum[j] += features(best, j);
    }
    return order;
}

std::vector<Exemplar> construct_exemplar_set(const SampleSet& class_samples, const Matrix& features, std::size_t m) {
    if (features.rows() != class_samples.size())
        throw DimensionError("construct_exemplar_set: one feature row per sample required");
    std::vector<Exemplar> out;
    for (std::size_t idx : herding_select(features, class_samples.ids, m)) {
        auto row = class_samples.features.row(idx);
        out.push_back({class_samples.ids[idx], class_samples.labels[idx], {row.begin(), row.end()}});
    }
    return out;
}

std::vector<Exemplar> reduce_exemplar_set(std::vector<Exemplar> exemplars, std::size_t m) {
    if (exemplars.size() > m) exemplars.resize(m);
    return exemplars;
}

std::size_t per_class_quota(std::size_t capacity, std::size_t observed_classes) {
    if (observed_classes == 0) return capacity;
    return (capacity + observed_classes - 1) / observed_classes;
}

ExemplarBuffer rebalance(const ExemplarBuffer& buffer, const std::map<int, SampleSet>& new_class_sets,
                         const ModelState& model) {
    ExemplarBuffer out;
    out.capacity = buffer.capacity;
    std::size_t k = buffer.per_class.size();
    for (const auto& [cls, set] : new_class_sets)
        if (!buffer.per_class.contains(cls)) ++k;
    const std::size_t quota = per_class_quota(buffer.capacity, k);

    for (const auto& [cls, list] : buffer.per_class) out.per_class[cls] = reduce_exemplar_set(list, quota);
    for (const auto& [cls, set] : new_class_sets) {
        if (set.empty()) {
            spdlog::warn("rebalance: class {} has no labelled samples; nothing stored", cls);
            continue;
        }
        Matrix feats = extract_features(model, set.features);
        out.per_class[cls] = construct_exemplar_set(set, feats, std::min(quota, set.size()));
    }

    // ceil(M/k) * k can overshoot M; drop tail exemplars from the fullest classes.
    std::size_t total = out.size();
    while (total > out.capacity) {
        auto victim = out.per_class.end();
        for (auto it = out.per_class.begin(); it != out.per_class.end(); ++it)
            if (victim == out.per_class.end() || it->second.size() >= victim->second.size()) victim = it;
        victim->second.pop_back();
        --total;
    }
    return out;
}

ClassMeanResult class_means_from_buffer(const ExemplarBuffer& buffer, const ModelState& model) {
    auto classes = buffer.classes();
    SampleSet set = buffer.as_sample_set(model.input_dim());
    if (set.empty()) {
        ClassMeanResult r;
        r.empty_classes = classes;
        r.table.means = Matrix(0, model.proj_dim());
        return r;
    }
    auto proj = forward_projection(model, set.features);
    auto res = class_means(proj.rows, set.labels, classes);
    for (int c : res.empty_classes) spdlog::warn("class {} has no exemplars; excluded from NCM", c);
    for (int c : res.degenerate_classes) spdlog::warn("class {} exemplar mean is degenerate; excluded from NCM", c);
    return res;
}

void write_buffer_csv(const ExemplarBuffer& buffer, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "class,rank,sample_id\n";
    for (const auto& [cls, list] : buffer.per_class)
        for (std::size_t r = 0; r < list.size(); ++r) fmt::print(out, "{},{},{}\n", cls, r, list[r].id);
}

}  // namespace sscl
