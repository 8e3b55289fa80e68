#include "sscl/class_means.hpp"

#include <cmath>

namespace sscl {

int ClassMeanTable::row_of(int cls) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == cls) return static_cast<int>(i);
    return -1;
}

ClassMeanResult class_means(const Matrix& features, std::span<const int> labels, std::span<const int> classes) {
    if (labels.size() != features.rows()) throw DimensionError("class_means: labels/features length mismatch");
    const std::size_t d = features.cols();
    ClassMeanResult res;
    std::vector<double> sum(d);
    std::vector<double> kept;
    for (int cls : classes) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::size_t count = 0;
        for (std::size_t r = 0; r < features.rows(); ++r) {
            if (labels[r] != cls) continue;
            auto row = features.row(r);
            for (std::size_t j = 0; j < d; ++j) sum[j] += row[j];
            ++count;
        }
        if (count == 0) {
            res.empty_classes.push_back(cls);
            continue;
        }
        double norm = 0.0;
        for (double& v : sum) {
            v /= static_cast<double>(count);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm <= kNormEps) {
            res.degenerate_classes.push_back(cls);
            continue;
        }
        for (double v : sum) kept.push_back(v / norm);
        res.table.classes.push_back(cls);
    }
    res.table.means = Matrix(res.table.classes.size(), d, std::move(kept));
    return res;
}

}  // namespace sscl
