#pragma once

#include <span>
#include <vector>

#include "sscl/numkit.hpp"

namespace sscl {

/// Renormalised per-class mean of projection features. Row r of `means`
/// belongs to `classes[r]`.
struct ClassMeanTable {
    std::vector<int> classes;
    Matrix means;

    std::size_t size() const { return classes.size(); }
    bool empty() const { return classes.empty(); }
    /// Row index for a class, or -1.
    int row_of(int cls) const;
};

struct ClassMeanResult {
    ClassMeanTable table;
    std::vector<int> empty_classes;       // no samples at all
    std::vector<int> degenerate_classes;  // mean collapsed to ~0
};

/// Averages the rows of `features` per label over `classes` (in that order),
/// then renormalises. Classes with no rows or a zero mean are left out of the
/// table and reported.
ClassMeanResult class_means(const Matrix& features, std::span<const int> labels, std::span<const int> classes);

}  // namespace sscl
