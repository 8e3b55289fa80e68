#pragma once

// Shared helpers for the test binaries: random data, tiny models and a
// central-difference gradient checker that works on whole Parameters.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sscl/model.hpp"
#include "sscl/numkit.hpp"
#include "sscl/rng.hpp"

namespace sscl::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (double& v : m.data()) v = n(rng);
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(n);
    for (int& v : y) v = u(rng);
    return y;
}

/// Small model with `classes` classifier columns, for gradient checks.
inline ModelState tiny_model(std::uint64_t seed, std::size_t classes, std::size_t input = 5,
                             std::vector<std::size_t> hidden = {7, 6}, std::size_t proj = 6) {
    ModelConfig mc;
    mc.input_dim = input;
    mc.hidden = std::move(hidden);
    mc.proj_dim = proj;
    mc.seed = seed;
    ModelState m = init_model(mc);
    Rng rng = make_rng(seed, "tiny-expand");
    m = expand_classifier(m, classes, rng);
    // Non-zero biases so their gradients are exercised too.
    std::normal_distribution<double> n(0.0, 0.1);
    m.params.for_each([&](const std::string& name, Matrix& mat) {
        if (name.ends_with("bias"))
            for (double& v : mat.data()) v = n(rng);
    });
    return m;
}

inline std::vector<double> flatten(const Parameters& p) {
    std::vector<double> out;
    p.visit([&](const std::string&, const Matrix& m) { out.insert(out.end(), m.data().begin(), m.data().end()); });
    return out;
}

/// Central differences of `loss` w.r.t. every parameter of `model`.
inline std::vector<double> numeric_gradient(const ModelState& model, const std::function<double(const ModelState&)>& loss,
                                            double h = 1e-5) {
    ModelState probe = model;
    std::vector<double*> slots;
    probe.params.for_each([&](const std::string&, Matrix& m) {
        for (double& v : m.data()) slots.push_back(&v);
    });
    std::vector<double> g(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double x = *slots[i];
        *slots[i] = x + h;
        const double up = loss(probe);
        *slots[i] = x - h;
        const double down = loss(probe);
        *slots[i] = x;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// |a - b| / max(|a| + |b|, floor) over the flattened vectors.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

}  // namespace sscl::test
