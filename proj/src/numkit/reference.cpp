// Serial reference kernels. Straightforward loops with no blocking or
// threading; kept as oracles for the parallel versions.

#include <cmath>

#include "sscl/numkit.hpp"

namespace sscl::reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("reference::matmul: " + shape_str(a) + " vs " + shape_str(b));
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix softmax_rows(const Matrix& x, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("reference::softmax_rows: temperature must be > 0");
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mx = x(r, 0);
        for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) sum += std::exp((x(r, c) - mx) / temperature);
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = std::exp((x(r, c) - mx) / temperature) / sum;
    }
    return out;
}

NormalizeResult l2_normalize_rows(const Matrix& x, double eps) {
    NormalizeResult res{x, std::vector<double>(x.rows()), std::vector<bool>(x.rows(), false)};
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c) * x(r, c);
        const double norm = std::sqrt(s);
        res.norms[r] = norm;
        if (norm <= eps) {
            res.degenerate[r] = true;
            continue;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) res.rows(r, c) = x(r, c) / norm;
    }
    return res;
}

CosineResult cosine_similarity_matrix(const Matrix& a, const Matrix& b, double eps) {
    if (a.cols() != b.cols())
        throw DimensionError("reference::cosine_similarity_matrix: " + shape_str(a) + " vs " + shape_str(b));
    CosineResult res{Matrix(a.rows(), b.rows()), std::vector<bool>(a.rows()), std::vector<bool>(b.rows())};
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                dot += a(i, k) * b(j, k);
                na += a(i, k) * a(i, k);
                nb += b(j, k) * b(j, k);
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            res.degenerate_a[i] = na <= eps;
            res.degenerate_b[j] = nb <= eps;
            res.sim(i, j) = (na <= eps || nb <= eps) ? 0.0 : dot / (na * nb);
        }
    return res;
}

}  // namespace sscl::reference
