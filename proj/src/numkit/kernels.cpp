#include <algorithm>
#include <cmath>
#include <cstdint>

#include "sscl/numkit.hpp"

namespace sscl {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::int64_t kParallelWork = 1 << 15;

void require(bool ok, const char* what, const Matrix& a, const Matrix& b) {
    if (!ok) throw DimensionError(std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
}

double row_norm(std::span<const double> r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul", a, b);
    const auto n = static_cast<std::int64_t>(a.rows());
    const std::size_t inner = a.cols(), m = b.cols();
    Matrix out(a.rows(), m);
    const std::int64_t work = n * static_cast<std::int64_t>(inner * m);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t i = 0; i < n; ++i) {
        double* o = out.row(i).data();
        const double* ai = a.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += aik * bk[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_bt", a, b);
    const auto n = static_cast<std::int64_t>(a.rows());
    const std::size_t inner = a.cols(), m = b.rows();
    Matrix out(a.rows(), m);
    const std::int64_t work = n * static_cast<std::int64_t>(inner * m);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t i = 0; i < n; ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < inner; ++k) s += ai[k] * bj[k];
            out(i, j) = s;
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_at", a, b);
    const auto n = static_cast<std::int64_t>(a.cols());
    const std::size_t inner = a.rows(), m = b.cols();
    Matrix out(a.cols(), m);
    const std::int64_t work = n * static_cast<std::int64_t>(inner * m);
    // Each output row i accumulates over k in a fixed order, so results do
    // not depend on the thread count.
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t i = 0; i < n; ++i) {
        double* o = out.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            const double* bk = b.row(k).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += aki * bk[j];
        }
    }
    return out;
}

Matrix add_bias(const Matrix& x, const Matrix& bias) {
    require(bias.rows() == 1 && bias.cols() == x.cols(), "add_bias", x, bias);
    Matrix out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias(0, c);
    }
    return out;
}

Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

NormalizeResult l2_normalize_rows(const Matrix& x, double eps) {
    if (x.empty()) throw ParameterError("l2_normalize_rows: empty input");
    NormalizeResult res{x, std::vector<double>(x.rows()), std::vector<bool>(x.rows(), false)};
    const auto n = static_cast<std::int64_t>(x.rows());
    std::vector<char> degenerate(x.rows(), 0);
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(x.cols()) > kParallelWork)
    for (std::int64_t r = 0; r < n; ++r) {
        auto row = res.rows.row(r);
        const double norm = row_norm(row);
        res.norms[r] = norm;
        if (norm <= eps) {
            degenerate[r] = 1;
            continue;
        }
        for (double& v : row) v /= norm;
    }
    for (std::size_t r = 0; r < x.rows(); ++r) res.degenerate[r] = degenerate[r] != 0;
    return res;
}

Matrix softmax_rows(const Matrix& x, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("softmax_rows: temperature must be > 0");
    Matrix out(x.rows(), x.cols());
    const auto n = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(x.cols()) > kParallelWork)
    for (std::int64_t r = 0; r < n; ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp((in[c] - mx) / temperature);
            sum += o[c];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

double cross_entropy(const Matrix& probs, std::span<const int> targets) {
    if (targets.size() != probs.rows())
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(probs.rows()) + " rows");
    if (probs.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= probs.cols())
            throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                             std::to_string(probs.cols()) + ")");
        total -= std::log(std::max(probs(r, t), kProbFloor));
    }
    return total / static_cast<double>(probs.rows());
}

double kl_divergence_rows(const Matrix& p, const Matrix& q) {
    require(p.same_shape(q), "kl_divergence_rows", p, q);
    if (p.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double row_kl = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double pi = p(r, c);
            if (pi <= 0.0) continue;
            row_kl += pi * (std::log(std::max(pi, kProbFloor)) - std::log(std::max(q(r, c), kProbFloor)));
        }
        // Clamping can push a numerically-zero divergence a hair below 0.
        if (row_kl < 0.0 && row_kl > -1e-12) row_kl = 0.0;
        total += row_kl;
    }
    return total / static_cast<double>(p.rows());
}

CosineResult cosine_similarity_matrix(const Matrix& a, const Matrix& b, double eps) {
    require(a.cols() == b.cols(), "cosine_similarity_matrix", a, b);
    CosineResult res{Matrix(a.rows(), b.rows()), std::vector<bool>(a.rows()),
                     std::vector<bool>(b.rows())};
    std::vector<double> na(a.rows()), nb(b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        na[i] = row_norm(a.row(i));
        res.degenerate_a[i] = na[i] <= eps;
    }
    for (std::size_t j = 0; j < b.rows(); ++j) {
        nb[j] = row_norm(b.row(j));
        res.degenerate_b[j] = nb[j] <= eps;
    }
    Matrix dots = matmul_bt(a, b);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            if (res.degenerate_a[i] || res.degenerate_b[j]) continue;
            res.sim(i, j) = dots(i, j) / (na[i] * nb[j]);
        }
    }
    return res;
}

Matrix column_sums(const Matrix& x) {
    Matrix out(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
    return out;
}

}  // namespace sscl
