#include <algorithm>
#include <cmath>

#include "sscl/numkit.hpp"

namespace sscl {

MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& upstream) {
    if (upstream.rows() != a.rows() || upstream.cols() != b.cols())
        throw DimensionError("matmul_backward: upstream " + shape_str(upstream));
    return {matmul_bt(upstream, b), matmul_at(a, upstream)};
}

Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
    if (!x.same_shape(upstream)) throw DimensionError("relu_backward: shape mismatch");
    Matrix g = upstream;
    auto xs = x.data();
    auto gs = g.data();
    for (std::size_t i = 0; i < gs.size(); ++i)
        if (!(xs[i] > 0.0)) gs[i] = 0.0;
    return g;
}

Matrix l2_normalize_backward(const Matrix& x, const Matrix& upstream, double eps) {
    if (!x.same_shape(upstream)) throw DimensionError("l2_normalize_backward: shape mismatch");
    Matrix g(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto ur = upstream.row(r);
        auto gr = g.row(r);
        double n2 = 0.0;
        for (double v : xr) n2 += v * v;
        const double norm = std::sqrt(n2);
        if (norm <= eps) {
            std::copy(ur.begin(), ur.end(), gr.begin());
            continue;
        }
        // d(x/|x|) = (I - y yᵀ) / |x|
        double yu = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) yu += xr[c] * ur[c];
        yu /= norm;
        for (std::size_t c = 0; c < xr.size(); ++c) gr[c] = (ur[c] - (xr[c] / norm) * yu) / norm;
    }
    return g;
}

CosineGrads cosine_similarity_backward(const Matrix& a, const Matrix& b, const Matrix& upstream,
                                       double eps) {
    if (upstream.rows() != a.rows() || upstream.cols() != b.rows())
        throw DimensionError("cosine_similarity_backward: upstream " + shape_str(upstream));
    auto na = l2_normalize_rows(a, eps);
    auto nb = l2_normalize_rows(b, eps);
    // Zero rows contributed similarity 0 regardless of the other side.
    Matrix u = upstream;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            if (na.degenerate[i] || nb.degenerate[j]) u(i, j) = 0.0;
    Matrix d_ahat = matmul(u, nb.rows);
    Matrix d_bhat = matmul_at(u, na.rows);
    CosineGrads g{l2_normalize_backward(a, d_ahat, eps), l2_normalize_backward(b, d_bhat, eps)};
    for (std::size_t i = 0; i < a.rows(); ++i)
        if (na.degenerate[i])
            for (double& v : g.da.row(i)) v = 0.0;
    for (std::size_t j = 0; j < b.rows(); ++j)
        if (nb.degenerate[j])
            for (double& v : g.db.row(j)) v = 0.0;
    return g;
}

GradPair softmax_cross_entropy_weighted(const Matrix& logits, std::span<const int> targets,
                                        std::span<const double> weights, double denom,
                                        double temperature) {
    if (targets.size() != logits.rows() || weights.size() != logits.rows())
        throw DimensionError("softmax_cross_entropy: targets/weights length mismatch");
    if (!(denom > 0.0)) throw ParameterError("softmax_cross_entropy: denominator must be > 0");
    Matrix probs = softmax_rows(logits, temperature);
    GradPair out{Matrix(1, 1), Matrix(logits.rows(), logits.cols())};
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (weights[r] == 0.0) continue;
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= logits.cols())
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " out of range [0," +
                             std::to_string(logits.cols()) + ")");
        const auto z = logits.row(r);
        const double top = *std::max_element(z.begin(), z.end()) / temperature;
        double sum = 0.0;
        for (double v : z) sum += std::exp(v / temperature - top);
        total -= weights[r] * (z[t] / temperature - top - std::log(sum));
        const double scale = weights[r] / (denom * temperature);
        for (std::size_t c = 0; c < logits.cols(); ++c)
            out.grad(r, c) = scale * (probs(r, c) - (static_cast<int>(c) == t ? 1.0 : 0.0));
    }
    out.value(0, 0) = total / denom;
    return out;
}

GradPair softmax_cross_entropy(const Matrix& logits, std::span<const int> targets, double temperature) {
    if (logits.rows() == 0) return {Matrix(1, 1), Matrix(0, logits.cols())};
    std::vector<double> ones(logits.rows(), 1.0);
    return softmax_cross_entropy_weighted(logits, targets, ones, static_cast<double>(logits.rows()),
                                          temperature);
}

GradPair softmax_kl(const Matrix& logits, const Matrix& reference, double temperature) {
    if (!logits.same_shape(reference))
        throw DimensionError("softmax_kl: " + shape_str(logits) + " vs " + shape_str(reference));
    GradPair out{Matrix(1, 1), Matrix(logits.rows(), logits.cols())};
    if (logits.rows() == 0) return out;
    Matrix q = softmax_rows(logits, temperature);
    out.value(0, 0) = kl_divergence_rows(reference, q);
    const double n = static_cast<double>(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mass = 0.0;
        for (double v : reference.row(r)) mass += v;
        for (std::size_t c = 0; c < logits.cols(); ++c)
            out.grad(r, c) = (mass * q(r, c) - reference(r, c)) / (n * temperature);
    }
    return out;
}

namespace {

const Matrix& input(const OpArgs& args, std::size_t i, std::string_view op) {
    if (args.inputs.size() <= i)
        throw ContractError(std::string(op) + ": expected at least " + std::to_string(i + 1) + " inputs");
    return args.inputs[i];
}

}  // namespace

Matrix forward(std::string_view op, const OpArgs& args) {
    if (op == "matmul") return matmul(input(args, 0, op), input(args, 1, op));
    if (op == "bias_add") return add_bias(input(args, 0, op), input(args, 1, op));
    if (op == "relu") return relu(input(args, 0, op));
    if (op == "l2_normalize_rows") return l2_normalize_rows(input(args, 0, op)).rows;
    if (op == "softmax_ce") return softmax_cross_entropy(input(args, 0, op), args.targets, args.temperature).value;
    if (op == "softmax_kl")
        return softmax_kl(input(args, 0, op), input(args, 1, op), args.temperature).value;
    if (op == "cosine_similarity") return cosine_similarity_matrix(input(args, 0, op), input(args, 1, op)).sim;
    throw ContractError("unknown op '" + std::string(op) + "'");
}

std::vector<GradPair> backward(std::string_view op, const OpArgs& args, const Matrix& upstream) {
    if (op == "matmul") {
        const auto& a = input(args, 0, op);
        const auto& b = input(args, 1, op);
        auto g = matmul_backward(a, b, upstream);
        return {{a, std::move(g.da)}, {b, std::move(g.db)}};
    }
    if (op == "bias_add") {
        const auto& x = input(args, 0, op);
        const auto& bias = input(args, 1, op);
        return {{x, upstream}, {bias, column_sums(upstream)}};
    }
    if (op == "relu") {
        const auto& x = input(args, 0, op);
        return {{x, relu_backward(x, upstream)}};
    }
    if (op == "l2_normalize_rows") {
        const auto& x = input(args, 0, op);
        return {{x, l2_normalize_backward(x, upstream)}};
    }
    if (op == "softmax_ce") {
        const auto& x = input(args, 0, op);
        auto r = softmax_cross_entropy(x, args.targets, args.temperature);
        return {{x, r.grad * upstream(0, 0)}};
    }
    if (op == "softmax_kl") {
        const auto& x = input(args, 0, op);
        const auto& ref = input(args, 1, op);
        auto r = softmax_kl(x, ref, args.temperature);
        // d/dP of mean_r sum_c P log(P/Q): (log P + 1 - log Q) / n
        Matrix q = softmax_rows(x, args.temperature);
        Matrix dref(ref.rows(), ref.cols());
        const double n = static_cast<double>(ref.rows());
        for (std::size_t i = 0; i < ref.rows(); ++i)
            for (std::size_t c = 0; c < ref.cols(); ++c)
                dref(i, c) = upstream(0, 0) *
                             (std::log(std::max(ref(i, c), kProbFloor)) + 1.0 -
                              std::log(std::max(q(i, c), kProbFloor))) /
                             n;
        return {{x, r.grad * upstream(0, 0)}, {ref, std::move(dref)}};
    }
    if (op == "cosine_similarity") {
        const auto& a = input(args, 0, op);
        const auto& b = input(args, 1, op);
        auto g = cosine_similarity_backward(a, b, upstream);
        return {{a, std::move(g.da)}, {b, std::move(g.db)}};
    }
    throw ContractError("unknown op '" + std::string(op) + "'");
}

}  // namespace sscl
