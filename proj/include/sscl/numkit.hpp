#pragma once

// Dense matrix substrate: forward primitives and their analytic backward rules.
//
// Parallel kernels live in the `sscl` namespace and dispatch to OpenMP when the
// problem is large enough; `sscl::reference` holds plain serial versions that
// the tests and the benchmark compare against.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sscl {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const noexcept;

    Matrix transposed() const;
    /// Rows selected by index, in the given order.
    Matrix gather_rows(std::span<const std::size_t> idx) const;
    /// Leading `n` columns.
    Matrix left_cols(std::size_t n) const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

std::string shape_str(const Matrix& m);

struct GradPair {
    Matrix value;
    Matrix grad;
};

struct NormalizeResult {
    Matrix rows;
    std::vector<double> norms;
    std::vector<bool> degenerate;
    bool any_degenerate() const;
};

struct CosineResult {
    Matrix sim;
    std::vector<bool> degenerate_a;
    std::vector<bool> degenerate_b;
};

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kNormEps = 1e-12;

// ---- forward primitives (OpenMP-parallel where it pays) -------------------

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * bᵀ without materialising the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ * b without materialising the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix add_bias(const Matrix& x, const Matrix& bias);
Matrix relu(const Matrix& x);
NormalizeResult l2_normalize_rows(const Matrix& x, double eps = kNormEps);
Matrix softmax_rows(const Matrix& x, double temperature = 1.0);
double cross_entropy(const Matrix& probs, std::span<const int> targets);
double kl_divergence_rows(const Matrix& p, const Matrix& q);
CosineResult cosine_similarity_matrix(const Matrix& a, const Matrix& b, double eps = kNormEps);
Matrix column_sums(const Matrix& x);

// ---- backward rules --------------------------------------------------------

struct MatmulGrads {
    Matrix da;
    Matrix db;
};
MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& upstream);
Matrix relu_backward(const Matrix& x, const Matrix& upstream);
/// Full Jacobian-vector product of row normalisation; degenerate rows pass
/// the upstream gradient through unchanged (they were returned unchanged).
Matrix l2_normalize_backward(const Matrix& x, const Matrix& upstream, double eps = kNormEps);
struct CosineGrads {
    Matrix da;
    Matrix db;
};
CosineGrads cosine_similarity_backward(const Matrix& a, const Matrix& b, const Matrix& upstream,
                                       double eps = kNormEps);

/// mean_r CE(softmax(logits_r / T), target_r) and its gradient w.r.t. logits.
GradPair softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                               double temperature = 1.0);
/// Per-row weighted variant: sum_r w_r * CE_r / denom. Rows with w_r == 0 are
/// skipped entirely (their target is not read).
GradPair softmax_cross_entropy_weighted(const Matrix& logits, std::span<const int> targets,
                                        std::span<const double> weights, double denom,
                                        double temperature = 1.0);
/// mean_r KL(reference_r || softmax(logits_r / T)) and its gradient w.r.t. logits.
GradPair softmax_kl(const Matrix& logits, const Matrix& reference, double temperature = 1.0);

/// Name-dispatched backward used by the gradient-check harness.
///
/// Supported names: matmul, bias_add, relu, l2_normalize_rows, softmax_ce,
/// softmax_kl, cosine_similarity. `inputs` are the forward arguments (for
/// softmax_ce the targets travel in `targets`; for softmax_kl the second input
/// is the reference distribution). Returns one GradPair per matrix input.
struct OpArgs {
    std::vector<Matrix> inputs;
    std::vector<int> targets;
    double temperature = 1.0;
};
std::vector<GradPair> backward(std::string_view op, const OpArgs& args, const Matrix& upstream);
/// Forward of the same named op, for use alongside `backward`.
Matrix forward(std::string_view op, const OpArgs& args);

namespace reference {

// Serial, loop-by-loop versions kept as oracles and benchmark baselines.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& x, double temperature = 1.0);
NormalizeResult l2_normalize_rows(const Matrix& x, double eps = kNormEps);
CosineResult cosine_similarity_matrix(const Matrix& a, const Matrix& b, double eps = kNormEps);

}  // namespace reference

}  // namespace sscl
