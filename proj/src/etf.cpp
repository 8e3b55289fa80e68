#include "sscl/etf.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sscl/rng.hpp"

namespace sscl {
namespace {

// Modified Gram-Schmidt with one re-orthogonalisation pass ("twice is
// enough"), applied column by column on a d x K matrix.
Matrix orthonormal_columns(Matrix g) {
    const std::size_t d = g.rows(), k = g.cols();
    for (std::size_t j = 0; j < k; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += g(r, i) * g(r, j);
                for (std::size_t r = 0; r < d; ++r) g(r, j) -= dot * g(r, i);
            }
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < d; ++r) norm += g(r, j) * g(r, j);
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw ParameterError("build_etf: random basis is rank deficient");
        for (std::size_t r = 0; r < d; ++r) g(r, j) /= norm;
    }
    return g;
}

}  // namespace

EtfFrame build_etf(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    if (num_classes < 2) throw ParameterError("build_etf: need at least 2 classes");
    if (dim < num_classes)
        throw ParameterError(fmt::format("build_etf: dim {} < num_classes {}", dim, num_classes));

    Rng rng = make_rng(seed, "etf");
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(dim, num_classes);
    for (double& v : g.data()) v = normal(rng);
    Matrix u = orthonormal_columns(std::move(g));

    const double k = static_cast<double>(num_classes);
    Matrix centering = Matrix::identity(num_classes);
    for (double& v : centering.data()) v -= 1.0 / k;

    EtfFrame frame;
    frame.dim = dim;
    frame.num_classes = num_classes;
    frame.seed = seed;
    frame.columns = matmul(u, centering) * std::sqrt(k / (k - 1.0));
    sync_prototypes(frame);
    return frame;
}

void sync_prototypes(EtfFrame& frame) { frame.prototypes = frame.columns.transposed(); }

EtfReport verify_etf(const EtfFrame& frame, double tol) {
    EtfReport rep;
    const std::size_t k = frame.columns.cols();
    if (k < 2 || frame.columns.rows() == 0) return rep;
    Matrix gram = matmul_at(frame.columns, frame.columns);
    const double target = -1.0 / static_cast<double>(k - 1);
    for (std::size_t i = 0; i < k; ++i) {
        rep.max_norm_deviation = std::max(rep.max_norm_deviation, std::abs(std::sqrt(gram(i, i)) - 1.0));
        for (std::size_t j = 0; j < k; ++j)
            if (i != j) rep.max_gram_deviation = std::max(rep.max_gram_deviation, std::abs(gram(i, j) - target));
    }
    rep.norms_ok = rep.max_norm_deviation <= tol;
    rep.gram_ok = rep.max_gram_deviation <= tol;
    return rep;
}

void write_etf_csv(const EtfFrame& frame, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    for (std::size_t r = 0; r < frame.columns.rows(); ++r) {
        for (std::size_t c = 0; c < frame.columns.cols(); ++c)
            fmt::print(out, "{}{}", c ? "," : "", frame.columns(r, c));
        out << '\n';
    }
}

}  // namespace sscl
