#pragma once

#include <cstdint>
#include <filesystem>

#include "sscl/numkit.hpp"

namespace sscl {

/// Simplex equiangular tight frame: K unit columns in R^d with pairwise inner
/// product -1/(K-1). Column i is the fixed feature-space anchor of class i.
struct EtfFrame {
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    Matrix columns;     // dim x num_classes
    Matrix prototypes;  // num_classes x dim, row i == column i
    std::uint64_t seed = 0;
};

struct EtfReport {
    double max_norm_deviation = 0.0;
    double max_gram_deviation = 0.0;
    bool norms_ok = false;
    bool gram_ok = false;
    bool ok() const { return norms_ok && gram_ok; }
};

/// E = sqrt(K/(K-1)) U (I_K - 1 1ᵀ / K) with U a seeded random orthonormal d x K basis.
EtfFrame build_etf(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

EtfReport verify_etf(const EtfFrame& frame, double tol = 1e-6);

/// Re-derive `prototypes` after editing `columns` directly.
void sync_prototypes(EtfFrame& frame);

/// Headerless CSV, d rows x K columns.
void write_etf_csv(const EtfFrame& frame, const std::filesystem::path& path);

}  // namespace sscl
