#pragma once

#include <cstdint>
#include <limits>
#include <optional>

#include "rksp/common.hpp"

namespace rksp {

/// ZCA-whitened snapshot pair. Both X and Y are centered by their own means
/// and mapped by the single X-derived whitener W = (Sigma_X + eps I)^{-1/2}.
struct WhitenedPair {
    Matrix x;          ///< d x N
    Matrix y;          ///< d x N
    Matrix whitener;   ///< d x d, symmetric positive definite
    Vector x_mean;
    Vector y_mean;
    double epsilon = 0.0;
    double update_norm = 0.0;  ///< ||Y~ - X~||_F
};

WhitenedPair whiten(const Matrix& x, const Matrix& y, double epsilon);

enum class DmdMode { Full, Randomized };

struct DmdOperator {
    Matrix a_hat;               ///< d x d (full) or r x r (randomized, in basis coordinates)
    ComplexVector eigenvalues;  ///< sorted by |lambda| desc, then Re desc, then Im desc
    ComplexMatrix right;        ///< unit-norm right eigenvectors, columns match eigenvalues
    ComplexMatrix left;         ///< rows are u_j^* with u_j^* A = lambda_j u_j^*; empty if defective
    double kappa = 1.0;         ///< sigma_max(V)/sigma_min(V); +inf when defective
    double spectral_radius = 0.0;
    bool defective = false;
    DmdMode mode = DmdMode::Full;
    Eigen::Index rank = 0;      ///< operator dimension (d or r)
    Matrix basis;               ///< d x r orthonormal projection basis in randomized mode; empty otherwise
};

struct DmdOptions {
    double pinv_rtol = 1e-10;
    double kappa_cutoff = 1e-13;  ///< sigma_min < cutoff * sigma_max marks V as singular
};

/// A_hat = Y~ X~^+ with an SVD-truncated pseudoinverse, then eigendecomposition.
DmdOperator dmd_fit(const WhitenedPair& pair, const DmdOptions& options = {});

/// Rank-r projected DMD. The range finder sketches the whitened outputs Y~
/// (X~ is isotropic after whitening, so its range carries no ordering):
/// Gaussian sketch of width r+8, two power iterations with QR
/// re-orthonormalization, then the top-r left singular vectors Q. The
/// operator is B = Q^T Y~ (Q^T X~)^+, of size r x r.
DmdOperator randomized_dmd(const WhitenedPair& pair, Eigen::Index rank, std::uint64_t seed,
                           const DmdOptions& options = {});

/// Orthonormal d x r basis used by randomized_dmd for the given sketch seed.
Matrix randomized_range(const Matrix& data, Eigen::Index rank, std::uint64_t seed);

/// Eigendecomposition of a real square matrix into a DmdOperator (a_hat = a).
/// Eigenvalue order, eigenvector normalization and kappa follow dmd_fit.
DmdOperator decompose(const Matrix& a, const DmdOptions& options = {});

/// Moore-Penrose pseudoinverse via SVD, dropping sigma < rtol * sigma_max.
Matrix pseudoinverse(const Matrix& m, double rtol = 1e-10);

/// Sorts eigenvalues (and matching columns) into the canonical order.
void sort_spectrum(ComplexVector& values, ComplexMatrix& vectors);

/// sigma_max / sigma_min of v, or +inf when sigma_min < cutoff * sigma_max.
double condition_number(const ComplexMatrix& v, double cutoff = 1e-13);

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

}  // namespace rksp
