#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rksp/common.hpp"
#include "rksp/whitened_dmd.hpp"

namespace rksp {

/// Bin edges for the modulus partition. Near-unit is the closed interval
/// [1 - eps_n, 1 + eps_u]; expansive is strictly above it; contractive is
/// strictly below 1 - delta_c; everything else is mid.
struct MassThresholds {
    double eps_u = 0.05;
    double eps_n = 0.10;
    double delta_c = 0.20;

    void validate() const;
};

struct SpectralMasses {
    double m_gt1 = 0.0;
    double m_near1 = 0.0;
    double m_lt1 = 0.0;
    double m_mid = 0.0;
    std::size_t count_gt1 = 0;
    std::size_t count_near1 = 0;
    std::size_t count_lt1 = 0;
    std::size_t count_mid = 0;
    std::size_t mode_count = 0;
};

SpectralMasses spectral_masses(const ComplexVector& eigenvalues, const MassThresholds& thresholds = {});

struct NonlinearityResult {
    double eta = 0.0;
    bool degenerate_update = false;
};

/// ||Y~ - A X~||_F / (||Y~ - X~||_F + eps_nl). Randomized operators are
/// evaluated in their projected coordinates. degenerate_update is set when
/// ||Y~ - X~||_F < 1e-6 ||X~||_F.
NonlinearityResult nonlinearity_ratio(const WhitenedPair& pair, const DmdOperator& op, double eps_nl = 1e-8);

struct ModeReliability {
    Vector residuals;
    std::vector<bool> unreliable;
    double tau = 0.1;
    double eps_r = 1e-8;

    double reliable_fraction() const;
};

/// Per-mode residual r_j = ||u_j^*(Y~ - lambda_j X~)|| / (||u_j^* X~|| + eps_r);
/// modes with r_j > tau are flagged. Throws DefectiveEigenbasis when the
/// operator has no left eigenvectors.
ModeReliability resdmd_filter(const WhitenedPair& pair, const DmdOperator& op, double tau = 0.1,
                              double eps_r = 1e-8);

struct KreissGrid {
    int radii = 64;
    int angles = 128;
    int refine_rounds = 3;
    double min_excess = 1e-4;  ///< smallest |z| - 1 probed
    /// Largest |z| - 1 probed is max(2 rho(A), max_excess_floor).
    double max_excess_floor = 1.0;

    std::string describe() const;
};

struct KreissEstimate {
    double value = 1.0;
    Complex argmax{0.0, 0.0};
    bool at_infinity = true;  ///< the |z| -> infinity limit (value 1) was the best probe
    std::string grid_spec;
};

/// (|z| - 1) / sigma_min(zI - A) for |z| > 1, evaluated through a Schur form.
class ResolventProbe {
public:
    explicit ResolventProbe(const Matrix& a);
    double kreiss_ratio(Complex z) const;
    double resolvent_norm(Complex z) const;
    Eigen::Index dim() const { return schur_t_.rows(); }

private:
    ComplexMatrix schur_t_;
};

/// Lower bound on sup_{|z|>1} (|z|-1) ||(zI - A)^{-1}||_2 from a log-spaced
/// radius x uniform angle grid, coordinate-descent refinement of the best
/// probes, and the |z| -> infinity limit (which equals 1). Refinement runs
/// the configured rounds, then keeps halving its steps down to 1e-9.
/// Returns +inf when rho(A) > 1 + 1e-8, since the resolvent then has a pole
/// outside the unit disc.
KreissEstimate kreiss_constant(const Matrix& a, const KreissGrid& grid = {});

struct KreissInequalityReport {
    double kreiss = 0.0;
    double sup_power_norm = 0.0;
    double upper = 0.0;  ///< e * d * K
    std::size_t argmax_power = 0;
    bool holds = false;
};

/// Evaluates K(A) <= sup_{0<=n<=n_max} ||A^n||_2 <= e d K(A) with slack
/// 5e-2 * sup. Throws PowerOverflow when ||A^n|| exceeds 1e12.
KreissInequalityReport check_kreiss_inequality(const Matrix& a, std::size_t n_max, const KreissGrid& grid = {});

struct BauerFikeReport {
    bool holds = true;
    double kappa = 1.0;
    double worst_ratio = 0.0;  ///< max over trials of distance / (kappa ||E||), 0 when ||E|| = 0
    std::size_t trials = 0;
};

/// Checks min_k |mu - lambda_k| <= kappa(V) ||E||_2 + 1e-10 for every
/// eigenvalue mu of A + E, for the given E and for `trials` random
/// perturbations rescaled to ||E||_2. Throws DefectiveEigenbasis.
BauerFikeReport bauer_fike_check(const Matrix& a, const Matrix& e, std::size_t trials, std::uint64_t seed = 0);

struct EnergyReport {
    double mc_mean = 0.0;
    double std_error = 0.0;
    double frob_over_d = 0.0;        ///< ||A||_F^2 / d, the exact expectation
    double eig_energy = 0.0;         ///< (1/d) sum |lambda_j|^2
    double m_near1 = 0.0;
    double m_near1_lower = 0.0;      ///< (1 - eps_n)^2 M_near1
    double upper = 0.0;              ///< (1 + eps_u)^2
    double kappa = 1.0;
    bool normal = false;
    bool identity_holds = false;     ///< |mc - ||A||_F^2/d| <= 5 stderr
    std::optional<bool> normal_sandwich_holds;
    std::optional<bool> kappa_sandwich_holds;
};

/// Monte-Carlo E||Ax||^2 over x uniform on the unit sphere (normalized
/// Gaussians), split into fixed seed-derived chunks summed in order.
EnergyReport energy_preservation_check(const Matrix& a, std::size_t samples, std::uint64_t seed,
                                       const MassThresholds& thresholds = {});

struct DepthEnergyReport {
    double mc_ratio = 0.0;        ///< E||h_L||^2 / E||h_0||^2
    double predicted_ratio = 0.0; ///< prod_l q_l
    std::vector<double> q;
    double relative_error = 0.0;
};

/// Propagates isotropic inputs through h_{l+1} = A_l h_l. Before each layer
/// the state direction is redrawn uniformly on the sphere (norm kept), which
/// realizes the isotropic second-moment assumption exactly.
DepthEnergyReport depth_energy_check(const std::vector<Matrix>& layers, std::size_t samples, std::uint64_t seed);

}  // namespace rksp
