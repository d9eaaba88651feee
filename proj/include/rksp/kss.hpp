#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "rksp/common.hpp"
#include "rksp/whitened_dmd.hpp"

namespace rksp {

/// Spectral-shaping regularizer settings.
struct KssConfig {
    double alpha = 0.15;         ///< weight in L_task + alpha * mean_{l in S} L_KSS^l
    double temperature = 20.0;   ///< T
    double tau_u = 1.05;
    double tau_l = 0.90;
    double gamma = 0.4;          ///< soft near-unit mass target
    double beta = 1.0;           ///< weight of the near-unit target term
    Eigen::Index rank = 32;
    int apply_every = 10;        ///< steps between applications, in [10, 20]
    double layer_fraction = 0.5;

    void validate() const;
};

struct KssEvaluation {
    double loss = 0.0;
    double unstable_term = 0.0;
    double near_unit_term = 0.0;
    double m_soft = 0.0;
    Vector per_mode_contributions;  ///< unstable penalty of each mode
    Vector grad_moduli;             ///< dL/d|lambda_j|
    Matrix grad_wrt_operator;       ///< dL/dB; empty from kss_loss
    ComplexVector eigenvalues;
    std::size_t zero_modulus_modes = 0;  ///< modes with |lambda| < 1e-12 (gradient zeroed)
    bool used_finite_differences = false;
    Matrix operator_matrix;  ///< B (r x r) when produced by kss_gradient
    Matrix basis;            ///< Q (d x r) when produced by kss_gradient
};

double sigmoid(double x);
/// ln(1 + e^x) without overflow.
double softplus(double x);

/// Loss terms and dL/d|lambda| for a set of eigenvalue moduli.
KssEvaluation kss_loss(const Vector& moduli, const KssConfig& config);

/// Loss and dL/dB for a real square operator B. Simple eigenvalues use the
/// first-order sensitivity d lambda = w^T dB v / (w^T v) chained through
/// d|lambda| = Re(conj(lambda) d lambda) / |lambda|; if any eigenvalue gap is
/// below 1e-6 rho the whole gradient falls back to central differences
/// (step 1e-6).
KssEvaluation kss_operator_gradient(const Matrix& b, const KssConfig& config);

/// Central-difference dL/dB (test oracle and degenerate-gap fallback).
Matrix kss_finite_difference_gradient(const Matrix& b, const KssConfig& config, double step = 1e-6);

/// Rank-r randomized DMD of the pair followed by kss_operator_gradient. The
/// sketch and whitener are treated as constants.
KssEvaluation kss_gradient(const WhitenedPair& pair, const KssConfig& config, std::uint64_t seed);

/// ceil(fraction * L) layer indices for an update step. Steps are grouped
/// into epochs of ceil(1 / fraction) consecutive steps; each epoch walks one
/// seeded permutation of the layers, so every window of 2 / fraction
/// consecutive steps covers every layer.
std::set<std::size_t> sample_layers(std::size_t layers, double fraction, std::uint64_t step, std::uint64_t seed);

/// task_loss + alpha * mean(kss_losses). Throws EmptyLayerSample.
double total_objective(double task_loss, const std::vector<double>& kss_losses, double alpha);

}  // namespace rksp
