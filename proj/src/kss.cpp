#include "rksp/kss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rksp/random.hpp"

namespace rksp {

void KssConfig::validate() const {
    if (!(alpha >= 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
    if (!(tau_l < tau_u)) throw Error(ErrorCode::InvalidArgument, "tau_l must be below tau_u");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be in [0, 1]");
    if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be >= 0");
    if (rank <= 0) throw Error(ErrorCode::InvalidArgument, "rank must be positive");
    if (apply_every < 1) throw Error(ErrorCode::InvalidArgument, "apply_every must be >= 1");
    if (!(layer_fraction > 0.0 && layer_fraction <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "layer_fraction must be in (0, 1]");
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

KssEvaluation kss_loss(const Vector& moduli, const KssConfig& config) {
    config.validate();
    const Eigen::Index r = moduli.size();
    if (r == 0) throw Error(ErrorCode::EmptySpectrum, "KSS needs at least one eigenvalue");
    const double t = config.temperature;
    KssEvaluation out;
    out.per_mode_contributions.resize(r);
    out.grad_moduli.resize(r);
    Vector soft_grad(r);
    for (Eigen::Index j = 0; j < r; ++j) {
        const double x = moduli(j);
        if (x < 0.0) throw Error(ErrorCode::InvalidArgument, "moduli must be nonnegative");
        const double over = x - config.tau_u;
        const double gate = sigmoid(t * over);
        const double sp = softplus(over);
        out.per_mode_contributions(j) = gate * sp * sp;
        out.unstable_term += out.per_mode_contributions(j);
        // d/dx [sigma(T u) sp(u)^2] = T sigma(1-sigma) sp^2 + sigma * 2 sp * sigmoid(u)
        out.grad_moduli(j) = t * gate * (1.0 - gate) * sp * sp + gate * 2.0 * sp * sigmoid(over);

        const double lower = sigmoid(t * (x - config.tau_l));
        const double upper = sigmoid(t * (config.tau_u - x));
        out.m_soft += lower * upper;
        soft_grad(j) = t * lower * (1.0 - lower) * upper - t * lower * upper * (1.0 - upper);
    }
    out.m_soft /= static_cast<double>(r);
    const double gap = out.m_soft - config.gamma;
    out.near_unit_term = config.beta * gap * gap;
    out.loss = out.unstable_term + out.near_unit_term;
    out.grad_moduli += (2.0 * config.beta * gap / static_cast<double>(r)) * soft_grad;
    return out;
}

namespace {

double loss_of(const Matrix& b, const KssConfig& config) {
    const ComplexVector ev = Eigen::EigenSolver<Matrix>(b, false).eigenvalues();
    return kss_loss(ev.cwiseAbs(), config).loss;
}

double min_gap(const ComplexVector& ev) {
    double gap = kInfinity;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        for (Eigen::Index j = i + 1; j < ev.size(); ++j) gap = std::min(gap, std::abs(ev(i) - ev(j)));
    return gap;
}

}  // namespace

Matrix kss_finite_difference_gradient(const Matrix& b, const KssConfig& config, double step) {
    Matrix grad(b.rows(), b.cols());
    Matrix probe = b;
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
        for (Eigen::Index i = 0; i < b.rows(); ++i) {
            const double saved = probe(i, j);
            probe(i, j) = saved + step;
            const double plus = loss_of(probe, config);
            probe(i, j) = saved - step;
            const double minus = loss_of(probe, config);
            probe(i, j) = saved;
            grad(i, j) = (plus - minus) / (2.0 * step);
        }
    }
    return grad;
}

KssEvaluation kss_operator_gradient(const Matrix& b, const KssConfig& config) {
    if (b.rows() != b.cols() || b.rows() == 0) throw Error(ErrorCode::ShapeMismatch, "operator must be square");
    const DmdOperator op = decompose(b);
    const Vector moduli = op.eigenvalues.cwiseAbs();
    KssEvaluation out = kss_loss(moduli, config);
    out.eigenvalues = op.eigenvalues;
    out.operator_matrix = b;

    const double rho = op.spectral_radius;
    const bool clustered = op.eigenvalues.size() > 1 && min_gap(op.eigenvalues) < 1e-6 * rho;
    if (clustered || op.defective) {
        out.grad_wrt_operator = kss_finite_difference_gradient(b, config);
        out.used_finite_differences = true;
        for (Eigen::Index j = 0; j < moduli.size(); ++j)
            if (moduli(j) < 1e-12) ++out.zero_modulus_modes;
        return out;
    }

    // op.left rows are w_j with w_j B = lambda_j w_j and w_j v_j = 1.
    ComplexMatrix grad = ComplexMatrix::Zero(b.rows(), b.cols());
    for (Eigen::Index j = 0; j < moduli.size(); ++j) {
        if (moduli(j) < 1e-12) {
            ++out.zero_modulus_modes;
            continue;
        }
        const Complex lambda = op.eigenvalues(j);
        const Complex pairing = (op.left.row(j) * op.right.col(j))(0, 0);
        const Complex coeff = out.grad_moduli(j) * std::conj(lambda) / (moduli(j) * pairing);
        grad += coeff * op.left.row(j).transpose() * op.right.col(j).transpose();
    }
    out.grad_wrt_operator = grad.real();
    return out;
}

KssEvaluation kss_gradient(const WhitenedPair& pair, const KssConfig& config, std::uint64_t seed) {
    config.validate();
    const Eigen::Index r = std::min(config.rank, std::min(pair.x.rows(), pair.x.cols()));
    const DmdOperator op = randomized_dmd(pair, r, seed);
    KssEvaluation out = kss_operator_gradient(op.a_hat, config);
    out.basis = op.basis;
    return out;
}

std::set<std::size_t> sample_layers(std::size_t layers, double fraction, std::uint64_t step, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "layer fraction must be in (0, 1]");
    std::set<std::size_t> out;
    if (layers == 0) return out;
    const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(layers) - 1e-12));
    const std::size_t k = std::clamp<std::size_t>(wanted, 1, layers);
    const std::size_t per_epoch = (layers + k - 1) / k;
    const std::uint64_t epoch = step / per_epoch;
    const std::size_t slot = static_cast<std::size_t>(step % per_epoch);

    std::vector<std::size_t> perm(layers);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = Rng::substream(seed, epoch);
    for (std::size_t i = layers - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    for (std::size_t i = 0; i < k; ++i) out.insert(perm[(slot * k + i) % layers]);
    return out;
}

double total_objective(double task_loss, const std::vector<double>& kss_losses, double alpha) {
    if (kss_losses.empty()) throw Error(ErrorCode::EmptyLayerSample, "no layers sampled for the regularizer");
    double sum = 0.0;
    for (double l : kss_losses) sum += l;
    return task_loss + alpha * sum / static_cast<double>(kss_losses.size());
}

}  // namespace rksp
