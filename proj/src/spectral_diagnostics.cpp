#include "rksp/spectral_diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rksp/parallel.hpp"
#include "rksp/random.hpp"

namespace rksp {

void MassThresholds::validate() const {
    if (!(eps_u > 0.0) || !(eps_n > 0.0) || !(delta_c > 0.0))
        throw Error(ErrorCode::InvalidArgument, "mass thresholds must be positive");
    if (delta_c < eps_n)
        throw Error(ErrorCode::InvalidArgument, "delta_c must be >= eps_n for disjoint bins");
}

SpectralMasses spectral_masses(const ComplexVector& eigenvalues, const MassThresholds& thresholds) {
    thresholds.validate();
    if (eigenvalues.size() == 0) throw Error(ErrorCode::EmptySpectrum, "no eigenvalues to bin");
    SpectralMasses out;
    const double upper = 1.0 + thresholds.eps_u;
    const double near_lower = 1.0 - thresholds.eps_n;
    const double contract = 1.0 - thresholds.delta_c;
    for (Eigen::Index j = 0; j < eigenvalues.size(); ++j) {
        const double m = std::abs(eigenvalues(j));
        if (m > upper)
            ++out.count_gt1;
        else if (m >= near_lower)
            ++out.count_near1;
        else if (m < contract)
            ++out.count_lt1;
        else
            ++out.count_mid;
    }
    out.mode_count = static_cast<std::size_t>(eigenvalues.size());
    const double m = static_cast<double>(out.mode_count);
    out.m_gt1 = static_cast<double>(out.count_gt1) / m;
    out.m_near1 = static_cast<double>(out.count_near1) / m;
    out.m_lt1 = static_cast<double>(out.count_lt1) / m;
    out.m_mid = static_cast<double>(out.count_mid) / m;
    return out;
}

namespace {

// Projected coordinates for randomized operators, identity view otherwise.
struct Coordinates {
    Matrix x, y;
};

Coordinates operator_coordinates(const WhitenedPair& pair, const DmdOperator& op) {
    if (op.basis.size() == 0) return {pair.x, pair.y};
    return {op.basis.transpose() * pair.x, op.basis.transpose() * pair.y};
}

}  // namespace

NonlinearityResult nonlinearity_ratio(const WhitenedPair& pair, const DmdOperator& op, double eps_nl) {
    const Coordinates c = operator_coordinates(pair, op);
    NonlinearityResult out;
    const double fit_error = (c.y - op.a_hat * c.x).norm();
    const double update = (c.y - c.x).norm();
    out.eta = fit_error / (update + eps_nl);
    out.degenerate_update = pair.update_norm < 1e-6 * pair.x.norm();
    return out;
}

double ModeReliability::reliable_fraction() const {
    if (unreliable.empty()) return 1.0;
    const auto bad = std::count(unreliable.begin(), unreliable.end(), true);
    return static_cast<double>(unreliable.size() - static_cast<std::size_t>(bad)) /
           static_cast<double>(unreliable.size());
}

ModeReliability resdmd_filter(const WhitenedPair& pair, const DmdOperator& op, double tau, double eps_r) {
    if (op.defective || op.left.size() == 0)
        throw Error(ErrorCode::DefectiveEigenbasis, "left eigenvectors unavailable");
    const Coordinates c = operator_coordinates(pair, op);
    const ComplexMatrix ux = op.left * c.x.cast<Complex>();
    const ComplexMatrix uy = op.left * c.y.cast<Complex>();
    ModeReliability out;
    out.tau = tau;
    out.eps_r = eps_r;
    const Eigen::Index m = op.eigenvalues.size();
    out.residuals.resize(m);
    out.unreliable.resize(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
        const double num = (uy.row(j) - op.eigenvalues(j) * ux.row(j)).norm();
        const double den = ux.row(j).norm() + eps_r;
        out.residuals(j) = num / den;
        out.unreliable[static_cast<std::size_t>(j)] = out.residuals(j) > tau;
    }
    return out;
}

std::string KreissGrid::describe() const {
    std::ostringstream os;
    os << "log-spaced |z|-1 in [" << min_excess << ", max(2*rho, " << max_excess_floor << ")] x " << radii
       << " radii, " << angles << " angles, " << refine_rounds << " refinement rounds, plus |z|->inf";
    return os.str();
}

ResolventProbe::ResolventProbe(const Matrix& a) {
    if (a.rows() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "Kreiss constant needs a square matrix");
    Eigen::ComplexSchur<ComplexMatrix> schur(a.cast<Complex>(), false);
    schur_t_ = schur.matrixT();
}

double ResolventProbe::resolvent_norm(Complex z) const {
    const Eigen::Index n = schur_t_.rows();
    ComplexMatrix m = -schur_t_;
    m.diagonal().array() += z;
    if (n <= 12) {
        Eigen::JacobiSVD<ComplexMatrix> svd(m);
        const double smin = svd.singularValues()(n - 1);
        return smin > 0.0 ? 1.0 / smin : kInfinity;
    }
    // Inverse iteration on (M^* M)^{-1} with triangular solves; the Rayleigh
    // estimate approaches ||M^{-1}|| from below.
    const auto upper = m.triangularView<Eigen::Upper>();
    ComplexVector v = ComplexVector::Constant(n, Complex(1.0 / std::sqrt(static_cast<double>(n)), 0.0));
    for (Eigen::Index i = 0; i < n; ++i) v(i) *= Complex(1.0, 0.1 * static_cast<double>(i % 7));
    v.normalize();
    double estimate = 0.0;
    for (int it = 0; it < 60; ++it) {
        ComplexVector w = upper.solve(v);
        const double gain = w.norm();
        if (!std::isfinite(gain)) return kInfinity;
        const ComplexVector u = upper.adjoint().solve(w);
        const double norm_u = u.norm();
        if (norm_u == 0.0 || !std::isfinite(norm_u)) return kInfinity;
        v = u / norm_u;
        const bool done = std::abs(gain - estimate) <= 1e-12 * gain;
        estimate = std::max(estimate, gain);
        if (done) break;
    }
    return estimate;
}

double ResolventProbe::kreiss_ratio(Complex z) const {
    return (std::abs(z) - 1.0) * resolvent_norm(z);
}

KreissEstimate kreiss_constant(const Matrix& a, const KreissGrid& grid) {
    if (grid.radii < 1 || grid.angles < 1) throw Error(ErrorCode::InvalidArgument, "empty Kreiss grid");
    const ResolventProbe probe(a);
    double rho = 0.0;
    if (a.size() > 0) {
        Eigen::ComplexSchur<ComplexMatrix> schur(a.cast<Complex>(), false);
        rho = schur.matrixT().diagonal().cwiseAbs().maxCoeff();
    }
    KreissEstimate best;
    best.grid_spec = grid.describe();
    // An eigenvalue outside the unit circle is a pole of the resolvent in |z| > 1.
    if (rho > 1.0 + 1e-8) {
        best.value = kInfinity;
        best.at_infinity = false;
        return best;
    }
    const double lo = std::log(grid.min_excess);
    const double hi = std::log(std::max(2.0 * rho, grid.max_excess_floor));
    const double dlog = grid.radii > 1 ? (hi - lo) / (grid.radii - 1) : 0.0;
    const double dtheta = 2.0 * std::numbers::pi / grid.angles;

    auto point = [](double log_excess, double theta) {
        return std::polar(1.0 + std::exp(log_excess), theta);
    };

    best.value = 1.0;  // limit as |z| -> infinity
    best.at_infinity = true;

    struct Probe {
        double value, log_excess, theta;
    };
    std::vector<Probe> probes;
    probes.reserve(static_cast<std::size_t>(grid.radii) * grid.angles);
    for (int i = 0; i < grid.radii; ++i) {
        const double le = lo + dlog * i;
        for (int k = 0; k < grid.angles; ++k) {
            const double th = dtheta * k;
            probes.push_back({probe.kreiss_ratio(point(le, th)), le, th});
        }
    }
    std::partial_sort(probes.begin(), probes.begin() + std::min<std::size_t>(3, probes.size()), probes.end(),
                      [](const Probe& p, const Probe& q) { return p.value > q.value; });

    auto consider = [&](const Probe& p) {
        if (p.value > best.value) {
            best.value = p.value;
            best.argmax = point(p.log_excess, p.theta);
            best.at_infinity = false;
        }
    };

    const std::size_t starts = std::min<std::size_t>(3, probes.size());
    for (std::size_t s = 0; s < starts; ++s) {
        Probe cur = probes[s];
        consider(cur);
        double h_log = std::max(dlog, 1e-3);
        double h_theta = dtheta;
        // The fixed rounds are followed by step halving down to 1e-9, so the
        // estimate settles on the local maximum instead of the last step size.
        for (int round = 0; round < grid.refine_rounds || std::max(h_log, h_theta) > 1e-9; ++round) {
            for (int coord = 0; coord < 2; ++coord) {
                Probe local = cur;
                for (int k = 0; k <= 6; ++k) {
                    const double scale = std::ldexp(1.0, -k);
                    for (double sign : {-1.0, 1.0}) {
                        Probe cand = cur;
                        if (coord == 0) {
                            cand.log_excess = std::max(std::log(1e-12), cur.log_excess + sign * scale * h_log);
                        } else {
                            cand.theta = cur.theta + sign * scale * h_theta;
                        }
                        cand.value = probe.kreiss_ratio(point(cand.log_excess, cand.theta));
                        if (std::isfinite(cand.value) && cand.value > local.value) local = cand;
                    }
                }
                cur = local;
                consider(cur);
            }
            h_log *= 0.5;
            h_theta *= 0.5;
        }
    }
    return best;
}

KreissInequalityReport check_kreiss_inequality(const Matrix& a, std::size_t n_max, const KreissGrid& grid) {
    KreissInequalityReport out;
    const Eigen::Index d = a.rows();
    Matrix power = Matrix::Identity(d, d);
    out.sup_power_norm = 1.0;
    for (std::size_t n = 1; n <= n_max; ++n) {
        power = power * a;
        const double norm = Eigen::JacobiSVD<Matrix>(power).singularValues()(0);
        if (!(norm <= 1e12))
            throw Error(ErrorCode::PowerOverflow,
                        "||A^" + std::to_string(n) + "|| exceeds 1e12; A is not power-bounded");
        if (norm > out.sup_power_norm) {
            out.sup_power_norm = norm;
            out.argmax_power = n;
        }
    }
    out.kreiss = kreiss_constant(a, grid).value;
    out.upper = std::numbers::e * static_cast<double>(d) * out.kreiss;
    const double tol = 5e-2 * out.sup_power_norm;
    out.holds = out.kreiss - tol <= out.sup_power_norm && out.sup_power_norm <= out.upper + tol;
    return out;
}

BauerFikeReport bauer_fike_check(const Matrix& a, const Matrix& e, std::size_t trials, std::uint64_t seed) {
    const DmdOperator op = decompose(a);
    if (op.defective) throw Error(ErrorCode::DefectiveEigenbasis, "A is not diagonalizable to working precision");
    BauerFikeReport out;
    out.kappa = op.kappa;

    auto check_one = [&](const Matrix& pert) {
        const double delta = pert.size() ? Eigen::JacobiSVD<Matrix>(pert).singularValues()(0) : 0.0;
        const ComplexVector mu = Eigen::EigenSolver<Matrix>(a + pert, false).eigenvalues();
        const double bound = op.kappa * delta + 1e-10;
        for (Eigen::Index i = 0; i < mu.size(); ++i) {
            const double dist = (op.eigenvalues.array() - mu(i)).abs().minCoeff();
            if (dist > bound) out.holds = false;
            if (delta > 0.0) out.worst_ratio = std::max(out.worst_ratio, dist / (op.kappa * delta));
        }
        ++out.trials;
    };

    check_one(e);
    const double target = e.size() ? Eigen::JacobiSVD<Matrix>(e).singularValues()(0) : 0.0;
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        Matrix pert = rng.gaussian(a.rows(), a.cols());
        const double s = Eigen::JacobiSVD<Matrix>(pert).singularValues()(0);
        pert *= s > 0.0 ? target / s : 0.0;
        check_one(pert);
    }
    return out;
}

namespace {

constexpr std::size_t kMonteCarloChunks = 16;

bool is_normal(const Matrix& a) {
    const double scale = std::max(1.0, a.squaredNorm());
    return (a.transpose() * a - a * a.transpose()).norm() <= 1e-10 * scale;
}

}  // namespace

EnergyReport energy_preservation_check(const Matrix& a, std::size_t samples, std::uint64_t seed,
                                       const MassThresholds& thresholds) {
    if (samples < 2) throw Error(ErrorCode::InvalidArgument, "need at least two samples");
    const Eigen::Index d = a.rows();
    std::vector<double> sums(kMonteCarloChunks, 0.0), sq_sums(kMonteCarloChunks, 0.0);
    parallel_for(kMonteCarloChunks, [&](std::size_t c) {
        const std::size_t begin = samples * c / kMonteCarloChunks;
        const std::size_t end = samples * (c + 1) / kMonteCarloChunks;
        Rng rng = Rng::substream(seed, c);
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double v = (a * rng.unit_sphere(d)).squaredNorm();
            s += v;
            s2 += v * v;
        }
        sums[c] = s;
        sq_sums[c] = s2;
    });
    double total = 0.0, total_sq = 0.0;
    for (std::size_t c = 0; c < kMonteCarloChunks; ++c) {
        total += sums[c];
        total_sq += sq_sums[c];
    }
    const double n = static_cast<double>(samples);
    EnergyReport out;
    out.mc_mean = total / n;
    const double var = std::max(0.0, (total_sq - n * out.mc_mean * out.mc_mean) / (n - 1.0));
    out.std_error = std::sqrt(var / n);
    out.frob_over_d = a.squaredNorm() / static_cast<double>(d);

    const DmdOperator op = decompose(a);
    out.eig_energy = op.eigenvalues.cwiseAbs2().sum() / static_cast<double>(d);
    out.kappa = op.kappa;
    const SpectralMasses masses = spectral_masses(op.eigenvalues, thresholds);
    out.m_near1 = masses.m_near1;
    out.m_near1_lower = std::pow(1.0 - thresholds.eps_n, 2) * masses.m_near1;
    out.upper = std::pow(1.0 + thresholds.eps_u, 2);
    out.normal = is_normal(a);

    const double slack = 5.0 * out.std_error + 1e-12 * std::max(1.0, out.frob_over_d);
    out.identity_holds = std::abs(out.mc_mean - out.frob_over_d) <= slack;
    const bool bounded = op.spectral_radius <= 1.0 + thresholds.eps_u;
    if (out.normal && bounded)
        out.normal_sandwich_holds = out.m_near1_lower <= out.mc_mean + slack && out.mc_mean <= out.upper + slack;
    if (!op.defective && bounded) {
        const double k2 = op.kappa * op.kappa;
        out.kappa_sandwich_holds =
            out.m_near1_lower / k2 <= out.mc_mean + slack && out.mc_mean <= k2 * out.upper + slack;
    }
    return out;
}

DepthEnergyReport depth_energy_check(const std::vector<Matrix>& layers, std::size_t samples, std::uint64_t seed) {
    if (layers.empty()) throw Error(ErrorCode::ProfileRequiresLayers, "no layers to propagate through");
    const Eigen::Index d = layers.front().rows();
    DepthEnergyReport out;
    out.predicted_ratio = 1.0;
    for (const Matrix& a : layers) {
        const ComplexVector ev = Eigen::EigenSolver<Matrix>(a, false).eigenvalues();
        out.q.push_back(ev.cwiseAbs2().sum() / static_cast<double>(d));
        out.predicted_ratio *= out.q.back();
    }
    std::vector<double> sums(kMonteCarloChunks, 0.0);
    parallel_for(kMonteCarloChunks, [&](std::size_t c) {
        const std::size_t begin = samples * c / kMonteCarloChunks;
        const std::size_t end = samples * (c + 1) / kMonteCarloChunks;
        Rng rng = Rng::substream(seed, c);
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            double norm = 1.0;  // h_0 on the unit sphere
            for (const Matrix& a : layers) norm = (a * (norm * rng.unit_sphere(d))).norm();
            s += norm * norm;
        }
        sums[c] = s;
    });
    double total = 0.0;
    for (double s : sums) total += s;
    out.mc_ratio = total / static_cast<double>(samples);
    out.relative_error = std::abs(out.mc_ratio - out.predicted_ratio) / out.predicted_ratio;
    return out;
}

}  // namespace rksp
