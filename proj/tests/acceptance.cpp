// Acceptance suite: one PASS/FAIL line per criterion A1..A9.
//
// Usage: rksp_acceptance [--only A3,A4] [--expect-fail A4]
// Exit status is 0 when every criterion passes or is listed in --expect-fail.
// A criterion listed there that fails is still printed as FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rksp/kss.hpp"
#include "rksp/profiler.hpp"
#include "rksp/random.hpp"
#include "rksp/report.hpp"
#include "rksp/risk_eval.hpp"
#include "rksp/snapshot_store.hpp"
#include "rksp/spectral_diagnostics.hpp"
#include "rksp/synthetic_lab.hpp"
#include "rksp/whitened_dmd.hpp"

using namespace rksp;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    std::vector<std::string> notes;  ///< extra lines printed under the verdict
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string g(double v) { return fmt("%.3g", v); }

Matrix random_normal_matrix(Eigen::Index d, Rng& rng, double max_modulus) {
    Matrix block = Matrix::Zero(d, d);
    Eigen::Index i = 0;
    while (i < d) {
        const double r = max_modulus * rng.uniform();
        if (i + 1 < d && rng.uniform() < 0.5) {
            const double t = std::numbers::pi * rng.uniform();
            block(i, i) = block(i + 1, i + 1) = r * std::cos(t);
            block(i, i + 1) = -r * std::sin(t);
            block(i + 1, i) = r * std::sin(t);
            i += 2;
        } else {
            block(i, i) = rng.uniform() < 0.5 ? r : -r;
            ++i;
        }
    }
    const Matrix q = rng.orthogonal(d);
    return q * block * q.transpose();
}

/// Real matrix with prescribed moduli: 2x2 rotation blocks for pairs, then a
/// mildly conditioned similarity.
Matrix with_moduli(const std::vector<double>& moduli, Rng& rng) {
    const Eigen::Index d = static_cast<Eigen::Index>(moduli.size());
    Matrix block = Matrix::Zero(d, d);
    Eigen::Index i = 0;
    while (i < d) {
        if (i + 1 < d && rng.uniform() < 0.3) {
            const double r = moduli[static_cast<std::size_t>(i)];
            const double t = 0.3 + 2.5 * rng.uniform();
            block(i, i) = block(i + 1, i + 1) = r * std::cos(t);
            block(i, i + 1) = -r * std::sin(t);
            block(i + 1, i) = r * std::sin(t);
            i += 2;
        } else {
            block(i, i) = moduli[static_cast<std::size_t>(i)] * (rng.uniform() < 0.5 ? 1.0 : -1.0);
            ++i;
        }
    }
    const Matrix v = Matrix::Identity(d, d) + 0.3 * rng.gaussian(d, d) / std::sqrt(static_cast<double>(d));
    return v * block * v.inverse();
}

std::vector<double> sorted_moduli(const ComplexVector& values) {
    std::vector<double> out;
    for (Eigen::Index j = 0; j < values.size(); ++j) out.push_back(std::abs(values(j)));
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

double max_gap(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// A1
Outcome dmd_recovery() {
    Rng rng(101);
    double worst_truth = 0.0, worst_randomized = 0.0;
    for (int stack = 0; stack < 50; ++stack) {
        const Eigen::Index d = 4 + static_cast<Eigen::Index>(rng.below(29));
        std::vector<Matrix> hs{rng.gaussian(d, 512)};
        std::vector<std::vector<double>> truth;
        for (int l = 0; l < 3; ++l) {
            // Moduli on a grid with spacing >= 0.02 so that pairs stay distinct.
            std::vector<double> moduli;
            for (Eigen::Index j = 0; j < d; ++j) moduli.push_back(0.2 + 1.1 * rng.uniform());
            std::sort(moduli.begin(), moduli.end());
            for (std::size_t j = 1; j < moduli.size(); ++j) moduli[j] = std::max(moduli[j], moduli[j - 1] + 0.02);
            std::shuffle(moduli.begin(), moduli.end(), std::mt19937_64(rng.next()));
            const Matrix m = with_moduli(moduli, rng);
            truth.push_back(sorted_moduli(Eigen::EigenSolver<Matrix>(m, false).eigenvalues()));
            hs.push_back(m * hs.back() + 1e-3 * rng.gaussian(d, 512));
        }
        const SnapshotDataset data = SnapshotDataset::from_stream(hs);
        for (std::size_t l = 0; l < 3; ++l) {
            const WhitenedPair pair = whiten(data.x(l), data.y(l), 1e-5);
            const std::vector<double> full = sorted_moduli(dmd_fit(pair).eigenvalues);
            const std::vector<double> reduced = sorted_moduli(randomized_dmd(pair, d, 7 + l).eigenvalues);
            worst_truth = std::max(worst_truth, max_gap(full, truth[l]));
            worst_randomized = std::max(worst_randomized, max_gap(full, reduced));
        }
    }
    Outcome o;
    o.pass = worst_truth < 1e-2 && worst_randomized < 1e-6;
    o.detail = "50 stacks x 3 layers, d in [4, 32], N = 512: worst modulus error " + g(worst_truth) +
               " (tol 1e-2), randomized r = d vs full " + g(worst_randomized) + " (tol 1e-6)";
    return o;
}

// A2
Outcome theorem_one() {
    Rng rng(202);
    int identity_ok = 0, normal_sandwich = 0, normal_sandwich_ok = 0;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(15));
        const EnergyReport r = energy_preservation_check(random_normal_matrix(d, rng, 1.05), 100000, 1000 + i);
        identity_ok += r.identity_holds ? 1 : 0;
        if (r.normal_sandwich_holds) {
            ++normal_sandwich;
            normal_sandwich_ok += *r.normal_sandwich_holds ? 1 : 0;
        }
    }
    int kappa_cases = 0, kappa_ok = 0;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(15));
        std::vector<double> moduli;
        for (Eigen::Index j = 0; j < d; ++j) moduli.push_back(0.05 + rng.uniform());
        const EnergyReport r = energy_preservation_check(with_moduli(moduli, rng), 100000, 2000 + i);
        if (r.kappa_sandwich_holds) {
            ++kappa_cases;
            kappa_ok += *r.kappa_sandwich_holds ? 1 : 0;
        }
    }
    double worst_depth = 0.0;
    for (int s = 0; s < 10; ++s) {
        std::vector<Matrix> layers;
        const Eigen::Index d = 4 + static_cast<Eigen::Index>(rng.below(13));
        for (int l = 0; l < 5; ++l) layers.push_back(random_normal_matrix(d, rng, 1.2));
        worst_depth = std::max(worst_depth, depth_energy_check(layers, 100000, 3000 + s).relative_error);
    }
    Outcome o;
    o.pass = identity_ok == 100 && normal_sandwich == normal_sandwich_ok && normal_sandwich >= 90 &&
             kappa_cases == kappa_ok && kappa_cases >= 90 && worst_depth < 0.03;
    o.detail = "identity " + std::to_string(identity_ok) + "/100 within 5 stderr, normal sandwich " +
               std::to_string(normal_sandwich_ok) + "/" + std::to_string(normal_sandwich) + ", kappa sandwich " +
               std::to_string(kappa_ok) + "/" + std::to_string(kappa_cases) + ", depth product worst " +
               g(100.0 * worst_depth) + "% (tol 3%)";
    return o;
}

// A3
Outcome divergence_prediction() {
    const DeskLab lab = desk_lab();
    const std::vector<StackSpec> specs{StackSpec::preset(Regime::PrelnLike, 7000),
                                       StackSpec::preset(Regime::NoormLike, 7000)};
    const std::vector<std::uint64_t> seeds{7000, 7001, 7002, 7003, 7004, 7005};
    const CohortRun run = run_cohort(specs, lab.band_lrs(), seeds, std::nullopt, lab.task, lab.train);
    Outcome o;
    std::size_t preln_div = 0, noorm_div = 0;
    double mean_pos = 0.0, mean_neg = 0.0;
    std::size_t pos = 0, neg = 0;
    for (const TrialRecord& r : run.records) {
        (r.regime == Regime::PrelnLike ? preln_div : noorm_div) += r.diverged ? 1 : 0;
        if (r.diverged) {
            mean_pos += r.risk_score_at_init;
            ++pos;
        } else {
            mean_neg += r.risk_score_at_init;
            ++neg;
        }
    }
    if (pos == 0 || neg == 0) {
        o.detail = "single-class cohort (" + std::to_string(pos) + " diverged of 48)";
        return o;
    }
    mean_pos /= static_cast<double>(pos);
    mean_neg /= static_cast<double>(neg);
    const double a = auroc(run.cohort);
    const auto [lo, hi] = bootstrap_ci(run.cohort, 1000, 7);
    o.pass = run.records.size() == 48 && a >= 0.90 && lo > 0.75;
    o.detail = "48 trials at lrs {" + fmt("%.4g", lab.band_lrs()[0]) + ".." + fmt("%.4g", lab.band_lrs()[3]) +
               "}: AUROC " + fmt("%.3f", a) + " (>= 0.90), 95% CI [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) +
               "] (low > 0.75)";
    o.notes.push_back("diverged: preln_like " + std::to_string(preln_div) + "/24, noorm_like " +
                      std::to_string(noorm_div) + "/24; mean risk score diverged " + fmt("%.3f", mean_pos) +
                      " vs converged " + fmt("%.3f", mean_neg));
    return o;
}

// A4
Outcome kss_stabilization() {
    const DeskLab lab = desk_lab();
    const std::vector<StackSpec> specs{StackSpec::preset(Regime::NoormLike, 5000)};
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 5000; s < 5024; ++s) seeds.push_back(s);
    KssConfig kss;
    kss.alpha = 0.15;
    const double lr = lab.noorm_unstable_lr;
    const CohortRun base = run_cohort(specs, {lr}, seeds, std::nullopt, lab.task, lab.train);
    const CohortRun shaped = run_cohort(specs, {lr}, seeds, kss, lab.task, lab.train);

    auto count = [](const CohortRun& r) {
        std::size_t n = 0;
        for (const auto& t : r.records) n += t.diverged ? 1 : 0;
        return n;
    };
    auto mean_delta = [](const CohortRun& r, std::size_t& used) {
        double acc = 0.0;
        used = 0;
        for (const auto& t : r.records)
            if (t.risk_score_final) {
                acc += *t.risk_score_final - t.risk_score_at_init;
                ++used;
            }
        return used ? acc / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    };
    const std::size_t nb = count(base), nk = count(shaped);
    std::size_t used_k = 0, used_b = 0;
    const double dm_k = mean_delta(shaped, used_k);
    const double dm_b = mean_delta(base, used_b);
    const bool halved = nb > 0 && 2 * nk <= nb;
    Outcome o;
    o.pass = halved && dm_k < 0.0;
    o.detail = "24 noorm_like trials at lr " + fmt("%.6g", lr) + ": diverged " + std::to_string(nb) +
               "/24 baseline vs " + std::to_string(nk) + "/24 with alpha = 0.15 (need <= " +
               std::to_string(nb / 2) + "); mean dM_near1 with KSS " + fmt("%.3f", dm_k) + " over " +
               std::to_string(used_k) + " profiled finals (need < 0)";
    const double p = fisher_exact({{{nb, 24 - nb}, {nk, 24 - nk}}});
    std::size_t apps = 0, fails = 0;
    double first_div_b = 0.0, first_div_k = 0.0;
    for (const auto& t : base.records)
        if (t.divergence_step) first_div_b += static_cast<double>(*t.divergence_step);
    for (const auto& t : shaped.records) {
        apps += t.kss_applications;
        fails += t.kss_failures;
        if (t.divergence_step) first_div_k += static_cast<double>(*t.divergence_step);
    }
    o.notes.push_back("Fisher p (baseline vs KSS) " + g(p) + "; baseline mean dM_near1 " + fmt("%.3f", dm_b) +
                      " over " + std::to_string(used_b) + "; KSS applications " + std::to_string(apps) +
                      ", failures " + std::to_string(fails));
    if (nb > 0 && nk > 0)
        o.notes.push_back("mean divergence step: baseline " + fmt("%.1f", first_div_b / static_cast<double>(nb)) +
                          ", KSS " + fmt("%.1f", first_div_k / static_cast<double>(nk)));
    return o;
}

// A5
Outcome kss_gradient_check() {
    Rng rng(505);
    KssConfig c;
    double worst = 0.0;
    int checked = 0, fallback = 0;
    for (int i = 0; i < 50; ++i) {
        const Eigen::Index r = 2 + static_cast<Eigen::Index>(rng.below(7));
        std::vector<double> moduli;
        for (Eigen::Index j = 0; j < r; ++j) moduli.push_back(0.6 + 0.7 * rng.uniform());
        const Matrix b = with_moduli(moduli, rng);
        const KssEvaluation e = kss_operator_gradient(b, c);
        if (e.used_finite_differences) {
            ++fallback;
            continue;
        }
        const Matrix fd = kss_finite_difference_gradient(b, c);
        worst = std::max(worst, (e.grad_wrt_operator - fd).norm() / std::max(fd.norm(), 1e-12));
        ++checked;
    }
    KssConfig unstable_only = c;
    unstable_only.beta = 0.0;
    const double at_tau = kss_loss(Vector::Constant(1, c.tau_u), unstable_only).unstable_term;
    const double closed = 0.5 * std::log(2.0) * std::log(2.0);
    Outcome o;
    o.pass = checked == 50 && worst < 1e-4 && std::abs(at_tau - closed) < 1e-12;
    o.detail = std::to_string(checked) + "/50 random operators (r <= 8) analytic vs central FD, worst relative error " +
               g(worst) + " (tol 1e-4, " + std::to_string(fallback) + " FD fallbacks); penalty at |lambda| = tau_u off by " +
               g(std::abs(at_tau - closed)) + " (tol 1e-12)";
    return o;
}

double dense_kreiss(const Matrix& a, int radii, int angles) {
    const ComplexMatrix ac = a.cast<Complex>();
    const auto n = a.rows();
    double best = 1.0;
    for (int i = 0; i < radii; ++i) {
        const double r = 1.0001 * std::pow(10.0 / 1.0001, static_cast<double>(i) / (radii - 1));
        for (int k = 0; k < angles; ++k) {
            const Complex z = std::polar(r, 2.0 * std::numbers::pi * k / angles);
            const ComplexMatrix m = z * ComplexMatrix::Identity(n, n) - ac;
            const double smin = Eigen::JacobiSVD<ComplexMatrix>(m).singularValues()(n - 1);
            best = std::max(best, (r - 1.0) / smin);
        }
    }
    return best;
}

// A6
Outcome kreiss_bauer_fike() {
    Rng rng(606);
    double worst_normal = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(15));
        worst_normal = std::max(worst_normal, std::abs(kreiss_constant(random_normal_matrix(d, rng, 1.0)).value - 1.0));
    }
    int sandwich_ok = 0;
    double min_ratio = std::numeric_limits<double>::infinity(), max_transient = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(5));
        Matrix a = Matrix::Zero(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            a(r, r) = (0.5 + 0.45 * rng.uniform()) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
            for (Eigen::Index c = r + 1; c < d; ++c) a(r, c) = 2.0 * rng.normal();
        }
        const Matrix q = rng.orthogonal(d);
        a = q * a * q.transpose();
        const KreissInequalityReport rep = check_kreiss_inequality(a, 2000);
        sandwich_ok += rep.holds ? 1 : 0;
        max_transient = std::max(max_transient, rep.sup_power_norm);
        const double oracle = dense_kreiss(a, 300, 240);
        // The refined estimate should not fall below a dense grid by more than 2%.
        min_ratio = std::min(min_ratio, rep.kreiss / oracle);
    }
    int bf_ok = 0;
    std::size_t bf_trials = 0;
    double worst_ratio = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Eigen::Index d = 3 + static_cast<Eigen::Index>(rng.below(6));
        std::vector<double> moduli;
        for (Eigen::Index j = 0; j < d; ++j) moduli.push_back(0.1 + rng.uniform());
        const Matrix a = with_moduli(moduli, rng);
        Matrix e = rng.gaussian(d, d);
        e *= 1e-3 / Eigen::JacobiSVD<Matrix>(e).singularValues()(0);
        const BauerFikeReport r = bauer_fike_check(a, e, 9, 4000 + i);
        bf_ok += r.holds ? 1 : 0;
        bf_trials += r.trials;
        worst_ratio = std::max(worst_ratio, r.worst_ratio);
    }
    Outcome o;
    o.pass = worst_normal <= 5e-2 && sandwich_ok == 20 && min_ratio > 0.98 && bf_ok == 10 && bf_trials == 100;
    o.detail = "normal contractions |K - 1| <= " + g(worst_normal) + " (tol 5e-2); Kreiss sandwich " +
               std::to_string(sandwich_ok) + "/20 (max sup||A^n|| " + g(max_transient) + "), min estimate / dense oracle " +
               fmt("%.4f", min_ratio) + " (need > 0.98); Bauer-Fike " + std::to_string(bf_trials) +
               " perturbations, worst dist/(kappa ||E||) " + g(worst_ratio);
    return o;
}

// A7
Outcome statistics_oracles() {
    Rng rng(707);
    int exact = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng.below(199);
        CohortResult c;
        for (std::size_t k = 0; k < n; ++k)
            c.trials.push_back({std::floor(rng.uniform() * (i % 2 ? 1e6 : 10.0)) / (i % 2 ? 1e6 : 10.0),
                                rng.uniform() < 0.5, "t"});
        c.trials[0].diverged = true;
        c.trials[1].diverged = false;
        double wins = 0.0, pairs = 0.0;
        for (const auto& p : c.trials) {
            if (!p.diverged) continue;
            for (const auto& q : c.trials) {
                if (q.diverged) continue;
                pairs += 1.0;
                wins += p.score > q.score ? 1.0 : (p.score == q.score ? 0.5 : 0.0);
            }
        }
        exact += auroc(c) == wins / pairs ? 1 : 0;
    }
    // Every 2x2 table whose row and column sums are all in [1, 30].
    std::size_t tables = 0;
    double worst_fisher = 0.0;
    std::vector<double> lf(61, 0.0);
    for (int k = 1; k <= 60; ++k) lf[k] = lf[k - 1] + std::log(static_cast<double>(k));
    for (int a = 0; a <= 30; ++a)
        for (int b = 0; a + b <= 30; ++b)
            for (int c = 0; a + c <= 30; ++c)
                for (int d = 0; c + d <= 30 && b + d <= 30; ++d) {
                    const int r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
                    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) continue;
                    const int n = r1 + r2;
                    auto logp = [&](int x) {
                        return lf[r1] + lf[r2] + lf[c1] + lf[c2] - lf[n] - lf[x] - lf[r1 - x] - lf[c1 - x] -
                               lf[r2 - c1 + x];
                    };
                    const double obs = logp(a);
                    double p = 0.0;
                    for (int x = std::max(0, c1 - r2); x <= std::min(r1, c1); ++x)
                        if (logp(x) <= obs + 1e-12 * std::abs(obs) + 1e-12) p += std::exp(logp(x));
                    p = std::min(1.0, p);
                    const ContingencyTable t{{{static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)},
                                              {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(d)}}};
                    worst_fisher = std::max(worst_fisher, std::abs(fisher_exact(t) - p));
                    ++tables;
                }
    CohortResult calibrated;
    for (int i = 0; i < 100000; ++i) {
        const double s = rng.uniform();
        calibrated.trials.push_back({s, rng.uniform() < s, "t"});
    }
    const double e = ece(calibrated).ece;
    Outcome o;
    o.pass = exact == 100 && worst_fisher <= 1e-10 && e < 0.01;
    o.detail = "AUROC exact on " + std::to_string(exact) + "/100 cohorts; Fisher vs enumeration on " +
               std::to_string(tables) + " tables, worst |dp| " + g(worst_fisher) + " (tol 1e-10); ECE " + g(e) +
               " on 1e5 calibrated samples (tol 0.01)";
    return o;
}

// A8
Outcome resdmd_check() {
    Rng rng(808);
    std::size_t linear_flags = 0;
    for (int i = 0; i < 20; ++i) {
        const Eigen::Index d = 4 + static_cast<Eigen::Index>(rng.below(13));
        const Matrix x = rng.gaussian(d, 400);
        std::vector<double> moduli;
        for (Eigen::Index j = 0; j < d; ++j) moduli.push_back(0.2 + rng.uniform());
        const Matrix m = with_moduli(moduli, rng);
        const WhitenedPair p = whiten(x, m * x, 1e-5);
        const ModeReliability r = resdmd_filter(p, dmd_fit(p));
        linear_flags += static_cast<std::size_t>(std::count(r.unreliable.begin(), r.unreliable.end(), true));
    }
    int flagged = 0;
    for (int i = 0; i < 100; ++i) {
        const Matrix x = rng.gaussian(8, 400);
        Vector lambda(8);
        for (Eigen::Index j = 0; j < 8; ++j) lambda(j) = 0.3 + 0.65 * j / 7.0;
        const WhitenedPair base = whiten(x, x, 1e-5);
        WhitenedPair p = base;
        p.y = lambda.asDiagonal() * p.x;
        const Eigen::Index spurious = static_cast<Eigen::Index>(rng.below(8));
        p.y.row(spurious) = rng.gaussian(1, 400);
        const DmdOperator op = dmd_fit(p);
        const ModeReliability r = resdmd_filter(p, op, 0.1);
        Eigen::Index mode = 0;
        op.right.row(spurious).cwiseAbs().maxCoeff(&mode);
        flagged += r.unreliable[static_cast<std::size_t>(mode)] ? 1 : 0;
    }
    Outcome o;
    o.pass = linear_flags == 0 && flagged >= 95;
    o.detail = std::to_string(linear_flags) + " flags on 20 exactly linear datasets; spurious direction flagged in " +
               std::to_string(flagged) + "/100 constructions (need >= 95)";
    return o;
}

// A9
Outcome determinism_and_format() {
    Rng rng(909);
    std::vector<Matrix> hs{rng.gaussian(12, 3000)};
    for (int l = 0; l < 4; ++l)
        hs.push_back(hs.back() + 0.3 * (rng.gaussian(12, 12) * hs.back()).array().tanh().matrix());
    const SnapshotDataset data = SnapshotDataset::from_stream(hs);
    ProfilerConfig config;
    config.mode = DmdMode::Randomized;
    config.rank = 8;
    config.subsample = 2048;
    const std::string a = dump_json(profile_to_json(profile(data, config), config));
    const std::string b = dump_json(profile_to_json(profile(data, config), config));

    const auto dir = std::filesystem::temp_directory_path() / ("rksp_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    write_dataset(data, dir / "s.rksp");
    const SnapshotDataset back = load_dataset(dir / "s.rksp");
    write_dataset(back, dir / "t.rksp");
    auto bytes = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const bool round_trip = back == data && bytes(dir / "s.rksp") == bytes(dir / "t.rksp");
    std::filesystem::remove_all(dir);

    const Matrix h = rng.gaussian(6, 500);
    const SpectralProfile id = profile(SnapshotDataset::from_stream({h, h, h}));
    bool identity_ok = true;
    for (const auto& layer : id.layers) identity_ok = identity_ok && layer.masses.m_near1 == 1.0 && layer.degenerate_update;

    Outcome o;
    o.pass = a == b && round_trip && identity_ok;
    o.detail = std::string("profile JSON ") + (a == b ? "byte-identical" : "DIFFERS") + " across runs (" +
               std::to_string(a.size()) + " bytes); container round-trip " + (round_trip ? "bit-exact" : "BROKEN") +
               "; identity transitions " + (identity_ok ? "M_near1 = 1 with degenerate flag" : "WRONG");
    return o;
}

struct Criterion {
    std::string id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::set<std::string> split_ids(const std::string& s) {
    std::set<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) if (!item.empty()) out.insert(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only, expect_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) only = split_ids(argv[++i]);
        else if (arg == "--expect-fail" && i + 1 < argc) expect_fail = split_ids(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--only A1,A2] [--expect-fail A4]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<Criterion> criteria{
        {"A1", "DMD recovery", 30, dmd_recovery},
        {"A2", "energy sandwich", 60, theorem_one},
        {"A3", "divergence prediction", 600, divergence_prediction},
        {"A4", "KSS stabilization", 900, kss_stabilization},
        {"A5", "KSS gradient", 10, kss_gradient_check},
        {"A6", "Kreiss / Bauer-Fike", 60, kreiss_bauer_fike},
        {"A7", "statistics oracles", 30, statistics_oracles},
        {"A8", "ResDMD", 30, resdmd_check},
        {"A9", "determinism and format", 60, determinism_and_format},
    };
    int unexpected = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds <= c.budget_seconds;
        const bool pass = o.pass && in_time;
        std::printf("%s %s %s: %s [%.1f s of %.0f s]\n", pass ? "PASS" : "FAIL", c.id.c_str(), c.name.c_str(),
                    o.detail.c_str(), seconds, c.budget_seconds);
        for (const std::string& note : o.notes) std::printf("     %s\n", note.c_str());
        if (!pass && expect_fail.count(c.id)) std::printf("     (listed as an expected failure)\n");
        if (!pass && !expect_fail.count(c.id)) ++unexpected;
        std::fflush(stdout);
    }
    return unexpected == 0 ? 0 : 1;
}
