#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rksp/common.hpp"
#include "rksp/kss.hpp"
#include "rksp/profiler.hpp"
#include "rksp/random.hpp"
#include "rksp/risk_eval.hpp"

namespace rksp {

enum class Regime { PrelnLike, NoormLike, Custom };

const char* regime_name(Regime regime);
Regime parse_regime(const std::string& name);

struct Nonlinearity {
    enum class Kind { None, Tanh };
    Kind kind = Kind::Tanh;
    double scale = 0.1;  ///< phi(u) = tanh(scale u) / scale

    double apply(double u) const;
    double derivative(double u) const;
};

struct StackSpec {
    Eigen::Index d = 32;
    std::size_t layers = 6;
    Regime regime = Regime::NoormLike;
    double target_near_unit_mass = 0.80;
    double target_kappa = 3.0;
    Nonlinearity nonlinearity;
    std::uint64_t seed = 0;

    /// preln_like targets M_near1 = 0.16, noorm_like 0.80.
    static StackSpec preset(Regime regime, std::uint64_t seed = 0, Eigen::Index d = 32, std::size_t layers = 6);

    /// preln_like divides each column by max(1, rms) before the branch.
    bool rms_prescale() const { return regime == Regime::PrelnLike; }
    void validate() const;
};

/// f(h) = W2 phi(W1 g(h)), g the optional RMS pre-scaling.
struct ToyLayer {
    Matrix w1;
    Matrix w2;
};

/// Per-layer intermediates of a forward pass over a batch (columns).
struct ForwardCache {
    std::vector<Matrix> states;   ///< h_0..h_L
    std::vector<Matrix> scaled;   ///< g(h_l)
    std::vector<Matrix> pre;      ///< u_l = W1 g(h_l)
    std::vector<Vector> rms;      ///< column rms of h_l (preln only)
};

struct SyntheticModel {
    StackSpec spec;
    std::vector<ToyLayer> layers;
    double profiled_mass = 0.0;  ///< mean M_near1 measured after construction
    bool rescaled = false;

    ForwardCache forward(const Matrix& h0) const;
    /// Stream dataset of h_0..h_L for N Gaussian probes.
    SnapshotDataset probe(Eigen::Index n, std::uint64_t seed) const;
};

/// Profiler settings used for lab risk scores: full DMD, ResDMD filter on,
/// Kreiss off, no subsampling.
ProfilerConfig lab_profiler_config();

/// Sequential single-threaded profile (safe inside a parallel trial).
SpectralProfile profile_model(const SyntheticModel& model, Eigen::Index probes = 512);

/// Draws W2 W1 = Q (Lambda - I) Q^{-1} per layer with cond(Q) = target_kappa,
/// W1 Haar orthogonal. Lambda is real block diagonal: a target fraction of
/// moduli in [0.92, 1.03], the rest in [0.3, 0.7], complex pairs with
/// probability 1/2. The stack is then profiled; if the mean mass misses the
/// target by more than 0.1 every W2 is rescaled once by the fitted branch
/// gain, and a remaining miss above 0.15 throws TargetUnreachable.
SyntheticModel make_stack(const StackSpec& spec);

/// Vector associative recall: `pairs` key/value pairs of `key_dim` Gaussian
/// vectors and one query key, concatenated and padded with Gaussian noise to
/// d. The target is the queried value, read out through a fixed random
/// matrix R (key_dim x d, entries readout_scale * N(0, 1/d)).
struct ToyTask {
    Eigen::Index pairs = 3;
    Eigen::Index key_dim = 4;
    double readout_scale = 0.3;
    Eigen::Index batch = 32;

    Eigen::Index input_dim() const { return (2 * pairs + 1) * key_dim; }
    void validate(Eigen::Index d) const;
    /// Returns inputs (d x batch) and targets (key_dim x batch).
    std::pair<Matrix, Matrix> sample(Eigen::Index d, Rng& rng) const;
};

struct TrainConfig {
    std::size_t steps = 500;
    double momentum = 0.9;
    std::size_t warmup = 0;        ///< linear lr warmup steps (0 = none)
    bool train_inner = false;      ///< also train W1 (W2 is always trained)
    double loss_limit = 50.0;
    double grad_limit = 500.0;
    Eigen::Index kss_probes = 512; ///< probe states per KSS application
    double whitening_epsilon = 1e-5;
    Eigen::Index risk_probes = 512;

    void validate() const;
};

struct GradientBaselineFeatures {
    double init_grad_norm = 0.0;
    std::optional<double> grad_norm_step100;  ///< empty if the run stopped earlier
    double grad_var_1to100 = 0.0;             ///< population variance over the recorded prefix
    std::size_t spike_count_1to500 = 0;
};

struct TrialRecord {
    std::string config_tag;
    Regime regime = Regime::Custom;
    std::uint64_t seed = 0;
    std::uint64_t model_seed = 0;
    double lr = 0.0;
    std::optional<double> kss_alpha;  ///< empty when KSS is off

    bool diverged = false;
    std::optional<std::size_t> divergence_step;  ///< index into the traces
    double final_metric = 0.0;                   ///< last task loss recorded
    std::vector<double> loss_trace;
    std::vector<double> grad_norm_trace;

    double risk_score_at_init = 0.0;
    double composite_score_at_init = 0.0;
    std::optional<double> risk_score_final;  ///< empty if the final model cannot be profiled
    std::size_t kss_applications = 0;
    std::size_t kss_failures = 0;
    GradientBaselineFeatures features;

    /// Recomputes D from the traces.
    bool label_from_traces(double loss_limit = 50.0, double grad_limit = 500.0) const;
};

/// Spikes: loss[t] > 1.5 * median of up to 10 preceding losses, t in 1..500.
std::size_t count_loss_spikes(const std::vector<double>& losses, std::size_t horizon = 500);
GradientBaselineFeatures gradient_features(const std::vector<double>& losses, const std::vector<double>& grad_norms);

/// SGD with momentum on the recall loss 0.5 mean_batch ||R h_L - v||^2.
/// Stops at the first step whose loss exceeds loss_limit or whose gradient
/// norm exceeds grad_limit (non-finite values are recorded as +inf). With
/// KSS, every apply_every-th step adds alpha / |S| times the gradient of
/// each sampled layer's KSS loss, taken end to end through W2 (and W1) on
/// fresh Gaussian probes with the input states, whitener and sketch frozen.
TrialRecord run_trial(const SyntheticModel& model, const ToyTask& task, double lr, const TrainConfig& train,
                      const std::optional<KssConfig>& kss, std::uint64_t seed);

struct TrialPlan {
    StackSpec spec;  ///< spec.seed is the model seed
    double lr = 0.0;
    std::uint64_t seed = 0;
    std::optional<KssConfig> kss;
    std::string tag;  ///< defaults to the regime name
};

struct CohortRun {
    CohortResult cohort;  ///< score = risk_score_at_init
    std::vector<TrialRecord> records;
};

/// Runs plans in parallel; output order follows the input.
CohortRun run_plans(const std::vector<TrialPlan>& plans, const ToyTask& task, const TrainConfig& train);

/// Model seed used for training seed `seed` under a base spec.
std::uint64_t trial_model_seed(std::uint64_t spec_seed, std::uint64_t seed);

/// Every (spec, lr, seed) combination in that nesting order, each trial on
/// its own model drawn with trial_model_seed(spec.seed, seed).
CohortRun run_cohort(const std::vector<StackSpec>& specs, const std::vector<double>& lrs,
                     const std::vector<std::uint64_t>& seeds, const std::optional<KssConfig>& kss,
                     const ToyTask& task = {}, const TrainConfig& train = {});

struct Calibration {
    double lr = 0.0;
    double fraction = 0.0;                 ///< divergence fraction at lr
    std::vector<std::pair<double, double>> probes;  ///< (lr, fraction) in evaluation order
};

/// Smallest lr in [lo, hi] with >= 50% divergence over the probe seeds, by
/// bisection. Requires the fraction at hi to be >= 0.5.
Calibration calibrate_lr(const StackSpec& spec, const std::vector<std::uint64_t>& probe_seeds, double lo, double hi,
                         std::size_t iterations, const ToyTask& task = {}, const TrainConfig& train = {});

/// Frozen desk-scale fixture: task, optimizer settings and the calibrated
/// unstable learning rates (d = 32, L = 6, eight probe seeds 1000..1007).
struct DeskLab {
    ToyTask task;
    TrainConfig train;
    double noorm_unstable_lr = 0.0;
    double preln_unstable_lr = 0.0;

    /// Four geometrically spaced learning rates strictly between the two
    /// calibrated values, where noorm_like runs mostly diverge and preln_like
    /// runs mostly do not.
    std::vector<double> band_lrs() const;
};

DeskLab desk_lab();

}  // namespace rksp
