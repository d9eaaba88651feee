#include "rksp/synthetic_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rksp/parallel.hpp"

namespace rksp {

const char* regime_name(Regime regime) {
    switch (regime) {
        case Regime::PrelnLike: return "preln_like";
        case Regime::NoormLike: return "noorm_like";
        case Regime::Custom: return "custom";
    }
    return "custom";
}

Regime parse_regime(const std::string& name) {
    if (name == "preln_like") return Regime::PrelnLike;
    if (name == "noorm_like") return Regime::NoormLike;
    if (name == "custom") return Regime::Custom;
    throw Error(ErrorCode::InvalidArgument, "unknown regime '" + name + "'");
}

double Nonlinearity::apply(double u) const {
    return kind == Kind::None ? u : std::tanh(scale * u) / scale;
}

double Nonlinearity::derivative(double u) const {
    if (kind == Kind::None) return 1.0;
    const double t = std::tanh(scale * u);
    return 1.0 - t * t;
}

StackSpec StackSpec::preset(Regime regime, std::uint64_t seed, Eigen::Index d, std::size_t layers) {
    StackSpec spec;
    spec.regime = regime;
    spec.seed = seed;
    spec.d = d;
    spec.layers = layers;
    spec.target_near_unit_mass = regime == Regime::PrelnLike ? 0.16 : 0.80;
    return spec;
}

void StackSpec::validate() const {
    if (d < 2) throw Error(ErrorCode::InvalidArgument, "stack width must be at least 2");
    if (layers == 0) throw Error(ErrorCode::ProfileRequiresLayers, "stack needs at least one layer");
    if (!(target_near_unit_mass >= 0.0 && target_near_unit_mass <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "target mass must be in [0, 1]");
    if (!(target_kappa >= 1.0) || !std::isfinite(target_kappa))
        throw Error(ErrorCode::InvalidArgument, "target kappa must be >= 1");
    if (nonlinearity.kind == Nonlinearity::Kind::Tanh && !(nonlinearity.scale > 0.0))
        throw Error(ErrorCode::InvalidArgument, "tanh scale must be positive");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix conditioned(Rng& rng, Eigen::Index n, double kappa) {
    const Matrix u = rng.orthogonal(n);
    const Matrix v = rng.orthogonal(n);
    Vector s = Vector::Ones(n);
    if (kappa > 1.0 && n > 1)
        for (Eigen::Index i = 0; i < n; ++i)
            s(i) = std::exp(std::log(kappa) * static_cast<double>(i) / static_cast<double>(n - 1));
    return u * s.asDiagonal() * v.transpose();
}

// Real block-diagonal matrix with the requested share of near-unit moduli.
Matrix target_block(Rng& rng, Eigen::Index d, double mass) {
    const auto near = static_cast<Eigen::Index>(std::lround(mass * static_cast<double>(d)));
    std::vector<double> mods(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i)
        mods[static_cast<std::size_t>(i)] = i < near ? 0.92 + 0.11 * rng.uniform() : 0.3 + 0.4 * rng.uniform();
    for (std::size_t i = mods.size() - 1; i > 0; --i) std::swap(mods[i], mods[rng.below(i + 1)]);

    Matrix lambda = Matrix::Zero(d, d);
    Eigen::Index i = 0;
    while (i < d) {
        if (i + 1 < d && rng.uniform() < 0.5) {
            const double theta = 0.05 + 0.25 * rng.uniform();
            const double m = mods[static_cast<std::size_t>(i)];
            lambda(i, i) = m * std::cos(theta);
            lambda(i, i + 1) = -m * std::sin(theta);
            lambda(i + 1, i) = m * std::sin(theta);
            lambda(i + 1, i + 1) = m * std::cos(theta);
            i += 2;
        } else {
            lambda(i, i) = mods[static_cast<std::size_t>(i)];
            ++i;
        }
    }
    return lambda;
}

Matrix apply_phi(const Nonlinearity& phi, const Matrix& u) {
    return u.unaryExpr([&](double v) { return phi.apply(v); });
}

Matrix apply_dphi(const Nonlinearity& phi, const Matrix& u) {
    return u.unaryExpr([&](double v) { return phi.derivative(v); });
}

// Backward through g(h) = h / max(1, rms(h)), column by column.
Matrix rms_backward(const Matrix& dg, const Matrix& h, const Vector& rms) {
    Matrix out = dg;
    const double d = static_cast<double>(h.rows());
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
        const double r = rms(j);
        if (r <= 1.0) continue;
        const double dot = h.col(j).dot(dg.col(j));
        out.col(j) = dg.col(j) / r - h.col(j) * (dot / (d * r * r * r));
    }
    return out;
}

struct LayerGrad {
    Matrix w1;
    Matrix w2;
};

// Gradient of <dy, f(x)> with x held fixed, using cached intermediates.
// Also returns dL/dg(x) through `dg` when given.
LayerGrad branch_backward(const SyntheticModel& model, const ForwardCache& cache, std::size_t l, const Matrix& dy,
                          Matrix* dg = nullptr) {
    const ToyLayer& layer = model.layers[l];
    LayerGrad g;
    g.w2 = dy * apply_phi(model.spec.nonlinearity, cache.pre[l]).transpose();
    const Matrix du = (layer.w2.transpose() * dy).cwiseProduct(apply_dphi(model.spec.nonlinearity, cache.pre[l]));
    g.w1 = du * cache.scaled[l].transpose();
    if (dg) *dg = layer.w1.transpose() * du;
    return g;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return Rng::substream(a, b).next(); }

}  // namespace

ForwardCache SyntheticModel::forward(const Matrix& h0) const {
    ForwardCache cache;
    const std::size_t L = layers.size();
    cache.states.reserve(L + 1);
    cache.scaled.reserve(L);
    cache.pre.reserve(L);
    cache.states.push_back(h0);
    const double d = static_cast<double>(h0.rows());
    for (std::size_t l = 0; l < L; ++l) {
        const Matrix& h = cache.states.back();
        Matrix g = h;
        if (spec.rms_prescale()) {
            Vector rms = (h.colwise().squaredNorm() / d).cwiseSqrt().transpose();
            for (Eigen::Index j = 0; j < h.cols(); ++j)
                if (rms(j) > 1.0) g.col(j) /= rms(j);
            cache.rms.push_back(std::move(rms));
        }
        Matrix u = layers[l].w1 * g;
        Matrix next = h + layers[l].w2 * apply_phi(spec.nonlinearity, u);
        cache.scaled.push_back(std::move(g));
        cache.pre.push_back(std::move(u));
        cache.states.push_back(std::move(next));
    }
    return cache;
}

SnapshotDataset SyntheticModel::probe(Eigen::Index n, std::uint64_t seed) const {
    Rng rng(seed);
    ForwardCache cache = forward(rng.gaussian(spec.d, n));
    return SnapshotDataset::from_stream(std::move(cache.states));
}

ProfilerConfig lab_profiler_config() {
    ProfilerConfig config;
    config.kreiss = false;
    config.subsample = 0;
    return config;
}

SpectralProfile profile_model(const SyntheticModel& model, Eigen::Index probes) {
    const SnapshotDataset data = model.probe(probes, mix(model.spec.seed, 7));
    const ProfilerConfig config = lab_profiler_config();
    SpectralProfile out;
    out.aggregate = config.aggregate;
    for (std::size_t l = 0; l < data.layer_count(); ++l) out.layers.push_back(profile_layer(data.x(l), data.y(l), config, l));
    aggregate_profile(out);
    return out;
}

SyntheticModel make_stack(const StackSpec& spec) {
    spec.validate();
    SyntheticModel model;
    model.spec = spec;
    Rng rng(spec.seed);
    std::vector<Matrix> branch;  // Q (Lambda - I) Q^{-1}
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const Matrix q = conditioned(rng, spec.d, spec.target_kappa);
        const Matrix lambda = target_block(rng, spec.d, spec.target_near_unit_mass);
        const Matrix m = q * (lambda - Matrix::Identity(spec.d, spec.d)) * q.inverse();
        ToyLayer layer;
        layer.w1 = rng.orthogonal(spec.d);
        layer.w2 = m * layer.w1.transpose();
        model.layers.push_back(std::move(layer));
        branch.push_back(m);
    }

    model.profiled_mass = profile_model(model).risk_score;
    if (std::abs(model.profiled_mass - spec.target_near_unit_mass) <= 0.1) return model;

    // Fit the gain c in f_l(h) ~ c M_l h on the probes and divide it out.
    const ForwardCache cache = model.forward(Rng(mix(spec.seed, 7)).gaussian(spec.d, 512));
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const Matrix linear = branch[l] * cache.states[l];
        const Matrix actual = cache.states[l + 1] - cache.states[l];
        const double denom = linear.squaredNorm();
        const double gain = denom > 0.0 ? (actual.cwiseProduct(linear).sum() / denom) : 1.0;
        if (gain > 0.0) model.layers[l].w2 /= std::clamp(gain, 0.25, 4.0);
    }
    model.rescaled = true;
    model.profiled_mass = profile_model(model).risk_score;
    if (std::abs(model.profiled_mass - spec.target_near_unit_mass) > 0.15)
        throw Error(ErrorCode::TargetUnreachable,
                    "profiled mass " + std::to_string(model.profiled_mass) + " vs target " +
                        std::to_string(spec.target_near_unit_mass));
    return model;
}

void ToyTask::validate(Eigen::Index d) const {
    if (pairs < 1 || key_dim < 1) throw Error(ErrorCode::InvalidArgument, "task needs pairs >= 1 and key_dim >= 1");
    if (input_dim() > d)
        throw Error(ErrorCode::ShapeMismatch, "task input dimension " + std::to_string(input_dim()) +
                                                  " exceeds model width " + std::to_string(d));
    if (batch < 1) throw Error(ErrorCode::InvalidArgument, "batch must be positive");
    if (!(readout_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "readout scale must be positive");
}

std::pair<Matrix, Matrix> ToyTask::sample(Eigen::Index d, Rng& rng) const {
    Matrix x(d, batch);
    Matrix target(key_dim, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index i = 0; i < 2 * pairs * key_dim; ++i) x(i, b) = rng.normal();
        const auto query = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(pairs)));
        const Eigen::Index key_at = 2 * query * key_dim;
        x.block(2 * pairs * key_dim, b, key_dim, 1) = x.block(key_at, b, key_dim, 1);
        target.col(b) = x.block(key_at + key_dim, b, key_dim, 1);
        for (Eigen::Index i = input_dim(); i < d; ++i) x(i, b) = rng.normal();
    }
    return {x, target};
}

void TrainConfig::validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
    if (!(loss_limit > 0.0) || !(grad_limit > 0.0))
        throw Error(ErrorCode::InvalidArgument, "divergence limits must be positive");
    if (kss_probes < 2 || risk_probes < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 probes");
}

bool TrialRecord::label_from_traces(double loss_limit, double grad_limit) const {
    const bool loss_hit = std::any_of(loss_trace.begin(), loss_trace.end(), [&](double v) { return v > loss_limit; });
    const bool grad_hit =
        std::any_of(grad_norm_trace.begin(), grad_norm_trace.end(), [&](double v) { return v > grad_limit; });
    return loss_hit || grad_hit;
}

std::size_t count_loss_spikes(const std::vector<double>& losses, std::size_t horizon) {
    std::size_t spikes = 0;
    const std::size_t end = std::min(horizon, losses.size());
    std::vector<double> window;
    for (std::size_t t = 1; t < end; ++t) {
        window.assign(losses.begin() + static_cast<std::ptrdiff_t>(t - std::min<std::size_t>(t, 10)),
                      losses.begin() + static_cast<std::ptrdiff_t>(t));
        std::sort(window.begin(), window.end());
        const std::size_t k = window.size();
        const double median = k % 2 ? window[k / 2] : 0.5 * (window[k / 2 - 1] + window[k / 2]);
        if (losses[t] > 1.5 * median) ++spikes;
    }
    return spikes;
}

GradientBaselineFeatures gradient_features(const std::vector<double>& losses, const std::vector<double>& grad_norms) {
    GradientBaselineFeatures f;
    if (grad_norms.empty()) return f;
    f.init_grad_norm = grad_norms.front();
    if (grad_norms.size() >= 100) f.grad_norm_step100 = grad_norms[99];
    const std::size_t n = std::min<std::size_t>(100, grad_norms.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += grad_norms[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (grad_norms[i] - mean) * (grad_norms[i] - mean);
    f.grad_var_1to100 = var / static_cast<double>(n);
    f.spike_count_1to500 = count_loss_spikes(losses, 500);
    return f;
}

TrialRecord run_trial(const SyntheticModel& source, const ToyTask& task, double lr, const TrainConfig& train,
                      const std::optional<KssConfig>& kss, std::uint64_t seed) {
    train.validate();
    task.validate(source.spec.d);
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::InvalidArgument, "lr must be finite and >= 0");
    if (kss) kss->validate();

    SyntheticModel model = source;
    const Eigen::Index d = model.spec.d;
    const std::size_t L = model.layers.size();

    TrialRecord rec;
    rec.regime = model.spec.regime;
    rec.config_tag = regime_name(model.spec.regime);
    rec.seed = seed;
    rec.model_seed = model.spec.seed;
    rec.lr = lr;
    if (kss) rec.kss_alpha = kss->alpha;

    const SpectralProfile init = profile_model(model, train.risk_probes);
    rec.risk_score_at_init = init.risk_score;
    rec.composite_score_at_init = init.composite_score;

    Rng data_rng = Rng::substream(seed, 0);
    Rng probe_rng = Rng::substream(seed, 1);
    const Matrix readout = data_rng.gaussian(task.key_dim, d) * (task.readout_scale / std::sqrt(static_cast<double>(d)));

    std::vector<LayerGrad> velocity(L, LayerGrad{Matrix::Zero(d, d), Matrix::Zero(d, d)});
    std::size_t applications = 0;

    for (std::size_t t = 0; t < train.steps; ++t) {
        const auto [x, target] = task.sample(d, data_rng);
        const ForwardCache cache = model.forward(x);
        const Matrix err = readout * cache.states.back() - target;
        const double batch = static_cast<double>(task.batch);
        double loss = 0.5 * err.squaredNorm() / batch;

        std::vector<LayerGrad> grads(L);
        Matrix dh = readout.transpose() * err / batch;
        for (std::size_t l = L; l-- > 0;) {
            Matrix dg;
            grads[l] = branch_backward(model, cache, l, dh, &dg);
            if (model.spec.rms_prescale()) dg = rms_backward(dg, cache.states[l], cache.rms[l]);
            dh += dg;
        }

        if (kss && t % static_cast<std::size_t>(kss->apply_every) == 0) {
            const std::set<std::size_t> sampled = sample_layers(L, kss->layer_fraction, applications, seed);
            const ForwardCache probes = model.forward(probe_rng.gaussian(d, train.kss_probes));
            const double weight = kss->alpha / static_cast<double>(sampled.size());
            for (std::size_t l : sampled) {
                try {
                    const Matrix& xs = probes.states[l];
                    const Matrix& ys = probes.states[l + 1];
                    const WhitenedPair pair = whiten(xs, ys, train.whitening_epsilon);
                    KssConfig cfg = *kss;
                    cfg.rank = std::min(cfg.rank, std::min(d, train.kss_probes));
                    const KssEvaluation ev = kss_gradient(pair, cfg, mix(seed, 1000 + applications * L + l));
                    // B = Q^T W (Y - ybar) P with P = (Q^T X~)^+, so dL/dY = W Q G P^T, centered.
                    const Matrix p = pseudoinverse(ev.basis.transpose() * pair.x);
                    Matrix dy = pair.whitener * ev.basis * ev.grad_wrt_operator * p.transpose();
                    dy.colwise() -= dy.rowwise().mean();
                    const LayerGrad g = branch_backward(model, probes, l, dy);
                    if (!g.w1.allFinite() || !g.w2.allFinite()) throw Error(ErrorCode::NonFiniteData, "KSS gradient");
                    grads[l].w1 += weight * g.w1;
                    grads[l].w2 += weight * g.w2;
                } catch (const Error&) {
                    ++rec.kss_failures;
                }
            }
            ++applications;
        }

        double sq = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            sq += grads[l].w2.squaredNorm();
            if (train.train_inner) sq += grads[l].w1.squaredNorm();
        }
        double gnorm = std::sqrt(sq);
        if (!std::isfinite(loss)) loss = kInf;
        if (!std::isfinite(gnorm)) gnorm = kInf;
        rec.loss_trace.push_back(loss);
        rec.grad_norm_trace.push_back(gnorm);
        if (loss > train.loss_limit || gnorm > train.grad_limit) {
            rec.diverged = true;
            rec.divergence_step = t;
            break;
        }

        const double scale = train.warmup > 0
                                 ? std::min(1.0, static_cast<double>(t + 1) / static_cast<double>(train.warmup))
                                 : 1.0;
        for (std::size_t l = 0; l < L; ++l) {
            velocity[l].w2 = train.momentum * velocity[l].w2 + grads[l].w2;
            model.layers[l].w2 -= (lr * scale) * velocity[l].w2;
            if (train.train_inner) {
                velocity[l].w1 = train.momentum * velocity[l].w1 + grads[l].w1;
                model.layers[l].w1 -= (lr * scale) * velocity[l].w1;
            }
        }
    }

    rec.kss_applications = applications;
    rec.final_metric = rec.loss_trace.empty() ? 0.0 : rec.loss_trace.back();
    rec.features = gradient_features(rec.loss_trace, rec.grad_norm_trace);
    try {
        rec.risk_score_final = profile_model(model, train.risk_probes).risk_score;
    } catch (const Error&) {
    }
    return rec;
}

std::uint64_t trial_model_seed(std::uint64_t spec_seed, std::uint64_t seed) { return mix(spec_seed, seed); }

CohortRun run_plans(const std::vector<TrialPlan>& plans, const ToyTask& task, const TrainConfig& train) {
    CohortRun out;
    out.records.resize(plans.size());
    parallel_for(plans.size(), [&](std::size_t i) {
        const TrialPlan& plan = plans[i];
        const SyntheticModel model = make_stack(plan.spec);
        out.records[i] = run_trial(model, task, plan.lr, train, plan.kss, plan.seed);
        if (!plan.tag.empty()) out.records[i].config_tag = plan.tag;
    });
    for (const TrialRecord& r : out.records)
        out.cohort.trials.push_back(Trial{r.risk_score_at_init, r.diverged, r.config_tag});
    return out;
}

CohortRun run_cohort(const std::vector<StackSpec>& specs, const std::vector<double>& lrs,
                     const std::vector<std::uint64_t>& seeds, const std::optional<KssConfig>& kss,
                     const ToyTask& task, const TrainConfig& train) {
    std::vector<TrialPlan> plans;
    for (const StackSpec& spec : specs)
        for (double lr : lrs)
            for (std::uint64_t seed : seeds) {
                TrialPlan plan;
                plan.spec = spec;
                plan.spec.seed = trial_model_seed(spec.seed, seed);
                plan.lr = lr;
                plan.seed = seed;
                plan.kss = kss;
                plans.push_back(std::move(plan));
            }
    return run_plans(plans, task, train);
}

Calibration calibrate_lr(const StackSpec& spec, const std::vector<std::uint64_t>& probe_seeds, double lo, double hi,
                         std::size_t iterations, const ToyTask& task, const TrainConfig& train) {
    if (probe_seeds.empty()) throw Error(ErrorCode::InvalidArgument, "calibration needs probe seeds");
    if (!(lo >= 0.0 && lo < hi)) throw Error(ErrorCode::InvalidArgument, "calibration needs 0 <= lo < hi");
    Calibration cal;
    auto fraction = [&](double lr) {
        const CohortRun run = run_cohort({spec}, {lr}, probe_seeds, std::nullopt, task, train);
        const double f = static_cast<double>(run.cohort.positives()) / static_cast<double>(run.cohort.size());
        cal.probes.emplace_back(lr, f);
        return f;
    };
    double f_hi = fraction(hi);
    if (f_hi < 0.5)
        throw Error(ErrorCode::InvalidArgument, "divergence fraction at the upper bracket is below 0.5");
    for (std::size_t i = 0; i < iterations; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double f = fraction(mid);
        if (f >= 0.5) {
            hi = mid;
            f_hi = f;
        } else {
            lo = mid;
        }
    }
    cal.lr = hi;
    cal.fraction = f_hi;
    return cal;
}

std::vector<double> DeskLab::band_lrs() const {
    std::vector<double> out;
    const double ratio = preln_unstable_lr / noorm_unstable_lr;
    for (int i = 1; i <= 4; ++i) out.push_back(noorm_unstable_lr * std::pow(ratio, i / 5.0));
    return out;
}

DeskLab desk_lab() {
    DeskLab lab;
    // calibrate_lr over seeds 1000..1007: noorm on [0.02, 0.4], preln on [0.1, 3.0], 8 halvings each.
    lab.noorm_unstable_lr = 0.174375;
    lab.preln_unstable_lr = 0.621094;
    return lab;
}

}  // namespace rksp
