#include "rksp/profiler.hpp"

#include <algorithm>
#include <cmath>

#include "rksp/parallel.hpp"

namespace rksp {

void ProfilerConfig::validate() const {
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
    if (rank <= 0) throw Error(ErrorCode::InvalidArgument, "rank must be positive");
    if (subsample < 0) throw Error(ErrorCode::InvalidArgument, "subsample must be >= 0");
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
    if (!(eps_r > 0.0) || !(eps_nl > 0.0)) throw Error(ErrorCode::InvalidArgument, "guards must be positive");
    thresholds.validate();
}

const std::vector<std::string>& profile_metric_names() {
    static const std::vector<std::string> names = {"m_near1", "m_gt1",  "m_lt1",  "m_mid", "rho",
                                                   "kappa",   "eta_nl", "kreiss", "reliability_fraction"};
    return names;
}

double layer_metric(const LayerSpectralProfile& layer, const std::string& name) {
    if (name == "m_near1") return layer.masses.m_near1;
    if (name == "m_gt1") return layer.masses.m_gt1;
    if (name == "m_lt1") return layer.masses.m_lt1;
    if (name == "m_mid") return layer.masses.m_mid;
    if (name == "rho") return layer.rho;
    if (name == "kappa") return layer.kappa;
    if (name == "eta_nl") return layer.eta_nl;
    if (name == "kreiss") return layer.kreiss;
    if (name == "reliability_fraction") return layer.reliability_fraction;
    throw Error(ErrorCode::InvalidArgument, "unknown metric " + name);
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    s.max = values.front();
    s.min = values.front();
    double sum = 0.0;
    for (double v : values) {
        sum += v;
        s.max = std::max(s.max, v);
        s.min = std::min(s.min, v);
    }
    const double n = static_cast<double>(values.size());
    s.mean = sum / n;
    if (!std::isfinite(s.mean)) {
        s.std = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / n);
    return s;
}

LayerSpectralProfile profile_layer(const Matrix& x, const Matrix& y, const ProfilerConfig& config,
                                   std::size_t layer_index) {
    LayerSpectralProfile out;
    out.layer = layer_index;
    const WhitenedPair pair = whiten(x, y, config.epsilon);
    const Eigen::Index d = x.rows();
    const Eigen::Index n = x.cols();
    const std::uint64_t layer_seed = config.seed + 1000003ULL * layer_index;

    DmdOperator op;
    if (n < d + 1) {
        // Too few samples for a well-posed d x d pseudoinverse.
        const Eigen::Index r = std::max<Eigen::Index>(1, std::min<Eigen::Index>(32, n / 4));
        op = randomized_dmd(pair, std::min(r, std::min(d, n)), layer_seed);
    } else if (config.mode == DmdMode::Randomized) {
        op = randomized_dmd(pair, std::min(config.rank, std::min(d, n)), layer_seed);
    } else {
        op = dmd_fit(pair);
    }
    out.randomized = op.mode == DmdMode::Randomized;
    out.rank = op.rank;
    out.rho = op.spectral_radius;
    out.kappa = op.kappa;
    out.defective = op.defective;
    out.all_eigenvalues = op.eigenvalues;

    const NonlinearityResult nl = nonlinearity_ratio(pair, op, config.eps_nl);
    out.eta_nl = nl.eta;
    out.degenerate_update = nl.degenerate_update;

    out.eigenvalues = op.eigenvalues;
    if (config.resdmd && !op.defective) {
        const ModeReliability rel = resdmd_filter(pair, op, config.tau, config.eps_r);
        out.reliability_fraction = rel.reliable_fraction();
        std::vector<Complex> kept;
        for (Eigen::Index j = 0; j < op.eigenvalues.size(); ++j)
            if (!rel.unreliable[static_cast<std::size_t>(j)]) kept.push_back(op.eigenvalues(j));
        // With every mode flagged there is nothing to bin; fall back to the full set.
        if (!kept.empty()) out.eigenvalues = Eigen::Map<ComplexVector>(kept.data(), static_cast<Eigen::Index>(kept.size()));
    }
    out.masses = spectral_masses(out.eigenvalues, config.thresholds);
    out.kreiss = config.kreiss ? kreiss_constant(op.a_hat, config.kreiss_grid).value
                               : std::numeric_limits<double>::quiet_NaN();
    return out;
}

void aggregate_profile(SpectralProfile& profile) {
    profile.aggregates.clear();
    for (const std::string& name : profile_metric_names()) {
        std::vector<double> values;
        values.reserve(profile.layers.size());
        for (const auto& layer : profile.layers) values.push_back(layer_metric(layer, name));
        profile.aggregates[name] = summarize(values);
    }
    profile.risk_score = risk_score(profile);
    double composite = 0.0;
    for (const auto& layer : profile.layers) composite += layer.masses.m_near1 * std::log10(layer.kappa);
    profile.composite_score = profile.layers.empty() ? 0.0 : composite / static_cast<double>(profile.layers.size());
}

double risk_score(const SpectralProfile& profile) {
    if (profile.layers.empty()) throw Error(ErrorCode::ProfileRequiresLayers, "profile has no layers");
    double acc = 0.0;
    for (const auto& layer : profile.layers) {
        if (profile.aggregate == Aggregate::Max)
            acc = std::max(acc, layer.masses.m_near1);
        else
            acc += layer.masses.m_near1;
    }
    return profile.aggregate == Aggregate::Max ? acc : acc / static_cast<double>(profile.layers.size());
}

SpectralProfile profile(const SnapshotDataset& dataset, const ProfilerConfig& config) {
    config.validate();
    if (dataset.layer_count() == 0) throw Error(ErrorCode::ProfileRequiresLayers, "dataset has no layers");
    const SnapshotDataset* source = &dataset;
    SnapshotDataset reduced;
    if (config.subsample > 0 && dataset.sample_count() > config.subsample) {
        reduced = subsample_columns(dataset, config.subsample, config.seed);
        source = &reduced;
    }
    SpectralProfile out;
    out.aggregate = config.aggregate;
    out.layers.resize(source->layer_count());
    parallel_for(source->layer_count(), [&](std::size_t l) {
        try {
            out.layers[l] = profile_layer(source->x(l), source->y(l), config, l);
        } catch (const Error& e) {
            throw Error(e.code(), "layer " + std::to_string(l) + ": " + e.detail());
        }
    });
    aggregate_profile(out);
    return out;
}

}  // namespace rksp
