#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rksp/snapshot_store.hpp"
#include "rksp/spectral_diagnostics.hpp"
#include "rksp/whitened_dmd.hpp"

namespace rksp {

enum class Aggregate { Mean, Max };

struct ProfilerConfig {
    double epsilon = 1e-5;
    DmdMode mode = DmdMode::Full;
    Eigen::Index rank = 32;          ///< randomized-mode rank
    Eigen::Index subsample = 2048;   ///< N cap; 0 disables subsampling
    MassThresholds thresholds;
    bool resdmd = true;
    double tau = 0.1;
    double eps_r = 1e-8;
    double eps_nl = 1e-8;
    bool kreiss = true;
    KreissGrid kreiss_grid;
    std::uint64_t seed = 42;
    Aggregate aggregate = Aggregate::Mean;

    void validate() const;
};

struct LayerSpectralProfile {
    std::size_t layer = 0;
    SpectralMasses masses;
    double rho = 0.0;              ///< pre-filter spectral radius
    double kappa = 1.0;            ///< +inf when the eigenbasis is defective
    double eta_nl = 0.0;
    double kreiss = 1.0;
    double reliability_fraction = 1.0;
    bool degenerate_update = false;
    bool defective = false;
    bool randomized = false;
    Eigen::Index rank = 0;
    ComplexVector eigenvalues;     ///< the modes the masses were computed over
    ComplexVector all_eigenvalues; ///< every DMD eigenvalue, before filtering
};

struct MetricSummary {
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
    double std = 0.0;  ///< population standard deviation across layers
};

/// Metric names, in report order.
const std::vector<std::string>& profile_metric_names();

/// Per-layer value of a named metric.
double layer_metric(const LayerSpectralProfile& layer, const std::string& name);

struct SpectralProfile {
    std::vector<LayerSpectralProfile> layers;
    std::map<std::string, MetricSummary> aggregates;
    double risk_score = 0.0;
    double composite_score = 0.0;  ///< mean over layers of M_near1 * log10 kappa
    Aggregate aggregate = Aggregate::Mean;
};

/// Mean / max / min / population std of a sequence, folded in order.
MetricSummary summarize(const std::vector<double>& values);

/// Runs whitening, DMD, and all per-layer diagnostics for one snapshot pair.
LayerSpectralProfile profile_layer(const Matrix& x, const Matrix& y, const ProfilerConfig& config,
                                   std::size_t layer_index = 0);

/// Profiles every layer transition (in parallel) and aggregates in layer order.
SpectralProfile profile(const SnapshotDataset& dataset, const ProfilerConfig& config = {});

/// Rebuilds aggregates and scores from a profile's layers.
void aggregate_profile(SpectralProfile& profile);

/// Mean (or max, per the profile's aggregate) of per-layer M_near1.
double risk_score(const SpectralProfile& profile);

}  // namespace rksp
