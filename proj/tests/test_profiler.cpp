#include <doctest.h>

#include <cmath>

#include "rksp/profiler.hpp"
#include "rksp/random.hpp"
#include "rksp/report.hpp"
#include "rksp/synthetic_lab.hpp"
#include "test_util.hpp"

using namespace rksp;
using rksp::testing::error_code_of;
using rksp::testing::same_value;

namespace {

/// V diag(lambda) V^{-1} with a random, reasonably conditioned V.
Matrix with_spectrum(const Vector& lambda, Rng& rng) {
    const Eigen::Index d = lambda.size();
    const Matrix v = Matrix::Identity(d, d) + 0.3 * rng.gaussian(d, d) / std::sqrt(static_cast<double>(d));
    return v * lambda.asDiagonal() * v.inverse();
}

struct LinearStack {
    std::vector<Matrix> maps;
    SnapshotDataset data;
};

LinearStack linear_stack(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<Vector> spectra = {
        Vector{{1.0, 0.97, 0.93, 0.5, 0.4, 0.3}},
        Vector{{1.2, 1.0, 0.6, 0.5, 0.45, 0.35}},
        Vector{{0.98, 0.96, 0.95, 0.94, 0.92, 1.01}},
    };
    LinearStack out;
    std::vector<Matrix> hs{rng.gaussian(6, 600)};
    for (const Vector& s : spectra) {
        out.maps.push_back(with_spectrum(s, rng));
        hs.push_back(out.maps.back() * hs.back());
    }
    out.data = SnapshotDataset::from_stream(hs);
    return out;
}

}  // namespace

TEST_CASE("linear stack: masses match the spectrum of each map") {
    const LinearStack stack = linear_stack(1);
    const SpectralProfile p = profile(stack.data);
    REQUIRE(p.layers.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        const SpectralMasses expected = spectral_masses(decompose(stack.maps[l]).eigenvalues);
        const SpectralMasses got = p.layers[l].masses;
        CHECK(std::abs(got.m_near1 - expected.m_near1) * 6.0 <= 1.0 + 1e-12);
        CHECK(std::abs(got.m_gt1 - expected.m_gt1) * 6.0 <= 1.0 + 1e-12);
        CHECK(std::abs(got.m_lt1 - expected.m_lt1) * 6.0 <= 1.0 + 1e-12);
        CHECK(p.layers[l].eta_nl < 1e-6);
        CHECK(p.layers[l].reliability_fraction == 1.0);
        CHECK(p.layers[l].rho == doctest::Approx(decompose(stack.maps[l]).spectral_radius).epsilon(1e-6));
    }
    CHECK(p.layers[2].masses.m_near1 == 1.0);
    // Layers 1 and 2 have an eigenvalue outside the unit circle.
    CHECK(std::isfinite(p.layers[0].kreiss));
    CHECK(p.layers[1].kreiss == kInfinity);
    CHECK(p.layers[2].kreiss == kInfinity);
    CHECK(p.risk_score == doctest::Approx((p.layers[0].masses.m_near1 + p.layers[1].masses.m_near1 + 1.0) / 3.0));
}

TEST_CASE("identity transitions are degenerate with full near-unit mass") {
    Rng rng(2);
    const Matrix h = rng.gaussian(5, 100);
    const SpectralProfile p = profile(SnapshotDataset::from_stream({h, h, h}));
    for (const auto& layer : p.layers) {
        CHECK(layer.degenerate_update);
        CHECK(layer.masses.m_near1 == 1.0);
    }
    CHECK(p.risk_score == 1.0);
}

TEST_CASE("single layer: aggregates equal the layer, std is zero") {
    Rng rng(3);
    const Matrix x = rng.gaussian(4, 200);
    const SpectralProfile p = profile(SnapshotDataset::from_pairs({x}, {0.8 * x + 0.1 * rng.gaussian(4, 200)}));
    for (const std::string& name : profile_metric_names()) {
        const MetricSummary& s = p.aggregates.at(name);
        const double v = layer_metric(p.layers[0], name);
        if (std::isnan(v)) continue;
        CHECK(s.mean == v);
        CHECK(s.max == v);
        CHECK(s.min == v);
        CHECK(s.std == 0.0);
    }
}

TEST_CASE("risk score aggregation") {
    SpectralProfile p;
    p.layers.resize(2);
    p.layers[0].masses.m_near1 = 0.2;
    p.layers[1].masses.m_near1 = 0.6;
    CHECK(risk_score(p) == doctest::Approx(0.4));
    p.aggregate = Aggregate::Max;
    CHECK(risk_score(p) == 0.6);
    p.layers[0].masses.m_near1 = p.layers[1].masses.m_near1 = 1.0;
    p.aggregate = Aggregate::Mean;
    CHECK(risk_score(p) == 1.0);
    CHECK(error_code_of([] { risk_score(SpectralProfile{}); }) == ErrorCode::ProfileRequiresLayers);
}

TEST_CASE("summarize uses the population std") {
    const MetricSummary s = summarize({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("aggregates are recomputable and permutation invariant") {
    const LinearStack stack = linear_stack(4);
    const SpectralProfile p = profile(stack.data);
    SpectralProfile copy = p;
    aggregate_profile(copy);
    CHECK(dump_json(profile_to_json(copy, {})) == dump_json(profile_to_json(p, {})));

    std::vector<Matrix> xs, ys;
    for (std::size_t l : {2u, 0u, 1u}) {
        xs.push_back(stack.data.x(l));
        ys.push_back(stack.data.y(l));
    }
    const SpectralProfile q = profile(SnapshotDataset::from_pairs(xs, ys));
    for (const std::string name : {"m_near1", "rho", "eta_nl", "kreiss"}) {
        INFO(name);
        CHECK(same_value(q.aggregates.at(name).mean, p.aggregates.at(name).mean, 1e-12));
        CHECK(same_value(q.aggregates.at(name).max, p.aggregates.at(name).max, 0.0));
        CHECK(same_value(q.aggregates.at(name).min, p.aggregates.at(name).min, 0.0));
        CHECK(same_value(q.aggregates.at(name).std, p.aggregates.at(name).std, 1e-12));
    }
}

TEST_CASE("profiles are bit-identical for the same inputs") {
    Rng rng(5);
    std::vector<Matrix> hs{rng.gaussian(8, 3000)};
    for (int l = 0; l < 3; ++l) hs.push_back(hs.back() + 0.3 * (rng.gaussian(8, 8) * hs.back()).array().tanh().matrix());
    const SnapshotDataset data = SnapshotDataset::from_stream(hs);
    ProfilerConfig config;
    config.mode = DmdMode::Randomized;
    config.rank = 4;
    const std::string a = dump_json(profile_to_json(profile(data, config), config));
    const std::string b = dump_json(profile_to_json(profile(data, config), config));
    CHECK(a == b);
    config.seed = 43;
    CHECK(dump_json(profile_to_json(profile(data, config), config)) != a);
}

TEST_CASE("randomized mode at r = d matches full mode") {
    const LinearStack stack = linear_stack(6);
    ProfilerConfig full;
    ProfilerConfig randomized;
    randomized.mode = DmdMode::Randomized;
    randomized.rank = 6;
    const SpectralProfile a = profile(stack.data, full);
    const SpectralProfile b = profile(stack.data, randomized);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(b.layers[l].randomized);
        for (const std::string& name : profile_metric_names()) {
            const double va = layer_metric(a.layers[l], name), vb = layer_metric(b.layers[l], name);
            if (name == "kappa") {
                // kappa depends on the eigenvector basis, which the projection rotates.
                CHECK(std::abs(std::log(va) - std::log(vb)) < 1e-6);
            } else {
                INFO(name);
                CHECK(same_value(va, vb, 1e-6));
            }
        }
    }
}

TEST_CASE("too few samples fall back to randomized DMD") {
    Rng rng(7);
    const Matrix x = rng.gaussian(16, 12);
    const LayerSpectralProfile layer = profile_layer(x, 0.9 * x, ProfilerConfig{});
    CHECK(layer.randomized);
    CHECK(layer.rank == 3);
}

TEST_CASE("subsampling caps the sample count") {
    Rng rng(8);
    const Matrix x = rng.gaussian(4, 500);
    ProfilerConfig config;
    config.subsample = 100;
    const SnapshotDataset data = SnapshotDataset::from_pairs({x}, {0.7 * x});
    const SpectralProfile a = profile(data, config);
    const SpectralProfile b = profile(subsample_columns(data, 100, config.seed), [&] {
        ProfilerConfig c = config;
        c.subsample = 0;
        return c;
    }());
    CHECK(dump_json(layer_to_json(a.layers[0])) == dump_json(layer_to_json(b.layers[0])));
}

TEST_CASE("spectral radius is reported before filtering") {
    Rng rng(9);
    const Matrix x = rng.gaussian(8, 400);
    WhitenedPair p = whiten(x, x, 1e-5);
    Matrix y = Vector{{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}}.asDiagonal() * x;
    y.row(0) = 3.0 * rng.gaussian(1, 400);
    const LayerSpectralProfile layer = profile_layer(x, y, ProfilerConfig{});
    double post = 0.0;
    for (Eigen::Index j = 0; j < layer.eigenvalues.size(); ++j) post = std::max(post, std::abs(layer.eigenvalues(j)));
    CHECK(layer.rho >= post);
    CHECK(layer.eigenvalues.size() <= layer.all_eigenvalues.size());
}

TEST_CASE("preset stacks order their risk scores") {
    const SyntheticModel noorm = make_stack(StackSpec::preset(Regime::NoormLike, 11));
    const SyntheticModel preln = make_stack(StackSpec::preset(Regime::PrelnLike, 11));
    CHECK(profile_model(noorm).risk_score > profile_model(preln).risk_score);
}

TEST_CASE("errors") {
    CHECK(error_code_of([] { profile(SnapshotDataset{}); }) == ErrorCode::ProfileRequiresLayers);
    ProfilerConfig bad;
    bad.epsilon = 0.0;
    Rng rng(10);
    const Matrix x = rng.gaussian(3, 20);
    CHECK(error_code_of([&] { profile(SnapshotDataset::from_pairs({x}, {x}), bad); }) != ErrorCode::ProfileRequiresLayers);
}
