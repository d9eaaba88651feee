#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "rksp/random.hpp"
#include "rksp/snapshot_store.hpp"
#include "test_util.hpp"

using namespace rksp;
using rksp::testing::error_code_of;
using rksp::testing::TempDir;

namespace {

SnapshotDataset random_pairs(std::size_t layers, Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> xs, ys;
    for (std::size_t l = 0; l < layers; ++l) {
        xs.push_back(rng.gaussian(d, n));
        ys.push_back(rng.gaussian(d, n));
    }
    return SnapshotDataset::from_pairs(std::move(xs), std::move(ys));
}

SnapshotDataset random_stream(std::size_t layers, Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> hs;
    for (std::size_t l = 0; l <= layers; ++l) hs.push_back(rng.gaussian(d, n));
    return SnapshotDataset::from_stream(std::move(hs));
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("pair container round-trips bit-exactly") {
    TempDir dir("store_pairs");
    const SnapshotDataset data = random_pairs(2, 4, 8, 1);
    write_dataset(data, dir / "a.rksp");
    const SnapshotDataset back = load_dataset(dir / "a.rksp");
    CHECK(back.layer_count() == 2);
    CHECK(back.hidden_dim() == 4);
    CHECK(back.sample_count() == 8);
    CHECK_FALSE(back.stream_mode());
    CHECK(back == data);
    CHECK(std::filesystem::file_size(dir / "a.rksp") == kHeaderBytes + 4 * 4 * 8 * 8);
}

TEST_CASE("stream container stores L+1 matrices and keeps Y_l == X_{l+1}") {
    TempDir dir("store_stream");
    const SnapshotDataset data = random_stream(3, 5, 7, 2);
    CHECK(data.stream_mode());
    CHECK(data.layer_count() == 3);
    CHECK(data.consecutive());
    write_dataset(data, dir / "s.rksp");
    CHECK(std::filesystem::file_size(dir / "s.rksp") == kHeaderBytes + 4 * 5 * 7 * 8);
    const SnapshotDataset back = load_dataset(dir / "s.rksp");
    CHECK(back.stream_mode());
    CHECK(back == data);
    for (std::size_t l = 0; l + 1 < back.layer_count(); ++l) CHECK(back.y(l) == back.x(l + 1));
}

TEST_CASE("f32 containers round-trip at the declared precision") {
    TempDir dir("store_f32");
    const SnapshotDataset data = random_pairs(1, 3, 5, 3).rounded_to(Precision::F32);
    const SnapshotDataset f32 = SnapshotDataset::from_pairs({data.x(0)}, {data.y(0)}, Precision::F32);
    write_dataset(f32, dir / "f.rksp");
    CHECK(std::filesystem::file_size(dir / "f.rksp") == kHeaderBytes + 2 * 3 * 5 * 4);
    const SnapshotDataset back = load_dataset(dir / "f.rksp");
    CHECK(back.precision() == Precision::F32);
    CHECK(back.x(0) == f32.x(0));
    CHECK(back.y(0) == f32.y(0));
}

TEST_CASE("truncated payload is a shape mismatch") {
    TempDir dir("store_trunc");
    write_dataset(random_pairs(2, 4, 8, 4), dir / "a.rksp");
    auto bytes = read_bytes(dir / "a.rksp");
    // Header says N = 8; drop one column's worth from every matrix.
    bytes.resize(bytes.size() - 4 * 4 * 8);
    write_bytes(dir / "b.rksp", bytes);
    CHECK(error_code_of([&] { load_dataset(dir / "b.rksp"); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("bad magic and version are malformed headers") {
    TempDir dir("store_magic");
    write_dataset(random_pairs(1, 2, 3, 5), dir / "a.rksp");
    auto bytes = read_bytes(dir / "a.rksp");
    auto bad = bytes;
    bad[0] = 'X';
    write_bytes(dir / "m.rksp", bad);
    CHECK(error_code_of([&] { load_dataset(dir / "m.rksp"); }) == ErrorCode::MalformedHeader);
    bad = bytes;
    bad[4] = 2;
    write_bytes(dir / "v.rksp", bad);
    CHECK(error_code_of([&] { load_dataset(dir / "v.rksp"); }) == ErrorCode::MalformedHeader);
}

TEST_CASE("NaN is reported with its layer and column") {
    TempDir dir("store_nan");
    SnapshotDataset clean = random_pairs(2, 4, 8, 6);
    std::vector<Matrix> xs{clean.x(0), clean.x(1)}, ys{clean.y(0), clean.y(1)};
    write_dataset(SnapshotDataset::from_pairs(xs, ys), dir / "a.rksp");
    auto bytes = read_bytes(dir / "a.rksp");
    // Matrices are X0, Y0, X1, Y1; poison X1 at row 2, column 3.
    const std::size_t offset = kHeaderBytes + 2 * 4 * 8 * 8 + (3 * 4 + 2) * 8;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::memcpy(bytes.data() + offset, &nan, sizeof nan);
    write_bytes(dir / "n.rksp", bytes);
    try {
        load_dataset(dir / "n.rksp");
        FAIL("expected NonFiniteData");
    } catch (const NonFiniteDataError& e) {
        CHECK(e.code() == ErrorCode::NonFiniteData);
        CHECK(e.layer() == 1);
        CHECK(e.column() == 3);
    }
}

TEST_CASE("ragged and empty datasets are rejected") {
    TempDir dir("store_invalid");
    Rng rng(7);
    CHECK(error_code_of([&] { SnapshotDataset::from_pairs({rng.gaussian(3, 4)}, {rng.gaussian(3, 5)}); }) ==
          ErrorCode::ShapeMismatch);
    CHECK(error_code_of([&] { write_dataset(SnapshotDataset{}, dir / "e.rksp"); }) ==
          ErrorCode::ProfileRequiresLayers);
}

TEST_CASE("consecutive check compares Y_l with X_{l+1}") {
    Rng rng(8);
    const Matrix a = rng.gaussian(3, 4), b = rng.gaussian(3, 4), c = rng.gaussian(3, 4);
    CHECK(SnapshotDataset::from_pairs({a, b}, {b, c}).consecutive());
    CHECK_FALSE(SnapshotDataset::from_pairs({a, b}, {c, c}).consecutive());
}

TEST_CASE("subsample_columns contracts") {
    const SnapshotDataset data = random_stream(2, 3, 50, 9);
    SUBCASE("n = N keeps everything in order") { CHECK(subsample_columns(data, 50, 1) == data); }
    SUBCASE("n = 1 shares one index across layers") {
        const SnapshotDataset one = subsample_columns(data, 1, 3);
        REQUIRE(one.sample_count() == 1);
        const auto idx = subsample_indices(50, 1, 3);
        for (std::size_t l = 0; l < data.layer_count(); ++l) {
            CHECK(one.x(l).col(0) == data.x(l).col(idx[0]));
            CHECK(one.y(l).col(0) == data.y(l).col(idx[0]));
        }
    }
    SUBCASE("fixed seed is deterministic") {
        CHECK(subsample_indices(2048, 1024, 42) == subsample_indices(2048, 1024, 42));
        CHECK(subsample_indices(2048, 1024, 42) != subsample_indices(2048, 1024, 43));
        const auto idx = subsample_indices(2048, 1024, 42);
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
    SUBCASE("n > N is rejected") {
        CHECK(error_code_of([&] { subsample_columns(data, 51, 0); }) == ErrorCode::NTooLarge);
    }
    SUBCASE("subsampling commutes with layer selection") {
        for (std::size_t l = 0; l < data.layer_count(); ++l) {
            const SnapshotDataset a = subsample_columns(data, 17, 5).layer(l);
            const SnapshotDataset b = subsample_columns(data.layer(l), 17, 5);
            CHECK(a.x(0) == b.x(0));
            CHECK(a.y(0) == b.y(0));
        }
    }
    SUBCASE("subsampled container records the algorithm id") {
        TempDir dir("store_sub");
        write_dataset(subsample_columns(data, 10, 2), dir / "s.rksp");
        CHECK(load_dataset(dir / "s.rksp").subsample_algorithm() == Rng::kAlgorithmId);
    }
}

TEST_CASE("CSV fallback round-trips") {
    TempDir dir("store_csv");
    const SnapshotDataset data = random_pairs(2, 3, 4, 10);
    write_dataset_csv(data, dir.path());
    const SnapshotDataset back = load_dataset_csv(dir.path());
    REQUIRE(back.layer_count() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(back.x(l) == data.x(l));
        CHECK(back.y(l) == data.y(l));
    }
}
