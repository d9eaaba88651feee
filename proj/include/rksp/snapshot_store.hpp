#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rksp/common.hpp"

namespace rksp {

enum class Precision : std::uint8_t { F32 = 0, F64 = 1 };

/// NaN/Inf found while validating; reports where.
class NonFiniteDataError : public Error {
public:
    NonFiniteDataError(std::size_t layer, Eigen::Index column);
    std::size_t layer() const noexcept { return layer_; }
    Eigen::Index column() const noexcept { return column_; }

private:
    std::size_t layer_;
    Eigen::Index column_;
};

/// Paired residual-stream snapshots (X_l, Y_l), l = 0..L-1, each d x N.
///
/// Two storage layouts share one interface. In stream mode the dataset holds
/// L+1 matrices h_0..h_L and the pairs are the views (h_l, h_{l+1}), so
/// Y_l == X_{l+1} holds by construction. In pair mode it holds 2L independent
/// matrices. Entries are always kept in double precision; `precision` records
/// the on-disk width.
class SnapshotDataset {
public:
    SnapshotDataset() = default;

    /// Stream of hidden states h_0..h_L (L+1 matrices, L >= 1).
    static SnapshotDataset from_stream(std::vector<Matrix> states,
                                       Precision precision = Precision::F64,
                                       std::string source_tag = {});

    /// Explicit pairs; xs.size() == ys.size() == L >= 1.
    static SnapshotDataset from_pairs(std::vector<Matrix> xs, std::vector<Matrix> ys,
                                      Precision precision = Precision::F64,
                                      std::string source_tag = {});

    std::size_t layer_count() const;
    Eigen::Index hidden_dim() const { return matrices_.empty() ? 0 : matrices_.front().rows(); }
    Eigen::Index sample_count() const { return matrices_.empty() ? 0 : matrices_.front().cols(); }

    const Matrix& x(std::size_t layer) const;
    const Matrix& y(std::size_t layer) const;

    bool stream_mode() const { return stream_; }
    Precision precision() const { return precision_; }
    const std::string& source_tag() const { return source_tag_; }
    std::uint8_t subsample_algorithm() const { return subsample_algorithm_; }

    /// Raw storage in file order (L+1 matrices in stream mode, X0,Y0,X1,Y1,... otherwise).
    const std::vector<Matrix>& matrices() const { return matrices_; }

    /// True when Y_l equals X_{l+1} column-for-column for every l (always true in stream mode).
    bool consecutive() const;

    /// Checks shape agreement, L >= 1 and finiteness. Throws rksp::Error.
    void validate() const;

    /// Single-layer dataset (X_l, Y_l) in pair mode.
    SnapshotDataset layer(std::size_t layer) const;

    /// Same dataset with every entry rounded through float, as stored at F32.
    SnapshotDataset rounded_to(Precision precision) const;

    bool operator==(const SnapshotDataset& other) const;

private:
    friend SnapshotDataset subsample_columns(const SnapshotDataset&, Eigen::Index, std::uint64_t);
    friend SnapshotDataset load_dataset(const std::filesystem::path&);

    std::vector<Matrix> matrices_;
    bool stream_ = false;
    Precision precision_ = Precision::F64;
    std::string source_tag_;
    std::uint8_t subsample_algorithm_ = 0;
};

/// Binary container: "RKSP", u32 version=1, u32 flags (bit0 stream mode),
/// u32 L, u32 d, u32 N, u8 dtype (0 f32, 1 f64), 7 reserved bytes, then the
/// matrices in layer order, column-major, little-endian, no padding.
/// Reserved byte 0 carries the subsampling algorithm id (0 = not subsampled).
inline constexpr char kContainerMagic[4] = {'R', 'K', 'S', 'P'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;

SnapshotDataset load_dataset(const std::filesystem::path& path);
void write_dataset(const SnapshotDataset& dataset, const std::filesystem::path& path);

/// CSV fallback: directory with layer_<l>_x.csv and layer_<l>_y.csv, each d
/// rows by N comma-separated columns, for l = 0, 1, ... until a file is missing.
SnapshotDataset load_dataset_csv(const std::filesystem::path& directory);
void write_dataset_csv(const SnapshotDataset& dataset, const std::filesystem::path& directory);

/// Keeps the same n columns in every layer, chosen by a seeded partial
/// Fisher-Yates shuffle and sorted ascending. n == N keeps the original order.
SnapshotDataset subsample_columns(const SnapshotDataset& dataset, Eigen::Index n, std::uint64_t seed);

/// The column indices subsample_columns would keep.
std::vector<Eigen::Index> subsample_indices(Eigen::Index total, Eigen::Index n, std::uint64_t seed);

/// Human-readable description of the container layout.
std::string container_format_description();

}  // namespace rksp
