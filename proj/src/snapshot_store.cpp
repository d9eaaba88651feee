#include "rksp/snapshot_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rksp/random.hpp"

namespace rksp {

namespace {

static_assert(std::endian::native == std::endian::little,
              "snapshot container I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    char bytes[4];
    std::memcpy(bytes, &v, 4);
    out.append(bytes, 4);
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

std::string layer_file(const std::filesystem::path& dir, std::size_t layer, char which) {
    return (dir / ("layer_" + std::to_string(layer) + "_" + which + ".csv")).string();
}

Matrix read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw Error(ErrorCode::MalformedHeader, "bad number '" + cell + "' in " + path);
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error(ErrorCode::ShapeMismatch, "ragged rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(ErrorCode::ShapeMismatch, "empty matrix in " + path);
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
    return m;
}

void write_csv_matrix(const Matrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path);
}

}  // namespace

NonFiniteDataError::NonFiniteDataError(std::size_t layer, Eigen::Index column)
    : Error(ErrorCode::NonFiniteData,
            "non-finite entry at layer " + std::to_string(layer) + ", column " + std::to_string(column)),
      layer_(layer),
      column_(column) {}

SnapshotDataset SnapshotDataset::from_stream(std::vector<Matrix> states, Precision precision,
                                             std::string source_tag) {
    SnapshotDataset ds;
    ds.matrices_ = std::move(states);
    ds.stream_ = true;
    ds.precision_ = precision;
    ds.source_tag_ = std::move(source_tag);
    ds.validate();
    return ds;
}

SnapshotDataset SnapshotDataset::from_pairs(std::vector<Matrix> xs, std::vector<Matrix> ys,
                                            Precision precision, std::string source_tag) {
    if (xs.size() != ys.size())
        throw Error(ErrorCode::ShapeMismatch, "X and Y layer counts differ");
    SnapshotDataset ds;
    ds.matrices_.reserve(2 * xs.size());
    for (std::size_t l = 0; l < xs.size(); ++l) {
        ds.matrices_.push_back(std::move(xs[l]));
        ds.matrices_.push_back(std::move(ys[l]));
    }
    ds.precision_ = precision;
    ds.source_tag_ = std::move(source_tag);
    ds.validate();
    return ds;
}

std::size_t SnapshotDataset::layer_count() const {
    if (stream_) return matrices_.empty() ? 0 : matrices_.size() - 1;
    return matrices_.size() / 2;
}

const Matrix& SnapshotDataset::x(std::size_t layer) const {
    if (layer >= layer_count()) throw Error(ErrorCode::InvalidArgument, "layer index out of range");
    return stream_ ? matrices_[layer] : matrices_[2 * layer];
}

const Matrix& SnapshotDataset::y(std::size_t layer) const {
    if (layer >= layer_count()) throw Error(ErrorCode::InvalidArgument, "layer index out of range");
    return stream_ ? matrices_[layer + 1] : matrices_[2 * layer + 1];
}

bool SnapshotDataset::consecutive() const {
    if (stream_) return true;
    for (std::size_t l = 0; l + 1 < layer_count(); ++l)
        if (y(l) != x(l + 1)) return false;
    return true;
}

void SnapshotDataset::validate() const {
    if (layer_count() == 0)
        throw Error(ErrorCode::ProfileRequiresLayers, "dataset has no layers");
    if (!stream_ && matrices_.size() % 2 != 0)
        throw Error(ErrorCode::ShapeMismatch, "pair-mode dataset has an unpaired matrix");
    const Eigen::Index d = hidden_dim();
    const Eigen::Index n = sample_count();
    if (d <= 0 || n <= 0) throw Error(ErrorCode::ShapeMismatch, "empty snapshot matrices");
    for (const Matrix& m : matrices_)
        if (m.rows() != d || m.cols() != n)
            throw Error(ErrorCode::ShapeMismatch, "snapshot matrices disagree in shape");
    for (std::size_t l = 0; l < layer_count(); ++l) {
        for (const Matrix* m : {&x(l), &y(l)}) {
            for (Eigen::Index j = 0; j < n; ++j)
                if (!m->col(j).allFinite()) {
                    // In stream mode a bad Y_l is also X_{l+1}; report the earliest layer.
                    throw NonFiniteDataError(l, j);
                }
        }
    }
}

SnapshotDataset SnapshotDataset::layer(std::size_t l) const {
    return from_pairs({x(l)}, {y(l)}, precision_, source_tag_);
}

SnapshotDataset SnapshotDataset::rounded_to(Precision precision) const {
    SnapshotDataset out = *this;
    out.precision_ = precision;
    if (precision == Precision::F32)
        for (Matrix& m : out.matrices_) m = m.cast<float>().cast<double>();
    return out;
}

bool SnapshotDataset::operator==(const SnapshotDataset& other) const {
    if (stream_ != other.stream_ || precision_ != other.precision_ ||
        matrices_.size() != other.matrices_.size())
        return false;
    for (std::size_t i = 0; i < matrices_.size(); ++i) {
        const Matrix& a = matrices_[i];
        const Matrix& b = other.matrices_[i];
        if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
        // Bitwise comparison so -0.0 and 0.0 are distinguished.
        if (std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) return false;
    }
    return true;
}

SnapshotDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
        throw Error(ErrorCode::MalformedHeader, "missing RKSP magic in " + path.string());
    const char* h = bytes.data();
    const std::uint32_t version = get_u32(h + 4);
    if (version != kContainerVersion)
        throw Error(ErrorCode::MalformedHeader, "unsupported container version " + std::to_string(version));
    const std::uint32_t flags = get_u32(h + 8);
    const std::uint32_t layers = get_u32(h + 12);
    const std::uint32_t d = get_u32(h + 16);
    const std::uint32_t n = get_u32(h + 20);
    const std::uint8_t dtype = static_cast<std::uint8_t>(h[24]);
    const std::uint8_t algorithm = static_cast<std::uint8_t>(h[25]);
    if (dtype > 1) throw Error(ErrorCode::MalformedHeader, "unknown dtype " + std::to_string(dtype));
    if ((flags & ~1u) != 0) throw Error(ErrorCode::MalformedHeader, "unknown flag bits set");
    if (layers == 0) throw Error(ErrorCode::ProfileRequiresLayers, "container declares L = 0");

    const bool stream = flags & 1u;
    const std::size_t count = stream ? layers + 1 : 2 * static_cast<std::size_t>(layers);
    const std::size_t width = dtype == 0 ? 4 : 8;
    const std::size_t expected = kHeaderBytes + count * static_cast<std::size_t>(d) * n * width;
    if (bytes.size() != expected)
        throw Error(ErrorCode::ShapeMismatch,
                    "payload is " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, header implies " +
                        std::to_string(expected - kHeaderBytes));

    SnapshotDataset ds;
    ds.stream_ = stream;
    ds.precision_ = dtype == 0 ? Precision::F32 : Precision::F64;
    ds.source_tag_ = path.string();
    ds.subsample_algorithm_ = algorithm;
    ds.matrices_.reserve(count);
    const char* p = h + kHeaderBytes;
    for (std::size_t k = 0; k < count; ++k) {
        Matrix m(d, n);
        if (dtype == 1) {
            std::memcpy(m.data(), p, sizeof(double) * m.size());
        } else {
            Eigen::MatrixXf f(d, n);
            std::memcpy(f.data(), p, sizeof(float) * f.size());
            m = f.cast<double>();
        }
        p += width * static_cast<std::size_t>(m.size());
        ds.matrices_.push_back(std::move(m));
    }
    ds.validate();
    return ds;
}

void write_dataset(const SnapshotDataset& dataset, const std::filesystem::path& path) {
    dataset.validate();
    std::string out;
    out.append(kContainerMagic, 4);
    put_u32(out, kContainerVersion);
    put_u32(out, dataset.stream_mode() ? 1u : 0u);
    put_u32(out, static_cast<std::uint32_t>(dataset.layer_count()));
    put_u32(out, static_cast<std::uint32_t>(dataset.hidden_dim()));
    put_u32(out, static_cast<std::uint32_t>(dataset.sample_count()));
    out.push_back(static_cast<char>(dataset.precision()));
    out.push_back(static_cast<char>(dataset.subsample_algorithm()));
    out.append(6, '\0');
    for (const Matrix& m : dataset.matrices()) {
        if (dataset.precision() == Precision::F64) {
            out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
        } else {
            const Eigen::MatrixXf f = m.cast<float>();
            out.append(reinterpret_cast<const char*>(f.data()), sizeof(float) * f.size());
        }
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

SnapshotDataset load_dataset_csv(const std::filesystem::path& directory) {
    std::vector<Matrix> xs, ys;
    for (std::size_t l = 0;; ++l) {
        const std::string xf = layer_file(directory, l, 'x');
        const std::string yf = layer_file(directory, l, 'y');
        if (!std::filesystem::exists(xf) && !std::filesystem::exists(yf)) break;
        xs.push_back(read_csv_matrix(xf));
        ys.push_back(read_csv_matrix(yf));
    }
    if (xs.empty()) {
        if (!std::filesystem::is_directory(directory))
            throw Error(ErrorCode::IoFailure, "cannot open " + directory.string());
        throw Error(ErrorCode::ProfileRequiresLayers, "no layer_<l>_x.csv files in " + directory.string());
    }
    return SnapshotDataset::from_pairs(std::move(xs), std::move(ys), Precision::F64, directory.string());
}

void write_dataset_csv(const SnapshotDataset& dataset, const std::filesystem::path& directory) {
    dataset.validate();
    std::filesystem::create_directories(directory);
    for (std::size_t l = 0; l < dataset.layer_count(); ++l) {
        write_csv_matrix(dataset.x(l), layer_file(directory, l, 'x'));
        write_csv_matrix(dataset.y(l), layer_file(directory, l, 'y'));
    }
}

std::vector<Eigen::Index> subsample_indices(Eigen::Index total, Eigen::Index n, std::uint64_t seed) {
    if (n <= 0) throw Error(ErrorCode::InvalidArgument, "subsample size must be positive");
    if (n > total)
        throw Error(ErrorCode::NTooLarge,
                    "requested " + std::to_string(n) + " columns from " + std::to_string(total));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) idx[i] = i;
    if (n == total) return idx;
    Rng rng(seed);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(total - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
    return idx;
}

SnapshotDataset subsample_columns(const SnapshotDataset& dataset, Eigen::Index n, std::uint64_t seed) {
    const auto idx = subsample_indices(dataset.sample_count(), n, seed);
    if (n == dataset.sample_count()) return dataset;
    SnapshotDataset out = dataset;
    for (Matrix& m : out.matrices_) m = Matrix(m(Eigen::all, idx));
    out.subsample_algorithm_ = Rng::kAlgorithmId;
    return out;
}

std::string container_format_description() {
    return R"(RKSP snapshot container, version 1 (binary, little-endian)

offset  size  field
0       4     magic "RKSP"
4       4     u32 format version (= 1)
8       4     u32 flags (bit0: stream mode, L+1 matrices h_0..h_L)
12      4     u32 L (layer transitions)
16      4     u32 d (hidden dimension)
20      4     u32 N (samples per matrix)
24      1     u8 dtype (0 = f32, 1 = f64)
25      1     u8 subsampling algorithm id (0 = none, 1 = mt19937_64 partial
              Fisher-Yates, indices sorted ascending)
26      6     reserved, zero
32      ...   matrices in layer order, each d x N column-major, no padding.
              Stream mode: h_0, h_1, ..., h_L  (pair l is (h_l, h_{l+1}))
              Pair mode:   X_0, Y_0, X_1, Y_1, ..., X_{L-1}, Y_{L-1}

Payload length must equal count * d * N * sizeof(dtype) exactly.
Columns index independent samples; column i of Y_l pairs with column i of X_l.
CSV fallback (--format csv): a directory holding layer_<l>_x.csv and
layer_<l>_y.csv, d rows by N comma-separated values each.
)";
}

}  // namespace rksp
