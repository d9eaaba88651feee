#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "rksp/common.hpp"

namespace rksp {

/// Seeded generator with distribution code written out here rather than taken
/// from <random>: std::normal_distribution and friends are
/// implementation-defined, and every seeded result in this library has to be
/// reproducible across standard libraries. mt19937_64 itself is fully
/// specified by the standard.
class Rng {
public:
    /// Identifier written to snapshot headers for the subsampling algorithm
    /// (mt19937_64, partial Fisher-Yates, indices sorted ascending).
    static constexpr std::uint8_t kAlgorithmId = 1;

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, index); used to split work across workers.
    static Rng substream(std::uint64_t seed, std::uint64_t index) {
        return Rng(splitmix(seed ^ splitmix(index + 0x9E3779B97F4A7C15ULL)));
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    /// Standard normal via Box-Muller (one cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    Matrix gaussian(Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
        return m;
    }

    /// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
    Matrix orthogonal(Eigen::Index n) {
        Eigen::HouseholderQR<Matrix> qr(gaussian(n, n));
        Matrix q = qr.householderQ();
        const Matrix r = qr.matrixQR();
        for (Eigen::Index j = 0; j < n; ++j)
            if (r(j, j) < 0) q.col(j) = -q.col(j);
        return q;
    }

    /// Uniform point on the unit sphere in R^n.
    Vector unit_sphere(Eigen::Index n) {
        Vector v(n);
        double norm = 0.0;
        while (norm == 0.0) {
            for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
            norm = v.norm();
        }
        return v / norm;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace rksp
