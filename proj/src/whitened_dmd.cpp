#include "rksp/whitened_dmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rksp/random.hpp"

namespace rksp {

WhitenedPair whiten(const Matrix& x, const Matrix& y, double epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
        throw Error(ErrorCode::SingularCovariance, "whitening ridge must be positive and finite");
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw Error(ErrorCode::ShapeMismatch, "X and Y shapes differ");
    if (x.cols() < 2) throw Error(ErrorCode::InvalidArgument, "whitening needs N >= 2 samples");
    if (!x.allFinite() || !y.allFinite())
        throw Error(ErrorCode::SingularCovariance, "non-finite snapshot entries");

    const double n = static_cast<double>(x.cols());
    WhitenedPair out;
    out.epsilon = epsilon;
    out.x_mean = x.rowwise().mean();
    out.y_mean = y.rowwise().mean();
    const Matrix xc = x.colwise() - out.x_mean;
    const Matrix yc = y.colwise() - out.y_mean;

    Matrix cov = (xc * xc.transpose()) / (n - 1.0);
    cov.diagonal().array() += epsilon;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success)
        throw Error(ErrorCode::SingularCovariance, "covariance eigendecomposition failed");
    const Vector lambda = eig.eigenvalues().cwiseMax(epsilon);
    const Vector inv_sqrt = lambda.cwiseSqrt().cwiseInverse();
    out.whitener = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
    // Symmetrize away rounding so W is exactly symmetric.
    out.whitener = 0.5 * (out.whitener + out.whitener.transpose()).eval();
    if (!out.whitener.allFinite())
        throw Error(ErrorCode::SingularCovariance, "whitener is not finite");

    out.x = out.whitener * xc;
    out.y = out.whitener * yc;
    out.update_norm = (out.y - out.x).norm();
    return out;
}

Matrix pseudoinverse(const Matrix& m, double rtol) {
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Matrix result = Matrix::Zero(m.cols(), m.rows());
    if (s.size() == 0 || s(0) == 0.0) return result;
    const double cutoff = rtol * s(0);
    Eigen::Index keep = 0;
    while (keep < s.size() && s(keep) > cutoff) ++keep;
    result = svd.matrixV().leftCols(keep) * s.head(keep).cwiseInverse().asDiagonal() *
             svd.matrixU().leftCols(keep).transpose();
    return result;
}

void sort_spectrum(ComplexVector& values, ComplexMatrix& vectors) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const Complex& la = values(a);
        const Complex& lb = values(b);
        const double ma = std::abs(la), mb = std::abs(lb);
        if (ma != mb) return ma > mb;
        if (la.real() != lb.real()) return la.real() > lb.real();
        return la.imag() > lb.imag();
    });
    ComplexVector sorted_values(values.size());
    ComplexMatrix sorted_vectors(vectors.rows(), vectors.cols());
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        sorted_values(k) = values(order[k]);
        if (vectors.cols() == values.size()) sorted_vectors.col(k) = vectors.col(order[k]);
    }
    values = std::move(sorted_values);
    if (vectors.cols() == values.size()) vectors = std::move(sorted_vectors);
}

double condition_number(const ComplexMatrix& v, double cutoff) {
    if (v.size() == 0) return 1.0;
    Eigen::JacobiSVD<ComplexMatrix> svd(v);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    const double smin = s(s.size() - 1);
    if (!(smin >= cutoff * smax) || smin == 0.0) return kInfinity;
    return smax / smin;
}

DmdOperator decompose(const Matrix& a, const DmdOptions& options) {
    if (a.rows() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "operator must be square");
    DmdOperator op;
    op.a_hat = a;
    op.rank = a.rows();
    if (a.rows() == 0) return op;
    if (!a.allFinite()) throw Error(ErrorCode::DefectiveEigenbasis, "operator has non-finite entries");

    Eigen::EigenSolver<Matrix> eig(a, true);
    if (eig.info() != Eigen::Success)
        throw Error(ErrorCode::DefectiveEigenbasis, "eigensolver did not converge");
    ComplexVector values = eig.eigenvalues();
    ComplexMatrix vectors = eig.eigenvectors();
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        const double nrm = vectors.col(j).norm();
        if (nrm > 0.0) vectors.col(j) /= nrm;
    }
    sort_spectrum(values, vectors);
    op.eigenvalues = values;
    op.right = vectors;
    op.spectral_radius = values.cwiseAbs().maxCoeff();
    op.kappa = condition_number(op.right, options.kappa_cutoff);
    op.defective = !std::isfinite(op.kappa);
    if (!op.defective) {
        // Rows of V^{-1} are left eigenvectors: V^{-1} A = Lambda V^{-1}.
        op.left = op.right.partialPivLu().inverse();
    }
    return op;
}

DmdOperator dmd_fit(const WhitenedPair& pair, const DmdOptions& options) {
    const Matrix a = pair.y * pseudoinverse(pair.x, options.pinv_rtol);
    DmdOperator op = decompose(a, options);
    op.mode = DmdMode::Full;
    return op;
}

Matrix randomized_range(const Matrix& data, Eigen::Index rank, std::uint64_t seed) {
    const Eigen::Index d = data.rows();
    const Eigen::Index width = std::min<Eigen::Index>(rank + 8, std::min(d, data.cols()));
    Rng rng(seed);
    const Matrix sketch = rng.gaussian(data.cols(), std::max(width, rank));
    auto orthonormalize = [](const Matrix& m) {
        Eigen::HouseholderQR<Matrix> qr(m);
        return Matrix(qr.householderQ() * Matrix::Identity(m.rows(), std::min(m.rows(), m.cols())));
    };
    Matrix q = orthonormalize(data * sketch);
    for (int it = 0; it < 2; ++it) {
        const Matrix z = orthonormalize(data.transpose() * q);
        q = orthonormalize(data * z);
    }
    // Best rank-r basis inside the sketched range.
    Eigen::BDCSVD<Matrix> small(q.transpose() * data, Eigen::ComputeThinU);
    return q * small.matrixU().leftCols(rank);
}

DmdOperator randomized_dmd(const WhitenedPair& pair, Eigen::Index rank, std::uint64_t seed,
                           const DmdOptions& options) {
    const Eigen::Index d = pair.x.rows();
    const Eigen::Index n = pair.x.cols();
    if (rank <= 0) throw Error(ErrorCode::InvalidArgument, "rank must be positive");
    if (rank > std::min(d, n))
        throw Error(ErrorCode::RankTooLarge,
                    "rank " + std::to_string(rank) + " exceeds min(d, N) = " + std::to_string(std::min(d, n)));
    const Matrix q = randomized_range(pair.y, rank, seed);
    const Matrix b = (q.transpose() * pair.y) * pseudoinverse(q.transpose() * pair.x, options.pinv_rtol);
    DmdOperator op = decompose(b, options);
    op.mode = DmdMode::Randomized;
    op.basis = q;
    return op;
}

}  // namespace rksp
