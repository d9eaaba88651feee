#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rksp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

enum class ErrorCode {
    MalformedHeader,
    ShapeMismatch,
    NonFiniteData,
    IoFailure,
    ProfileRequiresLayers,
    NTooLarge,
    SingularCovariance,
    DefectiveEigenbasis,
    RankTooLarge,
    EmptySpectrum,
    PowerOverflow,
    SingleClassCohort,
    ScoreOutOfRange,
    DegenerateMargins,
    ZeroModulus,
    EmptyLayerSample,
    TargetUnreachable,
    InvalidArgument,
};

const char* error_name(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI, the Python module) can map it without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    /// Message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

/// Validation failures are user errors; the rest are numerical failures.
bool is_validation_error(ErrorCode code);

}  // namespace rksp
