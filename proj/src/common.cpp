#include "rksp/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "rksp/parallel.hpp"

namespace rksp {

const char* error_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteData: return "NonFiniteData";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::ProfileRequiresLayers: return "ProfileRequiresLayers";
        case ErrorCode::NTooLarge: return "NTooLarge";
        case ErrorCode::SingularCovariance: return "SingularCovariance";
        case ErrorCode::DefectiveEigenbasis: return "DefectiveEigenbasis";
        case ErrorCode::RankTooLarge: return "RankTooLarge";
        case ErrorCode::EmptySpectrum: return "EmptySpectrum";
        case ErrorCode::PowerOverflow: return "PowerOverflow";
        case ErrorCode::SingleClassCohort: return "SingleClassCohort";
        case ErrorCode::ScoreOutOfRange: return "ScoreOutOfRange";
        case ErrorCode::DegenerateMargins: return "DegenerateMargins";
        case ErrorCode::ZeroModulus: return "ZeroModulus";
        case ErrorCode::EmptyLayerSample: return "EmptyLayerSample";
        case ErrorCode::TargetUnreachable: return "TargetUnreachable";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

bool is_validation_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::SingularCovariance:
        case ErrorCode::DefectiveEigenbasis:
        case ErrorCode::PowerOverflow:
        case ErrorCode::ZeroModulus:
        case ErrorCode::TargetUnreachable:
            return false;
        default:
            return true;
    }
}

std::size_t thread_count() {
    if (const char* env = std::getenv("RKSP_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        body(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace rksp
